//! Error signal, PI coefficients and the scalar feedback amplitude.

use serde::Serialize;

use crate::error::{Result, SimError};
use crate::stochastic::{grid_align, NoiseHistory};

/// e(t) = j(t) − g(t).
pub fn error_signal(j: f64, g: f64) -> f64 {
    j - g
}

/// A coefficient that is either constant or tabulated on the step grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Schedule {
    Constant(f64),
    PerStep(Vec<f64>),
}

impl Schedule {
    /// Value at step `n`. Past the end of a table the last entry is held.
    pub fn at(&self, n: usize) -> f64 {
        match self {
            Schedule::Constant(v) => *v,
            Schedule::PerStep(v) => v.get(n).or(v.last()).copied().unwrap_or(0.0),
        }
    }

    fn validate(&self, name: &'static str) -> Result<()> {
        let bad = match self {
            Schedule::Constant(v) => !v.is_finite(),
            Schedule::PerStep(v) => v.is_empty() || v.iter().any(|x| !x.is_finite()),
        };
        if bad {
            return Err(SimError::invalid(
                name,
                "coefficient must be finite and non-empty",
            ));
        }
        Ok(())
    }
}

impl From<f64> for Schedule {
    fn from(v: f64) -> Self {
        Schedule::Constant(v)
    }
}

/// Setpoint g(t) of the error signal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Goal {
    Constant(f64),
    /// 2·x_g(t) for a rotating oscillator target, x_g = X cos ωt + P sin ωt/(mω).
    Rotating {
        x: f64,
        p: f64,
        m: f64,
        omega: f64,
    },
}

impl Goal {
    pub fn at(&self, t: f64) -> f64 {
        match *self {
            Goal::Constant(g) => g,
            Goal::Rotating { x, p, m, omega } => {
                let (s, c) = (omega * t).sin_cos();
                2.0 * (x * c + p * s / (m * omega))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PIController {
    pub alpha_p: Schedule,
    pub alpha_i: Schedule,
    /// Grid-aligned P delay.
    pub tau_p: f64,
    /// Grid-aligned I window.
    pub tau_i: f64,
    pub delay_steps: usize,
    pub window_steps: usize,
    /// Mixing ratio, when constructed from one.
    pub theta: Option<f64>,
    pub f_pi: Option<f64>,
    pub goal: Goal,
}

impl PIController {
    pub fn new(
        alpha_p: impl Into<Schedule>,
        alpha_i: impl Into<Schedule>,
        tau_p: f64,
        tau_i: f64,
        dt: f64,
    ) -> Result<Self> {
        let (alpha_p, alpha_i) = (alpha_p.into(), alpha_i.into());
        alpha_p.validate("alpha_p")?;
        alpha_i.validate("alpha_i")?;
        let p = grid_align("tau_p", tau_p, dt)?;
        let i = grid_align("tau_i", tau_i, dt)?;
        if i.steps == 0 && alpha_i != Schedule::Constant(0.0) {
            return Err(SimError::invalid(
                "tau_i",
                "integral feedback needs tau_i >= dt",
            ));
        }
        Ok(PIController {
            alpha_p,
            alpha_i,
            tau_p: p.effective,
            tau_i: i.effective,
            delay_steps: p.steps,
            window_steps: i.steps,
            theta: None,
            f_pi: None,
            goal: Goal::Constant(0.0),
        })
    }

    /// α_p = (1−θ)f, α_i = θf.
    pub fn mixed(theta: f64, f_pi: f64, tau_p: f64, tau_i: f64, dt: f64) -> Result<Self> {
        let (ap, ai) = from_mixing(theta, f_pi)?;
        let mut c = Self::new(ap, ai, tau_p, tau_i, dt)?;
        c.theta = Some(theta);
        c.f_pi = Some(f_pi);
        Ok(c)
    }

    pub fn with_goal(mut self, goal: Goal) -> Self {
        self.goal = goal;
        self
    }

    pub fn is_delayed(&self) -> bool {
        self.delay_steps > 0
    }

    pub fn has_integral(&self) -> bool {
        self.alpha_i != Schedule::Constant(0.0)
    }

    /// History depth needed to serve both the delay and the filter window.
    pub fn history_lag(&self) -> usize {
        self.delay_steps.max(self.window_steps)
    }
}

/// ((1−θ)f, θf).
pub fn from_mixing(theta: f64, f_pi: f64) -> Result<(f64, f64)> {
    if !(0.0..=1.0).contains(&theta) {
        return Err(SimError::invalid(
            "theta",
            format!("must lie in [0, 1], got {theta}"),
        ));
    }
    if !(f_pi >= 0.0) || !f_pi.is_finite() {
        return Err(SimError::invalid(
            "f_pi",
            format!("must be non-negative, got {f_pi}"),
        ));
    }
    let alpha_i = theta * f_pi;
    Ok((f_pi - alpha_i, alpha_i))
}

/// α_p(t)·e(t−τ_P) + α_i(t)·J(t) at step `n`, reading the delayed error
/// from `hist`.
pub fn feedback_amplitude(
    ctrl: &PIController,
    hist: &NoiseHistory,
    j_filtered: f64,
    n: usize,
) -> Result<f64> {
    let ap = ctrl.alpha_p.at(n);
    let p_term = if ap == 0.0 || hist.is_empty() {
        0.0
    } else {
        ap * hist.error_at_lag(ctrl.delay_steps)?
    };
    Ok(p_term + ctrl.alpha_i.at(n) * j_filtered)
}
