//! Continuously position-measured, thermally damped harmonic oscillator
//! under P/I/PI feedback, simulated at the level of Gaussian moments.
//!
//! Second moments are feedback independent and deterministic; they are
//! tabulated once per configuration. First moments follow Itô SDEs driven
//! by the same Wiener increments that enter the measurement current.
//!
//! The free rotation p/m, −mω²x is integrated exactly and everything else
//! by Euler–Maruyama. This is the same as stepping the rotating-frame
//! quadratures X, P with Euler–Maruyama.

use std::f64::consts::PI;

use log::warn;
use serde::Serialize;

use crate::ensemble::{
    linear_slope, run_ensemble, steady_window_summary, EnsembleConfig, EnsembleStats,
    TrajectoryRecord,
};
use crate::error::{Result, SimError};
use crate::stochastic::{
    grid_align, BoxcarFilter, DelayLine, ExponentialFilter, FilterSpec, NoiseHistory, Quadrature,
    WienerSource,
};

/// Parameters of the measured oscillator (ħ = 1).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OscillatorModel {
    pub m: f64,
    pub omega: f64,
    pub gamma: f64,
    /// Mean bath occupation N.
    pub n_bath: f64,
    pub k: f64,
    pub eta: f64,
}

impl OscillatorModel {
    pub fn new(m: f64, omega: f64, gamma: f64, n_bath: f64, k: f64, eta: f64) -> Result<Self> {
        for (name, v) in [("m", m), ("omega", omega), ("k", k)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(SimError::invalid(
                    name,
                    format!("must be positive, got {v}"),
                ));
            }
        }
        for (name, v) in [("gamma", gamma), ("n_bath", n_bath)] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(SimError::invalid(
                    name,
                    format!("must be non-negative, got {v}"),
                ));
            }
        }
        if !(eta > 0.0 && eta <= 1.0) {
            return Err(SimError::invalid(
                "eta",
                format!("must lie in (0, 1], got {eta}"),
            ));
        }
        let model = OscillatorModel {
            m,
            omega,
            gamma,
            n_bath,
            k,
            eta,
        };
        if !model.is_weak_coupling() {
            warn!(
                "k = {k}, gamma = {gamma} not small against m*omega^2 = {}; period averaging and the T/4 momentum estimate degrade",
                m * omega * omega
            );
        }
        Ok(model)
    }

    /// m = ω = N = 1, γ = k = mω²/50.
    pub fn paper(eta: f64) -> Result<Self> {
        Self::new(1.0, 1.0, 0.02, 1.0, 0.02, eta)
    }

    pub fn period(&self) -> f64 {
        2.0 * PI / self.omega
    }

    pub fn m_omega(&self) -> f64 {
        self.m * self.omega
    }

    /// k, γ < 0.1·mω².
    pub fn is_weak_coupling(&self) -> bool {
        let scale = 0.1 * self.m * self.omega * self.omega;
        self.k < scale && self.gamma < scale
    }

    fn sqrt_etak(&self) -> f64 {
        (self.eta * self.k).sqrt()
    }
}

/// Second moments (V_x, V_p, C_xp).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SecondMoments {
    pub vx: f64,
    pub vp: f64,
    pub cxp: f64,
}

impl SecondMoments {
    pub const COHERENT: SecondMoments = SecondMoments {
        vx: 0.5,
        vp: 0.5,
        cxp: 0.0,
    };

    /// V_x·V_p − C_xp², at least 1/4 for a physical state.
    pub fn uncertainty_product(&self) -> f64 {
        self.vx * self.vp - self.cxp * self.cxp
    }

    fn validate(&self) -> Result<()> {
        if !(self.vx > 0.0 && self.vp > 0.0) || self.uncertainty_product() < 0.25 - 1e-9 {
            return Err(SimError::invalid(
                "second_moments",
                format!(
                    "({}, {}, {}) violates the uncertainty bound",
                    self.vx, self.vp, self.cxp
                ),
            ));
        }
        Ok(())
    }

    fn axpy(&self, a: f64, d: &SecondMoments) -> SecondMoments {
        SecondMoments {
            vx: self.vx + a * d.vx,
            vp: self.vp + a * d.vp,
            cxp: self.cxp + a * d.cxp,
        }
    }
}

/// Right-hand side of the second-moment equations.
pub fn second_moment_rates(model: &OscillatorModel, s: &SecondMoments) -> SecondMoments {
    let OscillatorModel {
        m,
        omega,
        gamma,
        n_bath,
        k,
        eta,
    } = *model;
    let thermal = gamma * (2.0 * n_bath + 1.0);
    let mw = m * omega;
    SecondMoments {
        vx: -2.0 * gamma * s.vx + thermal / mw + 2.0 * s.cxp / m - 4.0 * k * eta * s.vx * s.vx,
        vp: -2.0 * gamma * s.vp + thermal * mw
            - 2.0 * m * omega * omega * s.cxp
            - 4.0 * k * eta * s.cxp * s.cxp
            + k,
        cxp: -4.0 * gamma * s.cxp + s.vp / m
            - m * omega * omega * s.vx
            - 4.0 * k * eta * s.cxp * s.vx,
    }
}

fn rk4_moments(model: &OscillatorModel, s: &SecondMoments, dt: f64) -> SecondMoments {
    let k1 = second_moment_rates(model, s);
    let k2 = second_moment_rates(model, &s.axpy(0.5 * dt, &k1));
    let k3 = second_moment_rates(model, &s.axpy(0.5 * dt, &k2));
    let k4 = second_moment_rates(model, &s.axpy(dt, &k3));
    SecondMoments {
        vx: s.vx + dt / 6.0 * (k1.vx + 2.0 * k2.vx + 2.0 * k3.vx + k4.vx),
        vp: s.vp + dt / 6.0 * (k1.vp + 2.0 * k2.vp + 2.0 * k3.vp + k4.vp),
        cxp: s.cxp + dt / 6.0 * (k1.cxp + 2.0 * k2.cxp + 2.0 * k3.cxp + k4.cxp),
    }
}

fn rates_norm(model: &OscillatorModel, s: &SecondMoments) -> f64 {
    let r = second_moment_rates(model, s);
    r.vx.abs().max(r.vp.abs()).max(r.cxp.abs())
}

/// Fixed point of the second-moment equations, found by integrating from
/// the coherent state until the rates vanish.
pub fn second_moment_fixed_point(model: &OscillatorModel) -> Result<SecondMoments> {
    let dt = 0.02 * model.period();
    let mut s = SecondMoments::COHERENT;
    for _ in 0..10_000_000 {
        if rates_norm(model, &s) < 1e-13 {
            return Ok(s);
        }
        s = rk4_moments(model, &s, dt);
        if !s.vx.is_finite() || s.vx.abs() > 1e12 {
            break;
        }
    }
    Err(SimError::Diverged {
        time: f64::NAN,
        norm: s.vx.abs(),
    })
}

/// Second moments on the simulation grid, shared read-only by all
/// trajectories of one configuration.
#[derive(Debug, Clone, Serialize)]
pub struct SecondMomentTable {
    pub dt: f64,
    pub values: Vec<SecondMoments>,
    pub steady: SecondMoments,
    /// Whether the table itself reached the fixed point (rates < 1e−6).
    pub converged: bool,
}

impl SecondMomentTable {
    /// Value at step `n`; beyond the table the last entry is held.
    pub fn at(&self, n: usize) -> SecondMoments {
        self.values[n.min(self.values.len() - 1)]
    }
}

/// RK4 tabulation of the second moments on [0, t_final].
pub fn second_moments_evolve(
    model: &OscillatorModel,
    initial: SecondMoments,
    dt: f64,
    t_final: f64,
) -> Result<SecondMomentTable> {
    initial.validate()?;
    if !(dt > 0.0) || !(t_final >= 0.0) {
        return Err(SimError::invalid(
            "dt",
            "dt must be positive and t_final non-negative",
        ));
    }
    let n = (t_final / dt).round() as usize;
    let mut values = Vec::with_capacity(n + 1);
    let mut s = initial;
    values.push(s);
    for i in 0..n {
        s = rk4_moments(model, &s, dt);
        if !s.vx.is_finite() {
            return Err(SimError::Diverged {
                time: (i + 1) as f64 * dt,
                norm: s.vx,
            });
        }
        values.push(s);
    }
    let converged = rates_norm(model, &s) < 1e-6;
    if !converged {
        warn!("second moments still drifting at t = {t_final}");
    }
    let steady = second_moment_fixed_point(model)?;
    Ok(SecondMomentTable {
        dt,
        values,
        steady,
        converged,
    })
}

/// Target quadratures in the rotating frame, with the optional
/// compensation scale: the controller aims at (X_g/α, P_g/α).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ControlGoal {
    pub xg: f64,
    pub pg: f64,
    pub compensation_alpha: f64,
}

impl ControlGoal {
    pub fn new(xg: f64, pg: f64) -> Self {
        ControlGoal {
            xg,
            pg,
            compensation_alpha: 1.0,
        }
    }

    pub fn compensated(mut self, alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(SimError::invalid(
                "compensation_alpha",
                format!("must lie in (0, 1], got {alpha}"),
            ));
        }
        self.compensation_alpha = alpha;
        Ok(self)
    }

    /// Rotating-frame targets the controller aims at.
    pub fn aimed(&self) -> (f64, f64) {
        (
            self.xg / self.compensation_alpha,
            self.pg / self.compensation_alpha,
        )
    }
}

/// Laboratory-frame goal (x_g(t), p_g(t)) of the aimed targets.
pub fn rotating_targets(goal: &ControlGoal, model: &OscillatorModel, t: f64) -> (f64, f64) {
    let (xg, pg) = goal.aimed();
    from_rotating_frame((xg, pg), model, t)
}

/// (⟨x⟩, ⟨p⟩) → (X, P).
pub fn to_rotating_frame(means: (f64, f64), model: &OscillatorModel, t: f64) -> (f64, f64) {
    rotate_in(means, model.m_omega(), (model.omega * t).sin_cos())
}

/// (X, P) → (⟨x⟩, ⟨p⟩).
pub fn from_rotating_frame(quads: (f64, f64), model: &OscillatorModel, t: f64) -> (f64, f64) {
    rotate_out(quads, model.m_omega(), (model.omega * t).sin_cos())
}

#[inline]
fn rotate_in(v: (f64, f64), mw: f64, (s, c): (f64, f64)) -> (f64, f64) {
    (v.0 * c - v.1 * s / mw, mw * v.0 * s + v.1 * c)
}

#[inline]
fn rotate_out(v: (f64, f64), mw: f64, (s, c): (f64, f64)) -> (f64, f64) {
    (v.0 * c + v.1 * s / mw, -mw * v.0 * s + v.1 * c)
}

/// sin and cos of ωt on the step grid, shared by all trajectories.
#[derive(Debug, Clone)]
pub struct PhaseTable {
    omega: f64,
    dt: f64,
    sc: Vec<(f64, f64)>,
}

impl PhaseTable {
    pub fn new(model: &OscillatorModel, dt: f64, n_steps: usize) -> Self {
        let sc = (0..=n_steps + 1)
            .map(|n| (model.omega * n as f64 * dt).sin_cos())
            .collect();
        PhaseTable {
            omega: model.omega,
            dt,
            sc,
        }
    }

    /// (sin ωt, cos ωt) at step `n`, which may lie before the start.
    #[inline]
    pub fn at(&self, n: i64) -> (f64, f64) {
        match usize::try_from(n).ok().and_then(|i| self.sc.get(i)) {
            Some(&v) => v,
            None => (self.omega * n as f64 * self.dt).sin_cos(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GaussianMoments {
    pub mean_x: f64,
    pub mean_p: f64,
    pub vx: f64,
    pub vp: f64,
    pub cxp: f64,
}

impl GaussianMoments {
    pub fn new(mean_x: f64, mean_p: f64, second: SecondMoments) -> Self {
        GaussianMoments {
            mean_x,
            mean_p,
            vx: second.vx,
            vp: second.vp,
            cxp: second.cxp,
        }
    }

    /// Coherent state centred at rotating-frame (X, P) at t = 0.
    pub fn coherent_at(x: f64, p: f64) -> Self {
        Self::new(x, p, SecondMoments::COHERENT)
    }

    pub fn second(&self) -> SecondMoments {
        SecondMoments {
            vx: self.vx,
            vp: self.vp,
            cxp: self.cxp,
        }
    }
}

/// Advances the means one step: exact free rotation plus the lab-frame
/// increment (dx, dp) of all other terms, evaluated at the start of the
/// step. `now` and `then` are (sin, cos) of ωt at both ends.
#[inline]
fn advance(
    mw: f64,
    state: &GaussianMoments,
    inc: (f64, f64),
    now: (f64, f64),
    then: (f64, f64),
    next: SecondMoments,
) -> GaussianMoments {
    let (x, p) = rotate_in((state.mean_x, state.mean_p), mw, now);
    let (dx, dp) = rotate_in(inc, mw, now);
    let (mx, mp) = rotate_out((x + dx, p + dp), mw, then);
    GaussianMoments::new(mx, mp, next)
}

fn phases(model: &OscillatorModel, t: f64, dt: f64) -> ((f64, f64), (f64, f64)) {
    (
        (model.omega * t).sin_cos(),
        (model.omega * (t + dt)).sin_cos(),
    )
}

/// Undelayed P feedback with x and p actuation, α_p1 = 2kηC_xp,
/// α_p2 = −2kηV_x, plus the drive γ(x_g p + p_g x). The measurement noise
/// cancels exactly, so the step is deterministic.
pub fn step_xp_proportional(
    model: &OscillatorModel,
    goal: &ControlGoal,
    state: &GaussianMoments,
    table: &SecondMomentTable,
    n: usize,
) -> GaussianMoments {
    let dt = table.dt;
    let (now, then) = phases(model, n as f64 * dt, dt);
    xp_proportional_at(model, goal, state, table, n, now, then)
}

fn xp_proportional_at(
    model: &OscillatorModel,
    goal: &ControlGoal,
    state: &GaussianMoments,
    table: &SecondMomentTable,
    n: usize,
    now: (f64, f64),
    then: (f64, f64),
) -> GaussianMoments {
    let dt = table.dt;
    let mw = model.m_omega();
    let (xg, pg) = rotate_out(goal.aimed(), mw, now);
    let ke = model.k * model.eta;
    let dev = state.mean_x - xg;
    let dx = (-model.gamma * dev - 4.0 * ke * state.vx * dev) * dt;
    let dp = (model.gamma * pg - model.gamma * state.mean_p - 4.0 * ke * state.cxp * dev) * dt;
    advance(mw, state, (dx, dp), now, then, table.at(n + 1))
}

/// Which quadratures the feedback can push.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Actuation {
    /// F_1 = x and F_2 = p.
    Xp,
    /// F_1 = x only.
    XOnly,
}

/// Time-dependent feedback coefficients (α_p1, α_p2, α_i1, α_i2).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct Gains {
    pub p1: f64,
    pub p2: f64,
    pub i1: f64,
    pub i2: f64,
}

impl Gains {
    /// Noise-cancelling choices scaled by the mixing ratio: (1−θ) on the
    /// proportional and θ on the integral coefficients.
    pub fn for_strategy(
        model: &OscillatorModel,
        actuation: Actuation,
        theta: f64,
        s: &SecondMoments,
    ) -> Self {
        let ke = model.k * model.eta;
        match actuation {
            Actuation::Xp => Gains {
                p1: (1.0 - theta) * 2.0 * ke * s.cxp,
                p2: -(1.0 - theta) * 2.0 * ke * s.vx,
                i1: theta * 2.0 * ke * s.cxp,
                i2: -theta * 2.0 * ke * s.vx,
            },
            Actuation::XOnly => Gains {
                p1: -(1.0 - theta) * 2.0 * ke * s.vx * model.m_omega(),
                p2: 0.0,
                i1: theta * 4.0 * ke * s.vx,
                i2: 0.0,
            },
        }
    }
}

/// Everything the general first-moment step needs besides the state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeedbackInputs {
    pub gains: Gains,
    /// Integrated error signal J(t).
    pub j_filtered: f64,
    /// e(t − τ_P) = 2⟨x⟩(t−τ_P) + dW(t−τ_P)/(dt√(kη)) − g(t−τ_P).
    pub e_delayed: f64,
    /// Compensation drive added to d⟨x⟩/dt and d⟨p⟩/dt.
    pub drive: (f64, f64),
}

/// One step of the first-moment SDEs under general PI feedback:
/// d⟨x⟩ = ⟨p⟩/m dt − γ⟨x⟩dt + (α_i2 J + α_p2 e(t−τ_P))dt + 2√(ηk)V_x dW,
/// d⟨p⟩ = −mω²⟨x⟩dt − γ⟨p⟩dt − (α_i1 J + α_p1 e(t−τ_P))dt + 2√(ηk)C_xp dW,
/// plus the drive.
pub fn first_moment_step(
    model: &OscillatorModel,
    state: &GaussianMoments,
    fb: &FeedbackInputs,
    dw: f64,
    t: f64,
    dt: f64,
    next: SecondMoments,
) -> GaussianMoments {
    let (now, then) = phases(model, t, dt);
    first_moment_step_at(model, state, fb, dw, dt, now, then, next)
}

#[allow(clippy::too_many_arguments)]
#[inline]
fn first_moment_step_at(
    model: &OscillatorModel,
    state: &GaussianMoments,
    fb: &FeedbackInputs,
    dw: f64,
    dt: f64,
    now: (f64, f64),
    then: (f64, f64),
    next: SecondMoments,
) -> GaussianMoments {
    let g = &fb.gains;
    let noise = 2.0 * model.sqrt_etak() * dw;
    let dx = (fb.drive.0 - model.gamma * state.mean_x + g.i2 * fb.j_filtered + g.p2 * fb.e_delayed)
        * dt
        + noise * state.vx;
    let dp = (fb.drive.1 - model.gamma * state.mean_p - g.i1 * fb.j_filtered - g.p1 * fb.e_delayed)
        * dt
        + noise * state.cxp;
    advance(model.m_omega(), state, (dx, dp), now, then, next)
}

/// Integral feedback with x and p actuation, α_i1 = 2kηC_xp, α_i2 = −2kηV_x,
/// with the full damping-compensation drive.
pub fn step_xp_integral(
    model: &OscillatorModel,
    goal: &ControlGoal,
    state: &GaussianMoments,
    table: &SecondMomentTable,
    j_filtered: f64,
    dw: f64,
    n: usize,
) -> GaussianMoments {
    let dt = table.dt;
    let t = n as f64 * dt;
    let (xg, pg) = rotating_targets(goal, model, t);
    let fb = FeedbackInputs {
        gains: Gains::for_strategy(model, Actuation::Xp, 1.0, &state.second()),
        j_filtered,
        e_delayed: 0.0,
        drive: (model.gamma * xg, model.gamma * pg),
    };
    first_moment_step(model, state, &fb, dw, t, dt, table.at(n + 1))
}

/// Delayed P feedback with x actuation only, α_p1 = −2kηV_x mω, drive γp_g x.
/// `x_delayed` and `dw_delayed` are ⟨x⟩ and dW at t − τ_P.
#[allow(clippy::too_many_arguments)]
pub fn step_x_proportional_delayed(
    model: &OscillatorModel,
    goal: &ControlGoal,
    state: &GaussianMoments,
    table: &SecondMomentTable,
    x_delayed: f64,
    dw_delayed: f64,
    tau_p: f64,
    dw: f64,
    n: usize,
) -> GaussianMoments {
    let dt = table.dt;
    let t = n as f64 * dt;
    let (_, pg) = rotating_targets(goal, model, t);
    let (xg_delayed, _) = rotating_targets(goal, model, t - tau_p);
    let e_delayed = 2.0 * (x_delayed - xg_delayed) + dw_delayed / (dt * model.sqrt_etak());
    let fb = FeedbackInputs {
        gains: Gains::for_strategy(model, Actuation::XOnly, 0.0, &state.second()),
        j_filtered: 0.0,
        e_delayed,
        drive: (0.0, model.gamma * pg),
    };
    first_moment_step(model, state, &fb, dw, t, dt, table.at(n + 1))
}

/// Integral feedback with x actuation only, α_i1 = 4kηV_x, acting on the
/// momentum estimate `j_est`.
pub fn step_x_integral(
    model: &OscillatorModel,
    goal: &ControlGoal,
    state: &GaussianMoments,
    table: &SecondMomentTable,
    j_est: f64,
    dw: f64,
    n: usize,
) -> GaussianMoments {
    let dt = table.dt;
    let t = n as f64 * dt;
    let (_, pg) = rotating_targets(goal, model, t);
    let fb = FeedbackInputs {
        gains: Gains::for_strategy(model, Actuation::XOnly, 1.0, &state.second()),
        j_filtered: j_est,
        e_delayed: 0.0,
        drive: (0.0, model.gamma * pg),
    };
    first_moment_step(model, state, &fb, dw, t, dt, table.at(n + 1))
}

/// α = β ≈ (2kηV_s + γ/2)/(2kηV_s + γ), the steady shrink factor of x-only
/// strategies without compensation.
pub fn compensation_factor(model: &OscillatorModel, table: &SecondMomentTable) -> f64 {
    let a = 2.0 * model.k * model.eta * table.steady.vx;
    (a + 0.5 * model.gamma) / (a + model.gamma)
}

/// Δ = sqrt(½·E[mωX̃² + P̃²/(mω)]) over an ensemble of deviations.
pub fn error_metric(deviations: &[(f64, f64)], model: &OscillatorModel) -> Result<f64> {
    if deviations.is_empty() {
        return Err(SimError::EmptyInput);
    }
    let mw = model.m_omega();
    let mean = deviations
        .iter()
        .map(|&(x, p)| mw * x * x + p * p / mw)
        .sum::<f64>()
        / deviations.len() as f64;
    Ok((0.5 * mean).sqrt())
}

fn averaged_matrix(model: &OscillatorModel, vx: f64, cxp: f64) -> [[f64; 2]; 2] {
    let ke2 = 2.0 * model.k * model.eta;
    let mw = model.m_omega();
    let diag = -model.gamma - ke2 * vx;
    [[diag, ke2 * cxp / (mw * mw)], [-ke2 * cxp, diag]]
}

fn mat_vec(a: &[[f64; 2]; 2], z: [f64; 2]) -> [f64; 2] {
    [
        a[0][0] * z[0] + a[0][1] * z[1],
        a[1][0] * z[0] + a[1][1] * z[1],
    ]
}

/// Period-averaged deviation dynamics Ż = A(t)Z, integrated by RK4
/// jointly with the second moments starting from `table.values[0]`.
/// Returns Z on the table grid up to `t_final`.
pub fn period_averaged_reference(
    model: &OscillatorModel,
    table: &SecondMomentTable,
    z0: [f64; 2],
    t_final: f64,
) -> Vec<[f64; 2]> {
    let dt = table.dt;
    let n = (t_final / dt).round() as usize;
    let rhs = |s: &SecondMoments, z: [f64; 2]| {
        (
            second_moment_rates(model, s),
            mat_vec(&averaged_matrix(model, s.vx, s.cxp), z),
        )
    };
    let add = |s: &SecondMoments, z: [f64; 2], h: f64, ds: &SecondMoments, dz: [f64; 2]| {
        (s.axpy(h, ds), [z[0] + h * dz[0], z[1] + h * dz[1]])
    };
    let mut s = table.values[0];
    let mut z = z0;
    let mut out = Vec::with_capacity(n + 1);
    out.push(z);
    for _ in 0..n {
        let (s1, z1) = rhs(&s, z);
        let (sa, za) = add(&s, z, 0.5 * dt, &s1, z1);
        let (s2, z2) = rhs(&sa, za);
        let (sb, zb) = add(&s, z, 0.5 * dt, &s2, z2);
        let (s3, z3) = rhs(&sb, zb);
        let (sc, zc) = add(&s, z, dt, &s3, z3);
        let (s4, z4) = rhs(&sc, zc);
        for i in 0..2 {
            z[i] += dt / 6.0 * (z1[i] + 2.0 * z2[i] + 2.0 * z3[i] + z4[i]);
        }
        s = SecondMoments {
            vx: s.vx + dt / 6.0 * (s1.vx + 2.0 * s2.vx + 2.0 * s3.vx + s4.vx),
            vp: s.vp + dt / 6.0 * (s1.vp + 2.0 * s2.vp + 2.0 * s3.vp + s4.vp),
            cxp: s.cxp + dt / 6.0 * (s1.cxp + 2.0 * s2.cxp + 2.0 * s3.cxp + s4.cxp),
        };
        out.push(z);
    }
    out
}

/// Ensemble-mean deviation dynamics under delayed x&p P feedback with the
/// second moments at their fixed point: Ż(t) = −γZ(t) + A·Z(t − τ_P), with
/// Z = Z0 on [−τ_P, 0]. RK4 with linear interpolation of the history at
/// half steps. Errors if |Z| grows beyond 10^6·|Z0|.
pub fn delayed_linear_ode_steady(
    model: &OscillatorModel,
    steady: &SecondMoments,
    tau_p: f64,
    z0: [f64; 2],
    dt: f64,
    t_final: f64,
) -> Result<Vec<[f64; 2]>> {
    let lag = grid_align("tau_p", tau_p, dt)?.steps;
    let tau = lag as f64 * dt;
    let ke2 = 2.0 * model.k * model.eta;
    let mw = model.m_omega();
    let (s, c) = (model.omega * tau).sin_cos();
    let (v, cs) = (steady.vx, steady.cxp);
    let a = [
        [
            -ke2 * (v * c - cs * s / mw),
            ke2 * (v * s / mw + cs * c / (mw * mw)),
        ],
        [-ke2 * (mw * v * s + cs * c), -ke2 * (v * c - cs * s / mw)],
    ];
    let g = model.gamma;
    let n = (t_final / dt).round() as usize;
    let mut zs: Vec<[f64; 2]> = Vec::with_capacity(n + 1);
    zs.push(z0);
    let past = |zs: &Vec<[f64; 2]>, i: usize, frac: f64| -> [f64; 2] {
        // Z at step (i − lag + frac), frozen at Z0 before the start.
        if i < lag {
            return z0;
        }
        let j = i - lag;
        if frac == 0.0 || j + 1 >= zs.len() {
            return zs[j];
        }
        let (p, q) = (zs[j], zs[j + 1]);
        [p[0] + frac * (q[0] - p[0]), p[1] + frac * (q[1] - p[1])]
    };
    let f = |z: [f64; 2], zd: [f64; 2]| {
        let az = mat_vec(&a, zd);
        [-g * z[0] + az[0], -g * z[1] + az[1]]
    };
    let scale = z0[0].hypot(z0[1]).max(1e-300);
    for i in 0..n {
        let z = zs[i];
        let (d0, dh, d1) = if lag == 0 {
            (None, None, None)
        } else {
            (
                Some(past(&zs, i, 0.0)),
                Some(past(&zs, i, 0.5)),
                Some(past(&zs, i + 1, 0.0)),
            )
        };
        let k1 = f(z, d0.unwrap_or(z));
        let za = [z[0] + 0.5 * dt * k1[0], z[1] + 0.5 * dt * k1[1]];
        let k2 = f(za, dh.unwrap_or(za));
        let zb = [z[0] + 0.5 * dt * k2[0], z[1] + 0.5 * dt * k2[1]];
        let k3 = f(zb, dh.unwrap_or(zb));
        let zc = [z[0] + dt * k3[0], z[1] + dt * k3[1]];
        let k4 = f(zc, d1.unwrap_or(zc));
        let next = [
            z[0] + dt / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
            z[1] + dt / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
        ];
        let norm = next[0].hypot(next[1]);
        if !norm.is_finite() || norm > 1e6 * scale {
            return Err(SimError::Diverged {
                time: (i + 1) as f64 * dt,
                norm,
            });
        }
        zs.push(next);
    }
    Ok(zs)
}

/// How the targets are rescaled to undo the steady damping bias.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Compensation {
    /// α from [`compensation_factor`] for x-only actuation, none for x&p.
    Auto,
    Off,
    Value(f64),
}

/// Feedback law of one oscillator run: θ = 0 is pure P, θ = 1 pure I.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OscillatorControl {
    pub actuation: Actuation,
    pub theta: f64,
    /// Grid-aligned P delay.
    pub tau_p: f64,
    /// Grid-aligned I window.
    pub tau_i: f64,
    pub delay_steps: usize,
    pub window_steps: usize,
    /// Constant gains replacing the noise-cancelling choice.
    pub fixed_gains: Option<Gains>,
}

impl OscillatorControl {
    pub fn new(actuation: Actuation, theta: f64, tau_p: f64, tau_i: f64, dt: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&theta) {
            return Err(SimError::invalid(
                "theta",
                format!("must lie in [0, 1], got {theta}"),
            ));
        }
        let p = grid_align("tau_p", tau_p, dt)?;
        let i = grid_align("tau_i", tau_i, dt)?;
        if theta > 0.0 && i.steps == 0 {
            return Err(SimError::invalid(
                "tau_i",
                "integral feedback needs tau_i >= dt",
            ));
        }
        Ok(OscillatorControl {
            actuation,
            theta,
            tau_p: p.effective,
            tau_i: i.effective,
            delay_steps: p.steps,
            window_steps: i.steps,
            fixed_gains: None,
        })
    }

    /// Uses `gains` at every step. x-only actuation cannot push ⟨x⟩, so
    /// α_p2 and α_i2 must vanish there.
    pub fn with_fixed_gains(mut self, gains: Gains) -> Result<Self> {
        if self.actuation == Actuation::XOnly && (gains.p2 != 0.0 || gains.i2 != 0.0) {
            return Err(SimError::invalid(
                "alpha_p2",
                "x-only actuation has no alpha_p2/alpha_i2 channel",
            ));
        }
        if (gains.i1 != 0.0 || gains.i2 != 0.0) && self.window_steps == 0 {
            return Err(SimError::invalid(
                "tau_i",
                "integral gains need tau_i >= dt",
            ));
        }
        self.fixed_gains = Some(gains);
        Ok(self)
    }

    fn uses_proportional(&self) -> bool {
        match self.fixed_gains {
            Some(g) => g.p1 != 0.0 || g.p2 != 0.0,
            None => self.theta < 1.0,
        }
    }

    fn uses_integral(&self) -> bool {
        match self.fixed_gains {
            Some(g) => g.i1 != 0.0 || g.i2 != 0.0,
            None => self.theta > 0.0,
        }
    }

    pub fn proportional(actuation: Actuation, tau_p: f64, dt: f64) -> Result<Self> {
        Self::new(actuation, 0.0, tau_p, 0.0, dt)
    }

    pub fn integral(actuation: Actuation, tau_i: f64, dt: f64) -> Result<Self> {
        Self::new(actuation, 1.0, 0.0, tau_i, dt)
    }

    /// Undelayed P with x&p actuation, whose means evolve deterministically.
    pub fn is_deterministic(&self) -> bool {
        self.actuation == Actuation::Xp
            && self.theta == 0.0
            && self.delay_steps == 0
            && self.fixed_gains.is_none()
    }
}

/// Columns recorded per output time: rotating-frame quadratures, laboratory
/// means, and mωX̃² + P̃²/(mω) for the error metric.
pub const OBSERVABLES: [&str; 5] = ["X", "P", "x", "p", "dev2"];

#[derive(Debug, Clone)]
pub struct OscillatorRun {
    pub model: OscillatorModel,
    pub control: OscillatorControl,
    pub goal: ControlGoal,
    /// Rotating-frame starting quadratures (equal to the lab means at t = 0).
    pub start: (f64, f64),
    pub initial_second: SecondMoments,
}

impl OscillatorRun {
    /// Coherent start at (X, P) = (10, 10mω), true target (6, 4mω);
    /// compensation resolved per `comp`.
    pub fn new(
        model: OscillatorModel,
        control: OscillatorControl,
        goal: ControlGoal,
        comp: Compensation,
        table: &SecondMomentTable,
    ) -> Result<Self> {
        let alpha = match (comp, control.actuation) {
            (Compensation::Off, _) | (Compensation::Auto, Actuation::Xp) => 1.0,
            (Compensation::Auto, Actuation::XOnly) => compensation_factor(&model, table),
            (Compensation::Value(a), _) => a,
        };
        let mw = model.m_omega();
        Ok(OscillatorRun {
            model,
            control,
            goal: ControlGoal::new(goal.xg, goal.pg).compensated(alpha)?,
            start: (10.0, 10.0 * mw),
            initial_second: SecondMoments::COHERENT,
        })
    }

    pub fn with_start(mut self, x: f64, p: f64) -> Self {
        self.start = (x, p);
        self
    }

    /// One trajectory on the grid of `table`, which must cover t_final.
    pub fn trajectory(
        &self,
        table: &SecondMomentTable,
        ens: &EnsembleConfig,
        seed: u64,
    ) -> Result<TrajectoryRecord> {
        let phases = PhaseTable::new(&self.model, ens.dt, ens.n_steps());
        self.trajectory_with(table, &phases, ens, seed)
    }

    /// [`Self::trajectory`] with a precomputed phase table.
    pub fn trajectory_with(
        &self,
        table: &SecondMomentTable,
        phases: &PhaseTable,
        ens: &EnsembleConfig,
        seed: u64,
    ) -> Result<TrajectoryRecord> {
        let dt = ens.dt;
        if (table.dt - dt).abs() > 1e-12 * dt || (phases.dt - dt).abs() > 1e-12 * dt {
            return Err(SimError::invalid(
                "dt",
                "precomputed tables use a different grid than the ensemble",
            ));
        }
        let model = &self.model;
        let ctrl = &self.control;
        let mw = model.m_omega();
        let n_steps = ens.n_steps();
        let mut rec = TrajectoryRecord::with_capacity(OBSERVABLES.len(), ens.n_outputs());
        let (x0, p0) = from_rotating_frame(self.start, model, 0.0);
        let mut st = GaussianMoments::new(x0, p0, table.at(0));
        let row = |st: &GaussianMoments, sc: (f64, f64)| {
            let (x, p) = rotate_in((st.mean_x, st.mean_p), mw, sc);
            let (dx, dp) = (x - self.goal.xg, p - self.goal.pg);
            [x, p, st.mean_x, st.mean_p, mw * dx * dx + dp * dp / mw]
        };

        if ctrl.is_deterministic() {
            for n in 0..=n_steps {
                let now = phases.at(n as i64);
                if n % ens.output_stride == 0 {
                    rec.push_row(&row(&st, now));
                }
                if n < n_steps {
                    st = xp_proportional_at(
                        model,
                        &self.goal,
                        &st,
                        table,
                        n,
                        now,
                        phases.at(n as i64 + 1),
                    );
                }
            }
            return Ok(rec);
        }

        let uses_p = ctrl.uses_proportional();
        let uses_i = ctrl.uses_integral();
        let lag = ctrl.delay_steps.max(ctrl.window_steps);
        let mut hist = NoiseHistory::new(dt, lag);
        let mut x_line = DelayLine::new(ctrl.delay_steps + 1, x0);
        let current_scale = 1.0 / (dt * model.sqrt_etak());
        let aimed = self.goal.aimed();
        let (d, w) = (ctrl.delay_steps as i64, ctrl.window_steps as i64);
        let gain = dt / ctrl.tau_i.max(f64::MIN_POSITIVE);

        enum Filter {
            None,
            Exp(ExponentialFilter),
            Quadratures(BoxcarFilter, BoxcarFilter),
        }
        let mut filter = match (uses_i, ctrl.actuation) {
            (false, _) => Filter::None,
            (true, Actuation::Xp) => Filter::Exp(ExponentialFilter::new(&FilterSpec::exponential(
                ctrl.tau_i, dt,
            )?)),
            (true, Actuation::XOnly) => Filter::Quadratures(
                BoxcarFilter::new(&FilterSpec::modulated(
                    ctrl.tau_i,
                    dt,
                    model.omega,
                    Quadrature::Cos,
                    1.0,
                )?),
                BoxcarFilter::new(&FilterSpec::modulated(
                    ctrl.tau_i,
                    dt,
                    model.omega,
                    Quadrature::Sin,
                    mw,
                )?),
            ),
        };

        let mut noise = WienerSource::from_seed(seed);
        for n in 0..=n_steps {
            let now = phases.at(n as i64);
            if n % ens.output_stride == 0 {
                rec.push_row(&row(&st, now));
            }
            if n == n_steps {
                break;
            }
            // J from samples before this step.
            let j_filtered = match &filter {
                Filter::None => 0.0,
                Filter::Exp(f) => f.value(),
                Filter::Quadratures(cx, sp) => -mw * cx.value() * now.0 + sp.value() * now.1,
            };
            let dw = noise.sample_increment(dt);
            let (xg, pg) = rotate_out(aimed, mw, now);
            let e = 2.0 * (st.mean_x - xg) + dw * current_scale;
            hist.push(dw, e);
            x_line.push(st.mean_x);
            match &mut filter {
                Filter::None => {}
                Filter::Exp(f) => {
                    f.update(&hist)?;
                }
                Filter::Quadratures(cx, sp) => {
                    let old = phases.at(n as i64 - w);
                    cx.update_weighted(&hist, gain * now.1, gain * old.1)?;
                    sp.update_weighted(&hist, gain * mw * now.0, gain * mw * old.0)?;
                }
            }
            let e_delayed = if uses_p {
                let (xg_d, _) = rotate_out(aimed, mw, phases.at(n as i64 - d));
                2.0 * (x_line.lag(ctrl.delay_steps)? - xg_d)
                    + hist.increment_at_lag(ctrl.delay_steps)? * current_scale
            } else {
                0.0
            };
            let drive = match ctrl.actuation {
                Actuation::Xp => (model.gamma * xg, model.gamma * pg),
                Actuation::XOnly => (0.0, model.gamma * pg),
            };
            let fb = FeedbackInputs {
                gains: ctrl.fixed_gains.unwrap_or_else(|| {
                    Gains::for_strategy(model, ctrl.actuation, ctrl.theta, &st.second())
                }),
                j_filtered,
                e_delayed,
                drive,
            };
            st = first_moment_step_at(
                model,
                &st,
                &fb,
                dw,
                dt,
                now,
                phases.at(n as i64 + 1),
                table.at(n + 1),
            );
            if !(st.mean_x.is_finite() && st.mean_p.is_finite()) || st.mean_x.abs() > 1e8 {
                return Err(SimError::Diverged {
                    time: (n + 1) as f64 * dt,
                    norm: st.mean_x.abs().max(st.mean_p.abs()),
                });
            }
        }
        Ok(rec)
    }
}

/// Steady-state summary of an oscillator ensemble.
#[derive(Debug, Clone, Serialize)]
pub struct OscillatorSummary {
    pub window: (f64, f64),
    pub mean_x: f64,
    pub mean_p: f64,
    /// max(|E X − X_g|, |E P − P_g|) over the window means.
    pub bias: f64,
    /// Largest per-time std of X or P over the window.
    pub max_std: f64,
    pub max_std_x: f64,
    pub max_std_p: f64,
    /// Δ from the window average of E[mωX̃² + P̃²/(mω)].
    pub delta: f64,
    pub delta_sem: f64,
    /// Largest |slope| of the ensemble means over the window.
    pub drift: f64,
    pub drift_ok: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct OscillatorStats {
    pub stats: EnsembleStats,
    pub summary: OscillatorSummary,
    pub compensation_alpha: f64,
}

/// Largest drift slope tolerated in the steady window, per unit time.
pub const DRIFT_TOL: f64 = 1e-3;

pub fn summarize(stats: &EnsembleStats, goal: &ControlGoal) -> Result<OscillatorSummary> {
    let last = stats.times.last().copied().ok_or(SimError::EmptyInput)?;
    let window = (stats.window.0, stats.window.1.min(last));
    let sums = steady_window_summary(stats, window)?;
    let get = |name: &str| {
        sums.iter()
            .find(|s| s.name == name)
            .ok_or_else(|| SimError::invalid("observable", format!("no series named {name}")))
    };
    let (sx, sp) = (get("X")?, get("P")?);
    let dev = stats.series("dev2")?;
    let delta = (0.5 * dev.window_mean).sqrt();
    let delta_sem = if delta > 0.0 {
        dev.window_sem / (4.0 * delta)
    } else {
        0.0
    };

    let eps = 1e-9 * stats.times.last().copied().unwrap_or(1.0).max(1.0);
    let idx: Vec<usize> = (0..stats.times.len())
        .filter(|&i| stats.times[i] >= window.0 - eps && stats.times[i] <= window.1 + eps)
        .collect();
    let ts: Vec<f64> = idx.iter().map(|&i| stats.times[i]).collect();
    let slope = |name: &str| -> Result<f64> {
        let s = stats.series(name)?;
        let ys: Vec<f64> = idx.iter().map(|&i| s.mean[i]).collect();
        Ok(linear_slope(&ts, &ys).abs())
    };
    let drift = slope("X")?.max(slope("P")?);
    if drift >= DRIFT_TOL {
        warn!("ensemble means still drifting in the steady window (slope {drift:.2e})");
    }
    Ok(OscillatorSummary {
        window,
        mean_x: sx.mean,
        mean_p: sp.mean,
        bias: (sx.mean - goal.xg).abs().max((sp.mean - goal.pg).abs()),
        max_std: sx.max_std.max(sp.max_std),
        max_std_x: sx.max_std,
        max_std_p: sp.max_std,
        delta,
        delta_sem,
        drift,
        drift_ok: drift < DRIFT_TOL,
    })
}

/// Builds the shared second-moment table and runs the ensemble.
pub fn run_oscillator_ensemble(
    run: &OscillatorRun,
    table: &SecondMomentTable,
    ens: &EnsembleConfig,
) -> Result<OscillatorStats> {
    let phases = PhaseTable::new(&run.model, ens.dt, ens.n_steps());
    let stats = run_ensemble(&OBSERVABLES, ens, |_, seed| {
        run.trajectory_with(table, &phases, ens, seed)
    })?;
    let summary = summarize(&stats, &run.goal)?;
    Ok(OscillatorStats {
        stats,
        summary,
        compensation_alpha: run.goal.compensation_alpha,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn paper() -> OscillatorModel {
        OscillatorModel::paper(0.4).unwrap()
    }

    #[test]
    fn closed_system_keeps_uncertainty_product() {
        let m = OscillatorModel::new(1.0, 1.0, 0.0, 1.0, 1e-300, 0.4).unwrap();
        let tab = second_moments_evolve(&m, SecondMoments::COHERENT, 0.01, 20.0).unwrap();
        for s in &tab.values {
            assert_abs_diff_eq!(s.uncertainty_product(), 0.25, epsilon = 1e-10);
        }
    }

    #[test]
    fn paper_fixed_point_and_compensation() {
        let m = paper();
        let tab =
            second_moments_evolve(&m, SecondMoments::COHERENT, m.period() / 250.0, 400.0).unwrap();
        assert!(
            (tab.steady.vx - 1.186).abs() < 0.01 * 1.186,
            "{:?}",
            tab.steady
        );
        let alpha = compensation_factor(&m, &tab);
        assert!((alpha - 0.7434).abs() < 5e-4, "{alpha}");
        assert!(tab
            .values
            .iter()
            .all(|s| s.uncertainty_product() >= 0.25 - 1e-9));
    }

    #[test]
    fn compensation_without_damping_is_one() {
        let m = OscillatorModel::new(1.0, 1.0, 0.0, 1.0, 0.02, 0.4).unwrap();
        let tab = second_moments_evolve(&m, SecondMoments::COHERENT, 0.05, 10.0).unwrap();
        assert_abs_diff_eq!(compensation_factor(&m, &tab), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn frame_examples() {
        let m = paper();
        let g = ControlGoal::new(6.0, 4.0);
        assert_eq!(rotating_targets(&g, &m, 0.0), (6.0, 4.0));
        let (x, p) = rotating_targets(&g, &m, PI / 2.0);
        assert_abs_diff_eq!(x, 4.0, epsilon = 1e-12);
        assert_abs_diff_eq!(p, -6.0, epsilon = 1e-12);
        let zero = ControlGoal::new(0.0, 0.0);
        assert_eq!(rotating_targets(&zero, &m, 3.7), (0.0, 0.0));
        let (a, b) = to_rotating_frame((1.5, -0.5), &m, m.period());
        assert_abs_diff_eq!(a, 1.5, epsilon = 1e-12);
        assert_abs_diff_eq!(b, -0.5, epsilon = 1e-12);
    }

    #[test]
    fn error_metric_examples() {
        let m = paper();
        assert_eq!(error_metric(&[(0.0, 0.0)], &m).unwrap(), 0.0);
        assert_abs_diff_eq!(
            error_metric(&[(1.0, 0.0)], &m).unwrap(),
            0.5f64.sqrt(),
            epsilon = 1e-15
        );
        assert!(error_metric(&[], &m).is_err());
    }

    #[test]
    fn on_target_orbit_stays_there() {
        let m = paper();
        let dt = m.period() / 250.0;
        let tab = second_moments_evolve(&m, SecondMoments::COHERENT, dt, 50.0).unwrap();
        let g = ControlGoal::new(6.0, 4.0);
        let mut st = GaussianMoments::new(6.0, 4.0, tab.at(0));
        for n in 0..2000 {
            st = step_xp_proportional(&m, &g, &st, &tab, n);
        }
        let t = 2000.0 * dt;
        let (x, p) = to_rotating_frame((st.mean_x, st.mean_p), &m, t);
        assert_abs_diff_eq!(x, 6.0, epsilon = 1e-10);
        assert_abs_diff_eq!(p, 4.0, epsilon = 1e-10);
    }

    #[test]
    fn quiet_integral_step_is_damped_rotation() {
        let m = OscillatorModel::new(1.0, 1.0, 0.02, 1.0, 0.02, 0.4).unwrap();
        let dt = 0.01;
        let tab = second_moments_evolve(&m, SecondMoments::COHERENT, dt, 1.0).unwrap();
        let g = ControlGoal::new(0.0, 0.0);
        let st = GaussianMoments::new(1.0, 0.0, tab.at(0));
        let next = step_x_integral(&m, &g, &st, &tab, 0.0, 0.0, 0);
        let (x, p) = to_rotating_frame((next.mean_x, next.mean_p), &m, dt);
        assert_abs_diff_eq!(x, 1.0 - 0.02 * dt, epsilon = 1e-14);
        assert_abs_diff_eq!(p, 0.0, epsilon = 1e-14);
        let next = step_xp_integral(&m, &g, &st, &tab, 0.0, 0.0, 0);
        let (x, _) = to_rotating_frame((next.mean_x, next.mean_p), &m, dt);
        assert_abs_diff_eq!(x, 1.0 - 0.02 * dt, epsilon = 1e-14);
    }

    #[test]
    fn averaged_reference_norm_follows_quadrature() {
        // For mω = 1, A(t) is a scaled rotation, so |Z| decays at exactly
        // γ + 2kηV_x(t).
        let m = paper();
        let dt = 0.01;
        let tab = second_moments_evolve(&m, SecondMoments::COHERENT, dt, 50.0).unwrap();
        let z = period_averaged_reference(&m, &tab, [0.0, 0.0], 1.0);
        assert!(z.iter().all(|v| v == &[0.0, 0.0]));
        let z = period_averaged_reference(&m, &tab, [3.0, -4.0], 50.0);
        let rates: Vec<f64> = tab
            .values
            .iter()
            .map(|s| m.gamma + 2.0 * m.k * m.eta * s.vx)
            .collect();
        let mut integral = 0.0;
        for (i, zi) in z.iter().enumerate().skip(1) {
            integral += 0.5 * dt * (rates[i - 1] + rates[i]);
            assert_abs_diff_eq!(zi[0].hypot(zi[1]), 5.0 * (-integral).exp(), epsilon = 1e-6);
        }
    }

    #[test]
    fn delay_ode_cases() {
        let m = paper();
        let s = second_moment_fixed_point(&m).unwrap();
        let z = delayed_linear_ode_steady(&m, &s, 0.0, [0.0, 0.0], 0.05, 10.0).unwrap();
        assert!(z.iter().all(|v| v == &[0.0, 0.0]));
        let t = m.period();
        let z = delayed_linear_ode_steady(&m, &s, 0.1 * t, [-4.0, -6.0], t / 500.0, 400.0).unwrap();
        let last = z.last().unwrap();
        assert!(last[0].hypot(last[1]) < 1e-3, "{last:?}");
    }

    #[test]
    fn deterministic_run_ignores_seed() {
        let m = paper();
        let dt = m.period() / 250.0;
        let tab = second_moments_evolve(&m, SecondMoments::COHERENT, dt, 20.0).unwrap();
        let ctrl = OscillatorControl::proportional(Actuation::Xp, 0.0, dt).unwrap();
        let run = OscillatorRun::new(
            m,
            ctrl,
            ControlGoal::new(6.0, 4.0),
            Compensation::Auto,
            &tab,
        )
        .unwrap();
        let ens = EnsembleConfig::new(1, 0, dt, 20.0, 5);
        let a = run.trajectory(&tab, &ens, 1).unwrap();
        let b = run.trajectory(&tab, &ens, 99).unwrap();
        assert_eq!(a.samples, b.samples);
    }

    #[test]
    fn fixed_gains_at_the_fixed_point_match_the_strategy() {
        let m = paper();
        let dt = m.period() / 250.0;
        let steady = second_moment_fixed_point(&m).unwrap();
        let tab = second_moments_evolve(&m, steady, dt, 30.0).unwrap();
        let base =
            OscillatorControl::new(Actuation::Xp, 0.5, 0.1 * m.period(), 0.5 * m.period(), dt)
                .unwrap();
        let fixed = base
            .with_fixed_gains(Gains::for_strategy(&m, Actuation::Xp, 0.5, &steady))
            .unwrap();
        let ens = EnsembleConfig::new(1, 0, dt, 30.0, 5);
        let goal = ControlGoal::new(6.0, 4.0);
        let a = OscillatorRun::new(m, base, goal, Compensation::Off, &tab)
            .unwrap()
            .trajectory(&tab, &ens, 3)
            .unwrap();
        let b = OscillatorRun::new(m, fixed, goal, Compensation::Off, &tab)
            .unwrap()
            .trajectory(&tab, &ens, 3)
            .unwrap();
        for (x, y) in a.samples.iter().zip(&b.samples) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-8);
        }
    }

    #[test]
    fn x_only_rejects_position_gains() {
        let dt = paper().period() / 250.0;
        let c = OscillatorControl::proportional(Actuation::XOnly, 1.0, dt).unwrap();
        assert!(c
            .with_fixed_gains(Gains {
                p2: 0.1,
                ..Gains::default()
            })
            .is_err());
        assert!(c
            .with_fixed_gains(Gains {
                p1: 0.1,
                ..Gains::default()
            })
            .is_ok());
        assert!(c
            .with_fixed_gains(Gains {
                i1: 0.1,
                ..Gains::default()
            })
            .is_err());
    }
}
