use std::collections::BTreeMap;

use log::info;
use serde::Serialize;

use crate::config::{
    ActuationKind, ExperimentConfig, Feedback, RawConfig, SystemConfig, SystemKind,
};
use crate::error::CliError;
use crate::output::sig9;
use crate::run::{run_experiment, Summary};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    Theta,
    TauI,
    TauP,
    Eta,
    Epsilon,
}

impl Axis {
    pub fn parse(s: &str) -> Result<Self, CliError> {
        match s {
            "theta" => Ok(Axis::Theta),
            "tau_i" => Ok(Axis::TauI),
            "tau_p" => Ok(Axis::TauP),
            "eta" => Ok(Axis::Eta),
            "epsilon" => Ok(Axis::Epsilon),
            _ => Err(CliError::Config(format!(
                "unknown sweep axis `{s}` (theta, tau_i, tau_p, eta or epsilon)"
            ))),
        }
    }

    pub fn key(self) -> &'static str {
        match self {
            Axis::Theta => "theta",
            Axis::TauI => "tau_i",
            Axis::TauP => "tau_p",
            Axis::Eta => "eta",
            Axis::Epsilon => "epsilon",
        }
    }

    /// Rejects axes that have no effect on the given run.
    fn check(self, cfg: &ExperimentConfig) -> Result<(), CliError> {
        let fb = cfg.controller.feedback;
        let bad = |why: &str| {
            Err(CliError::Config(format!(
                "cannot sweep {} {why}",
                self.key()
            )))
        };
        match self {
            Axis::Theta if fb != Feedback::PI => bad(&format!("with {fb:?} feedback (needs PI)")),
            Axis::Theta if cfg.kind() == SystemKind::TwoQubit && cfg.controller.f_pi.is_none() => {
                bad("when the gains are given as alpha_p/alpha_i (use theta and f_pi)")
            }
            Axis::TauI if fb == Feedback::P => bad("with P feedback"),
            Axis::TauP if fb == Feedback::I => bad("with I feedback"),
            Axis::Epsilon if cfg.controller.actuation != Some(ActuationKind::XOnly) => {
                bad("without x_only oscillator actuation")
            }
            _ => Ok(()),
        }
    }

    fn value_of(self, cfg: &ExperimentConfig) -> f64 {
        let c = &cfg.controller;
        match self {
            Axis::Theta => c.theta.unwrap_or(f64::NAN),
            Axis::TauI => c.tau_i,
            Axis::TauP => c.tau_p,
            Axis::Epsilon => c.epsilon,
            Axis::Eta => match &cfg.system {
                SystemConfig::TwoQubit(s) => s.eta,
                SystemConfig::Oscillator(s) => s.eta,
            },
        }
    }
}

pub fn parse_feedback(s: &str) -> Result<Feedback, CliError> {
    match s.trim() {
        "P" => Ok(Feedback::P),
        "I" => Ok(Feedback::I),
        "PI" => Ok(Feedback::PI),
        other => Err(CliError::Config(format!(
            "unknown strategy `{other}` (P, I or PI)"
        ))),
    }
}

/// Switches the raw config to another strategy while keeping its
/// parameters: θ/f_PI configs move θ to 0 or 1, α configs drop the unused
/// gain.
fn with_strategy(raw: &RawConfig, fb: Feedback) -> RawConfig {
    let mut r = raw.clone();
    r.set("feedback", format!("{fb:?}"));
    let theta_form = r.has("f_pi") || (r.get("system") == Some("oscillator"));
    match fb {
        Feedback::PI => {}
        Feedback::P if theta_form => r.remove("theta"),
        Feedback::I if theta_form => r.remove("theta"),
        Feedback::P => r.remove("alpha_i"),
        Feedback::I => r.remove("alpha_p"),
    }
    r
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub strategy: Feedback,
    /// The value as given on the command line.
    pub value: String,
    /// The resolved value in absolute units.
    pub resolved: f64,
    pub summary: Summary,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepResult {
    pub effective_config: BTreeMap<String, BTreeMap<String, String>>,
    pub axis: Axis,
    pub values: Vec<String>,
    pub strategies: Vec<Feedback>,
    pub rows: Vec<SweepRow>,
    /// Per strategy, the θ maximizing steady concurrence (two-qubit) or
    /// minimizing Δ (oscillator).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theta_opt: Option<BTreeMap<String, f64>>,
    #[serde(skip)]
    kind: Option<SystemKind>,
}

pub fn run_sweep(
    raw: &RawConfig,
    axis: Axis,
    values: &[String],
    strategies: Option<&[Feedback]>,
) -> Result<SweepResult, CliError> {
    if values.is_empty() {
        return Err(CliError::Config("a sweep needs at least one value".into()));
    }
    let base = ExperimentConfig::resolve(raw)?;
    let strategies =
        strategies.map_or_else(|| vec![base.controller.feedback], <[Feedback]>::to_vec);
    let mut rows = Vec::new();
    for &fb in &strategies {
        let r = with_strategy(raw, fb);
        axis.check(&ExperimentConfig::resolve(&r)?)?;
        for v in values {
            let mut point = r.clone();
            point.set(axis.key(), v.clone());
            let cfg = ExperimentConfig::resolve(&point)?;
            info!("sweep {fb:?} {} = {v}", axis.key());
            let result = run_experiment(&cfg)?;
            rows.push(SweepRow {
                strategy: fb,
                value: v.clone(),
                resolved: axis.value_of(&cfg),
                summary: result.summary,
            });
        }
    }
    let kind = base.kind();
    let theta_opt = (axis == Axis::Theta).then(|| {
        strategies
            .iter()
            .map(|fb| {
                let better = |a: &&SweepRow, b: &&SweepRow| match kind {
                    SystemKind::TwoQubit => {
                        metric(a, "concurrence").total_cmp(&metric(b, "concurrence"))
                    }
                    SystemKind::Oscillator => metric(b, "delta").total_cmp(&metric(a, "delta")),
                };
                let best = rows
                    .iter()
                    .filter(|r| r.strategy == *fb)
                    .max_by(better)
                    .map_or(f64::NAN, |r| r.resolved);
                (format!("{fb:?}"), best)
            })
            .collect()
    });
    Ok(SweepResult {
        effective_config: crate::run::effective_config_of(&base),
        axis,
        values: values.to_vec(),
        strategies,
        rows,
        theta_opt,
        kind: Some(kind),
    })
}

fn metric(row: &SweepRow, name: &str) -> f64 {
    row.summary
        .steady_means
        .get(name)
        .copied()
        .unwrap_or(f64::NAN)
}

impl SweepResult {
    /// Column names and one row per (strategy, value).
    pub fn table(&self) -> (Vec<String>, Vec<Vec<String>>) {
        let metrics: &[(&str, &str)] = match self.kind {
            Some(SystemKind::Oscillator) => &[("mean_X", "X"), ("mean_P", "P"), ("delta", "delta")],
            _ => &[
                ("steady_concurrence", "concurrence"),
                ("steady_T0", "T_0"),
                ("mean_state_concurrence", "mean_state_concurrence"),
            ],
        };
        let mut header = vec!["strategy".to_string(), self.axis.key().to_string()];
        header.extend(metrics.iter().map(|(h, _)| h.to_string()));
        let extra: &[&str] = match self.kind {
            Some(SystemKind::Oscillator) => &["delta_sem", "max_std_X", "max_std_P"],
            _ => &["sem_concurrence", "max_std_concurrence"],
        };
        header.extend(extra.iter().map(|s| s.to_string()));
        let rows = self
            .rows
            .iter()
            .map(|r| {
                let s = &r.summary;
                let mut row = vec![format!("{:?}", r.strategy), sig9(r.resolved)];
                row.extend(metrics.iter().map(|(_, k)| sig9(metric(r, k))));
                let tail = match self.kind {
                    Some(SystemKind::Oscillator) => vec![
                        s.delta_metric.as_ref().map_or(f64::NAN, |d| d.sem),
                        s.steady_max_std.get("X").copied().unwrap_or(f64::NAN),
                        s.steady_max_std.get("P").copied().unwrap_or(f64::NAN),
                    ],
                    _ => vec![
                        s.steady_sem.get("concurrence").copied().unwrap_or(f64::NAN),
                        s.steady_max_std
                            .get("concurrence")
                            .copied()
                            .unwrap_or(f64::NAN),
                    ],
                };
                row.extend(tail.into_iter().map(sig9));
                row
            })
            .collect();
        (header, rows)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn raw(text: &str) -> RawConfig {
        RawConfig::from_ini_str(text).unwrap()
    }

    #[test]
    fn strategy_switch_keeps_parameters() {
        let r = raw("[system]\nsystem = twoqubit\n[controller]\nfeedback = PI\ntheta = 0.8\nf_pi = 0.2\ntau_i = 3\n");
        let p = ExperimentConfig::resolve(&with_strategy(&r, Feedback::P)).unwrap();
        assert_eq!((p.controller.alpha_p, p.controller.alpha_i), (0.2, 0.0));
        let i = ExperimentConfig::resolve(&with_strategy(&r, Feedback::I)).unwrap();
        assert_eq!((i.controller.alpha_p, i.controller.alpha_i), (0.0, 0.2));

        let r = raw("[system]\nsystem = twoqubit\n[controller]\nfeedback = PI\nalpha_p = 0.05\nalpha_i = 0.15\ntau_i = 3\n");
        let p = ExperimentConfig::resolve(&with_strategy(&r, Feedback::P)).unwrap();
        assert_eq!((p.controller.alpha_p, p.controller.alpha_i), (0.05, 0.0));
    }

    #[test]
    fn mismatched_axes_are_config_errors() {
        let r = raw(
            "[system]\nsystem = twoqubit\n[controller]\nfeedback = I\nalpha_i = 0.2\ntau_i = 3\n",
        );
        let e = run_sweep(&r, Axis::Theta, &["0.5".into()], None).unwrap_err();
        assert!(matches!(e, CliError::Config(_)));
        let e = run_sweep(&r, Axis::TauP, &["1".into()], None).unwrap_err();
        assert!(matches!(e, CliError::Config(_)));
        let e = run_sweep(&r, Axis::Epsilon, &["0.1".into()], None).unwrap_err();
        assert!(matches!(e, CliError::Config(_)));
        assert!(Axis::parse("omega").is_err());
    }
}
