use std::collections::BTreeMap;

use log::info;
use pisim_core::ensemble::{steady_window_summary, EnsembleConfig, EnsembleStats};
use pisim_core::feedback::{Goal, PIController};
use pisim_core::oscillator::{
    run_oscillator_ensemble, second_moments_evolve, Actuation, Compensation, ControlGoal, Gains,
    OscillatorControl, OscillatorModel, OscillatorRun, SecondMoments,
};
use pisim_core::quantum::TripletDecomposition;
use pisim_core::twoqubit::{
    analytic_t0_steady, exact_t0_steady, run_twoqubit_ensemble, PositivityCheck, TwoQubitModel,
    TwoQubitRun,
};
use serde::Serialize;

use crate::config::{
    ActuationKind, CompensationSetting, ExperimentConfig, Feedback, OscillatorSystem, SystemConfig,
    TwoQubitSystem,
};
use crate::error::CliError;
use crate::output::{OSCILLATOR_COLUMNS, TWOQUBIT_COLUMNS};

/// Delays after rounding onto the step grid.
#[derive(Debug, Clone, Serialize)]
pub struct EffectiveDelays {
    pub tau_p: f64,
    pub tau_i: f64,
    pub delay_steps: usize,
    pub window_steps: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct DeltaMetric {
    pub delta: f64,
    pub sem: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct AnalyticT0 {
    /// Closed-form expression, exact only at h1 + h2 = 0.
    pub closed_form: f64,
    /// Fixed point of the same mean equation.
    pub exact: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub effective_config: BTreeMap<String, BTreeMap<String, String>>,
    pub effective_delays: EffectiveDelays,
    pub steady_window: (f64, f64),
    pub steady_means: BTreeMap<String, f64>,
    pub steady_max_std: BTreeMap<String, f64>,
    /// Standard errors of the steady means that have one.
    pub steady_sem: BTreeMap<String, f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta_metric: Option<DeltaMetric>,
    #[serde(rename = "analytic_T0", skip_serializing_if = "Option::is_none")]
    pub analytic_t0: Option<AnalyticT0>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub compensation_alpha: Option<f64>,
    /// Oscillator only: whether the means stopped drifting in the window.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub steady_drift_ok: Option<bool>,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub header: &'static [&'static str],
    pub rows: Vec<Vec<f64>>,
    pub summary: Summary,
}

fn ensemble_config(cfg: &ExperimentConfig) -> EnsembleConfig {
    let e = &cfg.ensemble;
    let mut ens = EnsembleConfig::new(e.n_traj, e.seed, e.dt, e.t_final, e.output_stride);
    ens.steady_window = Some(e.window);
    ens.threads = e.threads;
    ens
}

pub fn effective_config_of(cfg: &ExperimentConfig) -> BTreeMap<String, BTreeMap<String, String>> {
    cfg.sections()
        .into_iter()
        .map(|(section, entries)| (section.to_string(), entries.into_iter().collect()))
        .collect()
}

fn window_indices(times: &[f64], window: (f64, f64)) -> Vec<usize> {
    let eps = 1e-9 * times.last().copied().unwrap_or(1.0).max(1.0);
    (0..times.len())
        .filter(|&i| times[i] >= window.0 - eps && times[i] <= window.1 + eps)
        .collect()
}

/// The configured window, cut at the last output time when `t_final` is not
/// a whole number of output strides.
fn clamped_window(stats: &EnsembleStats) -> (f64, f64) {
    let last = stats.times.last().copied().unwrap_or(0.0);
    (stats.window.0, stats.window.1.min(last))
}

fn steady_maps(
    stats: &EnsembleStats,
    names: &[&str],
) -> Result<(BTreeMap<String, f64>, BTreeMap<String, f64>), CliError> {
    let sums = steady_window_summary(stats, clamped_window(stats))?;
    let mut means = BTreeMap::new();
    let mut max_std = BTreeMap::new();
    for s in sums.iter().filter(|s| names.contains(&s.name.as_str())) {
        means.insert(s.name.clone(), s.mean);
        max_std.insert(s.name.clone(), s.max_std);
    }
    Ok((means, max_std))
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunResult, CliError> {
    match &cfg.system {
        SystemConfig::TwoQubit(s) => run_two_qubit(cfg, s),
        SystemConfig::Oscillator(s) => run_oscillator(cfg, s),
    }
}

fn two_qubit_controller(cfg: &ExperimentConfig) -> Result<PIController, CliError> {
    let c = &cfg.controller;
    let dt = cfg.ensemble.dt;
    let ctrl = match (c.theta, c.f_pi) {
        (Some(theta), Some(f)) => PIController::mixed(theta, f, c.tau_p, c.tau_i, dt)?,
        _ => PIController::new(c.alpha_p, c.alpha_i, c.tau_p, c.tau_i, dt)?,
    };
    Ok(ctrl.with_goal(Goal::Constant(c.goal)))
}

fn run_two_qubit(cfg: &ExperimentConfig, sys: &TwoQubitSystem) -> Result<RunResult, CliError> {
    let model = TwoQubitModel::new(sys.h1, sys.h2, sys.k, sys.eta)?;
    let ctrl = two_qubit_controller(cfg)?;
    let delays = EffectiveDelays {
        tau_p: ctrl.tau_p,
        tau_i: ctrl.tau_i,
        delay_steps: ctrl.delay_steps,
        window_steps: ctrl.window_steps,
    };
    let undelayed_p = cfg.controller.feedback == Feedback::P && ctrl.delay_steps == 0;
    let mut run = TwoQubitRun::new(model, ctrl);
    let [t1, t0, tm1] = sys.initial;
    let zero = Default::default();
    run.initial = TripletDecomposition {
        t_minus: tm1,
        t_zero: t0,
        t_plus: t1,
        singlet: 0.0,
        plus_minus: zero,
        zero_plus: zero,
        zero_minus: zero,
        singlet_coherences: [zero; 3],
    }
    .to_density_matrix();
    run.scheme = cfg.ensemble.scheme;
    run.abort_below = cfg.ensemble.abort_below;
    if cfg.ensemble.positivity_every_step {
        run.positivity = PositivityCheck::EveryStep;
    }

    let ens = ensemble_config(cfg);
    info!(
        "two-qubit ensemble: {} trajectories, {} steps each",
        ens.n_traj,
        ens.n_steps()
    );
    let out = run_twoqubit_ensemble(&run, &ens)?;
    let st = &out.stats;

    let names = ["T_m1", "T_0", "T_1", "concurrence"];
    let cols: Vec<_> = names
        .iter()
        .map(|n| st.series(n))
        .collect::<Result<_, _>>()?;
    let rows = (0..st.times.len())
        .map(|i| {
            vec![
                st.times[i],
                cols[0].mean[i],
                cols[1].mean[i],
                cols[2].mean[i],
                cols[3].mean[i],
                cols[3].std[i],
            ]
        })
        .collect();

    let (mut means, max_std) = steady_maps(st, &names)?;
    let window = clamped_window(st);
    let idx = window_indices(&st.times, window);
    if !idx.is_empty() {
        let avg = idx
            .iter()
            .map(|&i| out.mean_state_concurrence[i])
            .sum::<f64>()
            / idx.len() as f64;
        means.insert("mean_state_concurrence".into(), avg);
    }
    let (_, sem) = out.steady_concurrence()?;
    let analytic_t0 = undelayed_p.then(|| AnalyticT0 {
        closed_form: analytic_t0_steady(&model, cfg.controller.alpha_p),
        exact: exact_t0_steady(&model, cfg.controller.alpha_p),
    });
    Ok(RunResult {
        header: &TWOQUBIT_COLUMNS,
        rows,
        summary: Summary {
            effective_config: effective_config_of(cfg),
            effective_delays: delays,
            steady_window: window,
            steady_means: means,
            steady_max_std: max_std,
            steady_sem: BTreeMap::from([("concurrence".to_string(), sem)]),
            delta_metric: None,
            analytic_t0,
            compensation_alpha: None,
            steady_drift_ok: None,
        },
    })
}

fn run_oscillator(cfg: &ExperimentConfig, sys: &OscillatorSystem) -> Result<RunResult, CliError> {
    let c = &cfg.controller;
    let e = &cfg.ensemble;
    let model = OscillatorModel::new(sys.m, sys.omega, sys.gamma, sys.n_bath, sys.k, sys.eta)?;
    let actuation = match c.actuation {
        Some(ActuationKind::XOnly) => Actuation::XOnly,
        _ => Actuation::Xp,
    };
    let theta = c.theta.unwrap_or(0.0);
    let mut control = OscillatorControl::new(actuation, theta, c.delay_p(), c.tau_i, e.dt)?;
    if let Some([p1, p2, i1, i2]) = c.gains {
        control = control.with_fixed_gains(Gains { p1, p2, i1, i2 })?;
    }
    let comp = match c.compensation {
        CompensationSetting::Auto => Compensation::Auto,
        CompensationSetting::Off => Compensation::Off,
        CompensationSetting::Value(v) => Compensation::Value(v),
    };
    info!("oscillator second moments up to t = {}", e.t_final);
    let table = second_moments_evolve(&model, SecondMoments::COHERENT, e.dt, e.t_final)?;
    let run = OscillatorRun::new(
        model,
        control,
        ControlGoal::new(sys.xg, sys.pg),
        comp,
        &table,
    )?
    .with_start(sys.x0, sys.p0);
    let ens = ensemble_config(cfg);
    info!(
        "oscillator ensemble: {} trajectories, {} steps each",
        ens.n_traj,
        ens.n_steps()
    );
    let out = run_oscillator_ensemble(&run, &table, &ens)?;
    let st = &out.stats;

    let (x, p) = (st.series("X")?, st.series("P")?);
    let rows = (0..st.times.len())
        .map(|i| {
            vec![
                st.times[i],
                x.mean[i],
                p.mean[i],
                x.std[i],
                p.std[i],
                x.first[i],
                p.first[i],
            ]
        })
        .collect();
    let (mut means, max_std) = steady_maps(st, &["X", "P"])?;
    means.insert("delta".into(), out.summary.delta);
    let s = &out.summary;
    Ok(RunResult {
        header: &OSCILLATOR_COLUMNS,
        rows,
        summary: Summary {
            effective_config: effective_config_of(cfg),
            effective_delays: EffectiveDelays {
                tau_p: control.tau_p,
                tau_i: control.tau_i,
                delay_steps: control.delay_steps,
                window_steps: control.window_steps,
            },
            steady_window: s.window,
            steady_means: means,
            steady_max_std: max_std,
            steady_sem: BTreeMap::from([("delta".to_string(), s.delta_sem)]),
            delta_metric: Some(DeltaMetric {
                delta: s.delta,
                sem: s.delta_sem,
            }),
            analytic_t0: None,
            compensation_alpha: (actuation == Actuation::XOnly).then_some(out.compensation_alpha),
            steady_drift_ok: Some(s.drift_ok),
        },
    })
}
