//! Parallel trajectory execution and streaming aggregation.
//!
//! Trajectories are computed in fixed-size chunks in parallel, then folded
//! into the running moments strictly in trajectory-index order, so results
//! are bit-identical whatever the number of worker threads.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Result, SimError};

/// Trajectories computed concurrently before folding into the aggregates.
const CHUNK: usize = 128;

/// Fraction of `t_final` covered by the default steady window.
pub const DEFAULT_WINDOW_FRACTION: f64 = 0.25;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnsembleConfig {
    pub n_traj: usize,
    pub base_seed: u64,
    pub dt: f64,
    pub t_final: f64,
    pub output_stride: usize,
    /// Steady-state window; defaults to the final quarter of the run.
    pub steady_window: Option<(f64, f64)>,
    /// Worker threads; `None` uses the global pool.
    #[serde(skip)]
    pub threads: Option<usize>,
}

impl EnsembleConfig {
    pub fn new(n_traj: usize, base_seed: u64, dt: f64, t_final: f64, output_stride: usize) -> Self {
        EnsembleConfig {
            n_traj,
            base_seed,
            dt,
            t_final,
            output_stride,
            steady_window: None,
            threads: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_traj == 0 {
            return Err(SimError::invalid("n_traj", "must be at least 1"));
        }
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(SimError::invalid(
                "dt",
                format!("must be positive, got {}", self.dt),
            ));
        }
        if !(self.t_final > 0.0) || !self.t_final.is_finite() {
            return Err(SimError::invalid(
                "t_final",
                format!("must be positive, got {}", self.t_final),
            ));
        }
        if self.output_stride == 0 {
            return Err(SimError::invalid("output_stride", "must be at least 1"));
        }
        let (a, b) = self.window();
        if !(a <= b) || a < 0.0 || b > self.t_final + 0.5 * self.dt {
            return Err(SimError::WindowOutOfRange {
                start: a,
                end: b,
                min: 0.0,
                max: self.t_final,
            });
        }
        Ok(())
    }

    pub fn n_steps(&self) -> usize {
        (self.t_final / self.dt).round() as usize
    }

    /// Step indices at which observables are recorded.
    pub fn output_steps(&self) -> impl Iterator<Item = usize> + '_ {
        (0..=self.n_steps()).step_by(self.output_stride)
    }

    pub fn n_outputs(&self) -> usize {
        self.n_steps() / self.output_stride + 1
    }

    pub fn output_times(&self) -> Vec<f64> {
        self.output_steps().map(|n| n as f64 * self.dt).collect()
    }

    pub fn window(&self) -> (f64, f64) {
        self.steady_window
            .unwrap_or(((1.0 - DEFAULT_WINDOW_FRACTION) * self.t_final, self.t_final))
    }

    pub fn seed(&self, index: usize) -> u64 {
        self.base_seed.wrapping_add(index as u64)
    }
}

/// Observables of one trajectory at each output time, row-major by time.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub n_obs: usize,
    pub samples: Vec<f64>,
}

impl TrajectoryRecord {
    pub fn with_capacity(n_obs: usize, n_outputs: usize) -> Self {
        TrajectoryRecord {
            n_obs,
            samples: Vec::with_capacity(n_obs * n_outputs),
        }
    }

    pub fn push_row(&mut self, row: &[f64]) {
        debug_assert_eq!(row.len(), self.n_obs);
        self.samples.extend_from_slice(row);
    }

    pub fn n_rows(&self) -> usize {
        self.samples.len() / self.n_obs.max(1)
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.samples[i * self.n_obs..(i + 1) * self.n_obs]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.n_rows()).map(|i| self.row(i)[j]).collect()
    }
}

/// Running mean and sum of squared deviations.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Welford {
    pub n: u64,
    pub mean: f64,
    m2: f64,
}

impl Welford {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let delta = x - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (x - self.mean);
    }

    /// Sample standard deviation, n−1 denominator; 0 for a single sample.
    pub fn std(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            (self.m2 / (self.n - 1) as f64).max(0.0).sqrt()
        }
    }

    pub fn sem(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            self.std() / (self.n as f64).sqrt()
        }
    }
}

/// (mean, sample std) of a set of samples.
pub fn aggregate(samples: &[f64]) -> Result<(f64, f64)> {
    if samples.is_empty() {
        return Err(SimError::EmptyInput);
    }
    let mut w = Welford::default();
    samples.iter().for_each(|&x| w.push(x));
    Ok((w.mean, w.std()))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ObservableSeries {
    pub name: String,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Trajectory 0.
    pub first: Vec<f64>,
    /// Mean over trajectories of each trajectory's steady-window time average.
    pub window_mean: f64,
    /// Standard error of `window_mean`, from the spread of those averages.
    pub window_sem: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnsembleStats {
    pub times: Vec<f64>,
    pub series: Vec<ObservableSeries>,
    pub n_traj: usize,
    pub base_seed: u64,
    pub window: (f64, f64),
}

impl EnsembleStats {
    pub fn get(&self, name: &str) -> Option<&ObservableSeries> {
        self.series.iter().find(|s| s.name == name)
    }

    pub fn series(&self, name: &str) -> Result<&ObservableSeries> {
        self.get(name)
            .ok_or_else(|| SimError::invalid("observable", format!("no series named {name}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SteadySummary {
    pub name: String,
    /// Mean of the per-time means over the window.
    pub mean: f64,
    /// Mean of the per-time std over the window.
    pub std: f64,
    /// Maximum of the per-time std over the window.
    pub max_std: f64,
}

/// Runs `n_traj` trajectories. `trajectory(index, seed)` must return one row
/// of `names.len()` values per output time.
pub fn run_ensemble<F>(names: &[&str], ens: &EnsembleConfig, trajectory: F) -> Result<EnsembleStats>
where
    F: Fn(usize, u64) -> Result<TrajectoryRecord> + Sync,
{
    ens.validate()?;
    match ens.threads {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| SimError::invalid("threads", e.to_string()))?;
            pool.install(|| run_inner(names, ens, &trajectory))
        }
        None => run_inner(names, ens, &trajectory),
    }
}

fn run_inner<F>(names: &[&str], ens: &EnsembleConfig, trajectory: &F) -> Result<EnsembleStats>
where
    F: Fn(usize, u64) -> Result<TrajectoryRecord> + Sync,
{
    let n_obs = names.len();
    let times = ens.output_times();
    let n_out = times.len();
    let (w0, w1) = ens.window();
    let eps = 1e-9 * ens.dt;
    let in_window: Vec<bool> = times
        .iter()
        .map(|&t| t >= w0 - eps && t <= w1 + eps)
        .collect();
    let n_in_window = in_window.iter().filter(|&&b| b).count();
    if n_in_window == 0 {
        return Err(SimError::WindowOutOfRange {
            start: w0,
            end: w1,
            min: 0.0,
            max: ens.t_final,
        });
    }

    let mut cells = vec![Welford::default(); n_out * n_obs];
    let mut window_avgs = vec![Welford::default(); n_obs];
    let mut first = Vec::new();

    let mut start = 0;
    while start < ens.n_traj {
        let end = (start + CHUNK).min(ens.n_traj);
        let records: Vec<Result<TrajectoryRecord>> = (start..end)
            .into_par_iter()
            .map(|i| {
                let seed = ens.seed(i);
                trajectory(i, seed).map_err(|e| SimError::Trajectory {
                    index: i,
                    seed,
                    source: Box::new(e),
                })
            })
            .collect();
        for (offset, rec) in records.into_iter().enumerate() {
            let rec = rec?;
            if rec.n_obs != n_obs || rec.n_rows() != n_out {
                return Err(SimError::invalid(
                    "trajectory",
                    format!(
                        "record shape {}x{} does not match {}x{}",
                        rec.n_rows(),
                        rec.n_obs,
                        n_out,
                        n_obs
                    ),
                ));
            }
            let mut sums = vec![0.0; n_obs];
            for (t, cell_row) in cells.chunks_mut(n_obs).enumerate() {
                let row = rec.row(t);
                for j in 0..n_obs {
                    cell_row[j].push(row[j]);
                    if in_window[t] {
                        sums[j] += row[j];
                    }
                }
            }
            for j in 0..n_obs {
                window_avgs[j].push(sums[j] / n_in_window as f64);
            }
            if start + offset == 0 {
                first = rec.samples;
            }
        }
        start = end;
    }

    let series = names
        .iter()
        .enumerate()
        .map(|(j, name)| ObservableSeries {
            name: name.to_string(),
            mean: (0..n_out).map(|t| cells[t * n_obs + j].mean).collect(),
            std: (0..n_out).map(|t| cells[t * n_obs + j].std()).collect(),
            first: (0..n_out).map(|t| first[t * n_obs + j]).collect(),
            window_mean: window_avgs[j].mean,
            window_sem: window_avgs[j].sem(),
        })
        .collect();

    Ok(EnsembleStats {
        times,
        series,
        n_traj: ens.n_traj,
        base_seed: ens.base_seed,
        window: (w0, w1),
    })
}

/// Per-observable mean and max std over the window [start, end].
pub fn steady_window_summary(
    stats: &EnsembleStats,
    window: (f64, f64),
) -> Result<Vec<SteadySummary>> {
    let (start, end) = window;
    let (lo, hi) = match (stats.times.first(), stats.times.last()) {
        (Some(&lo), Some(&hi)) => (lo, hi),
        _ => return Err(SimError::EmptyInput),
    };
    let eps = 1e-9 * (hi - lo).abs().max(1.0);
    if !(start <= end) || start < lo - eps || end > hi + eps {
        return Err(SimError::WindowOutOfRange {
            start,
            end,
            min: lo,
            max: hi,
        });
    }
    let idx: Vec<usize> = (0..stats.times.len())
        .filter(|&i| stats.times[i] >= start - eps && stats.times[i] <= end + eps)
        .collect();
    if idx.is_empty() {
        return Err(SimError::WindowOutOfRange {
            start,
            end,
            min: lo,
            max: hi,
        });
    }
    let n = idx.len() as f64;
    Ok(stats
        .series
        .iter()
        .map(|s| SteadySummary {
            name: s.name.clone(),
            mean: idx.iter().map(|&i| s.mean[i]).sum::<f64>() / n,
            std: idx.iter().map(|&i| s.std[i]).sum::<f64>() / n,
            max_std: idx.iter().map(|&i| s.std[i]).fold(0.0, f64::max),
        })
        .collect())
}

/// Least-squares slope of `ys` against `xs`.
pub fn linear_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len().min(ys.len());
    if n < 2 {
        return 0.0;
    }
    let mx = xs[..n].iter().sum::<f64>() / n as f64;
    let my = ys[..n].iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for i in 0..n {
        sxy += (xs[i] - mx) * (ys[i] - my);
        sxx += (xs[i] - mx) * (xs[i] - mx);
    }
    if sxx == 0.0 {
        0.0
    } else {
        sxy / sxx
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn aggregate_cases() {
        assert_eq!(aggregate(&[3.0, 3.0, 3.0]).unwrap(), (3.0, 0.0));
        let (m, s) = aggregate(&[0.0, 2.0]).unwrap();
        assert_eq!(m, 1.0);
        assert_abs_diff_eq!(s, 2f64.sqrt(), epsilon = 1e-15);
        assert_eq!(aggregate(&[]), Err(SimError::EmptyInput));
        assert_eq!(aggregate(&[4.0]).unwrap(), (4.0, 0.0));
    }

    fn ramp(n_obs: usize, ens: &EnsembleConfig, scale: f64) -> TrajectoryRecord {
        let mut rec = TrajectoryRecord::with_capacity(n_obs, ens.n_outputs());
        for t in ens.output_times() {
            rec.push_row(&vec![scale * t; n_obs]);
        }
        rec
    }

    #[test]
    fn single_trajectory_has_zero_std() {
        let ens = EnsembleConfig::new(1, 5, 0.1, 1.0, 2);
        let stats = run_ensemble(&["a"], &ens, |_, _| Ok(ramp(1, &ens, 1.0))).unwrap();
        let s = stats.series("a").unwrap();
        assert_eq!(s.mean, s.first);
        assert!(s.std.iter().all(|&x| x == 0.0));
        assert_eq!(stats.times.len(), 6);
    }

    #[test]
    fn errors_carry_index_and_seed() {
        let ens = EnsembleConfig::new(10, 100, 0.1, 1.0, 1);
        let err = run_ensemble(&["a"], &ens, |i, _| {
            if i == 7 {
                Err(SimError::TraceCollapse { trace: 0.0 })
            } else {
                Ok(ramp(1, &ens, 1.0))
            }
        })
        .unwrap_err();
        match err {
            SimError::Trajectory { index, seed, .. } => assert_eq!((index, seed), (7, 107)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn steady_summary_of_constant_series() {
        let ens = EnsembleConfig::new(3, 0, 0.5, 10.0, 1);
        let stats = run_ensemble(&["c"], &ens, |i, _| {
            let mut rec = TrajectoryRecord::with_capacity(1, ens.n_outputs());
            for _ in 0..ens.n_outputs() {
                rec.push_row(&[i as f64]);
            }
            Ok(rec)
        })
        .unwrap();
        let s = &steady_window_summary(&stats, (5.0, 10.0)).unwrap()[0];
        assert_eq!(s.mean, 1.0);
        assert_eq!(s.max_std, 1.0);
        assert_eq!(s.std, 1.0);
        assert!(steady_window_summary(&stats, (5.0, 11.0)).is_err());
        let sm = stats.series("c").unwrap();
        assert_eq!(sm.window_mean, 1.0);
        assert_abs_diff_eq!(sm.window_sem, 1.0 / 3f64.sqrt(), epsilon = 1e-15);
    }

    #[test]
    fn slope_of_line() {
        let xs = [0.0, 1.0, 2.0, 3.0];
        let ys = [1.0, 3.0, 5.0, 7.0];
        assert_abs_diff_eq!(linear_slope(&xs, &ys), 2.0, epsilon = 1e-15);
    }
}
