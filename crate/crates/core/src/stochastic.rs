//! Wiener increments, the step-indexed history of increments and error
//! samples that delayed feedback and integral filters read from, and the
//! filter kernels themselves.

use std::collections::VecDeque;
use std::f64::consts::E;

use log::warn;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Result, SimError};

/// Relative grid-rounding error above which a warning is logged.
pub const GRID_ROUNDING_TOL: f64 = 1e-9;

/// Per-trajectory Gaussian increment source.
#[derive(Debug, Clone)]
pub struct WienerSource {
    rng: ChaCha8Rng,
}

impl WienerSource {
    pub fn from_seed(seed: u64) -> Self {
        WienerSource {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// A Gaussian sample with mean 0 and variance `dt`.
    pub fn sample_increment(&mut self, dt: f64) -> f64 {
        let n: f64 = StandardNormal.sample(&mut self.rng);
        n * dt.sqrt()
    }
}

/// A delay or window length rounded onto the step grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridAligned {
    pub requested: f64,
    pub effective: f64,
    pub steps: usize,
}

impl GridAligned {
    pub fn relative_error(&self) -> f64 {
        if self.requested == 0.0 {
            0.0
        } else {
            ((self.effective - self.requested) / self.requested).abs()
        }
    }

    pub fn is_exact(&self) -> bool {
        self.relative_error() <= GRID_ROUNDING_TOL
    }
}

/// Rounds `tau` to the nearest multiple of `dt`.
pub fn grid_align(name: &'static str, tau: f64, dt: f64) -> Result<GridAligned> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(SimError::invalid(
            "dt",
            format!("must be positive, got {dt}"),
        ));
    }
    if !(tau >= 0.0) || !tau.is_finite() {
        return Err(SimError::invalid(
            name,
            format!("must be non-negative, got {tau}"),
        ));
    }
    let steps = (tau / dt).round() as usize;
    let aligned = GridAligned {
        requested: tau,
        effective: steps as f64 * dt,
        steps,
    };
    if !aligned.is_exact() {
        warn!(
            "{name} = {tau} is not a multiple of dt = {dt}; using {} ({} steps)",
            aligned.effective, steps
        );
    }
    Ok(aligned)
}

/// Fixed-capacity ring buffer read by lag. Lag 0 is the newest entry; lags
/// beyond the filled depth return the pre-history value.
#[derive(Debug, Clone)]
pub struct DelayLine {
    buf: VecDeque<f64>,
    capacity: usize,
    prehistory: f64,
}

impl DelayLine {
    pub fn new(capacity: usize, prehistory: f64) -> Self {
        let capacity = capacity.max(1);
        DelayLine {
            buf: VecDeque::with_capacity(capacity),
            capacity,
            prehistory,
        }
    }

    pub fn push(&mut self, value: f64) {
        if self.buf.len() == self.capacity {
            self.buf.pop_back();
        }
        self.buf.push_front(value);
    }

    pub fn lag(&self, lag: usize) -> Result<f64> {
        if lag >= self.capacity {
            return Err(SimError::DelayExceedsHistory {
                requested: lag,
                capacity: self.capacity,
            });
        }
        Ok(self.buf.get(lag).copied().unwrap_or(self.prehistory))
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn depth(&self) -> usize {
        self.buf.len()
    }
}

/// Record of past Wiener increments and error-signal samples for one
/// trajectory. Sample `n` covers the step [n·dt, (n+1)·dt).
#[derive(Debug, Clone)]
pub struct NoiseHistory {
    dt: f64,
    increments: DelayLine,
    errors: DelayLine,
    pushed: usize,
}

impl NoiseHistory {
    /// `max_lag` is the largest lag (in steps) that will be queried.
    pub fn new(dt: f64, max_lag: usize) -> Self {
        NoiseHistory {
            dt,
            increments: DelayLine::new(max_lag + 1, 0.0),
            errors: DelayLine::new(max_lag + 1, 0.0),
            pushed: 0,
        }
    }

    /// Sized for the window max(τ_I, τ_P).
    pub fn for_window(dt: f64, tau_i: f64, tau_p: f64) -> Self {
        let steps = (tau_i.max(tau_p) / dt).ceil() as usize;
        Self::new(dt, steps)
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn capacity(&self) -> usize {
        self.increments.capacity()
    }

    /// Number of samples recorded so far.
    pub fn len(&self) -> usize {
        self.pushed
    }

    pub fn is_empty(&self) -> bool {
        self.pushed == 0
    }

    pub fn push(&mut self, increment: f64, error: f64) {
        self.increments.push(increment);
        self.errors.push(error);
        self.pushed += 1;
    }

    pub fn increment_at_lag(&self, lag: usize) -> Result<f64> {
        self.increments.lag(lag)
    }

    pub fn error_at_lag(&self, lag: usize) -> Result<f64> {
        self.errors.lag(lag)
    }

    /// dW(t − τ_P), zero before the start of the record.
    pub fn delayed_increment(&self, tau_p: f64) -> Result<f64> {
        let lag = grid_align("tau_p", tau_p, self.dt)?.steps;
        self.increment_at_lag(lag)
    }

    /// e(t − τ_P), zero before the start of the record.
    pub fn delayed_error(&self, tau_p: f64) -> Result<f64> {
        let lag = grid_align("tau_p", tau_p, self.dt)?.steps;
        self.error_at_lag(lag)
    }

    /// Start time of the sample stored at `lag`.
    pub fn sample_time(&self, lag: usize) -> f64 {
        (self.pushed as f64 - 1.0 - lag as f64) * self.dt
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Quadrature {
    Cos,
    Sin,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FilterKind {
    /// (1/τ_I) ∫ e(s) exp(−(t−s)/τ_I) ds over [t − τ_I, t].
    ExponentialWindow,
    /// (scale/τ_I) ∫ e(s) cos(ωs) ds (or sin) over [t − τ_I, t].
    ModulatedBoxcar {
        omega: f64,
        quadrature: Quadrature,
        scale: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterSpec {
    pub kind: FilterKind,
    pub tau_i: f64,
    /// Window length in steps (τ_I after grid rounding).
    pub window: usize,
    pub dt: f64,
}

impl FilterSpec {
    pub fn exponential(tau_i: f64, dt: f64) -> Result<Self> {
        Self::build(FilterKind::ExponentialWindow, tau_i, dt)
    }

    pub fn modulated(
        tau_i: f64,
        dt: f64,
        omega: f64,
        quadrature: Quadrature,
        scale: f64,
    ) -> Result<Self> {
        Self::build(
            FilterKind::ModulatedBoxcar {
                omega,
                quadrature,
                scale,
            },
            tau_i,
            dt,
        )
    }

    fn build(kind: FilterKind, tau_i: f64, dt: f64) -> Result<Self> {
        if !(tau_i > 0.0) {
            return Err(SimError::invalid(
                "tau_i",
                format!("must be positive, got {tau_i}"),
            ));
        }
        let aligned = grid_align("tau_i", tau_i, dt)?;
        if aligned.steps == 0 {
            return Err(SimError::invalid(
                "tau_i",
                format!("{tau_i} is shorter than dt = {dt}"),
            ));
        }
        Ok(FilterSpec {
            kind,
            tau_i: aligned.effective,
            window: aligned.steps,
            dt,
        })
    }

    /// Kernel weight applied to the sample at `lag` that started at `s`.
    fn weight(&self, lag: usize, s: f64) -> f64 {
        let base = self.dt / self.tau_i;
        match self.kind {
            FilterKind::ExponentialWindow => base * (-(lag as f64) * self.dt / self.tau_i).exp(),
            FilterKind::ModulatedBoxcar {
                omega,
                quadrature,
                scale,
            } => {
                let phase = match quadrature {
                    Quadrature::Cos => (omega * s).cos(),
                    Quadrature::Sin => (omega * s).sin(),
                };
                base * scale * phase
            }
        }
    }
}

/// Direct left-point evaluation of the filter over the stored window. The
/// newest sample carries lag 0.
pub fn filter_evaluate(hist: &NoiseHistory, spec: &FilterSpec) -> Result<f64> {
    if hist.is_empty() {
        return Err(SimError::EmptyHistory);
    }
    if spec.window > hist.capacity() {
        return Err(SimError::DelayExceedsHistory {
            requested: spec.window,
            capacity: hist.capacity(),
        });
    }
    let depth = spec.window.min(hist.len());
    let mut acc = 0.0;
    for lag in 0..depth {
        acc += spec.weight(lag, hist.sample_time(lag)) * hist.error_at_lag(lag)?;
    }
    Ok(acc)
}

/// O(1)-per-step form of [`FilterKind::ExponentialWindow`]:
/// J ← e^{−dt/τ_I}·J + (dt/τ_I)·e_new − e^{−W·dt/τ_I}·(dt/τ_I)·e_dropped.
#[derive(Debug, Clone)]
pub struct ExponentialFilter {
    decay: f64,
    gain: f64,
    tail: f64,
    window: usize,
    value: f64,
}

impl ExponentialFilter {
    pub fn new(spec: &FilterSpec) -> Self {
        debug_assert!(matches!(spec.kind, FilterKind::ExponentialWindow));
        let decay = (-spec.dt / spec.tau_i).exp();
        ExponentialFilter {
            decay,
            gain: spec.dt / spec.tau_i,
            tail: decay.powi(spec.window as i32),
            window: spec.window,
            value: 0.0,
        }
    }

    /// Folds in the sample just pushed onto `hist`.
    pub fn update(&mut self, hist: &NoiseHistory) -> Result<f64> {
        let newest = hist.error_at_lag(0)?;
        let dropped = hist.error_at_lag(self.window)?;
        self.value = self.decay * self.value + self.gain * (newest - self.tail * dropped);
        Ok(self.value)
    }

    pub fn value(&self) -> f64 {
        self.value
    }

    /// Required history depth.
    pub fn lag_needed(&self) -> usize {
        self.window
    }
}

/// O(1)-per-step form of [`FilterKind::ModulatedBoxcar`] as a running sum.
#[derive(Debug, Clone)]
pub struct BoxcarFilter {
    spec: FilterSpec,
    sum: f64,
}

impl BoxcarFilter {
    pub fn new(spec: &FilterSpec) -> Self {
        BoxcarFilter {
            spec: *spec,
            sum: 0.0,
        }
    }

    pub fn update(&mut self, hist: &NoiseHistory) -> Result<f64> {
        let w = self.spec.window;
        let entering = self.spec.weight(0, hist.sample_time(0));
        let leaving = if hist.len() > w {
            self.spec.weight(w, hist.sample_time(w))
        } else {
            0.0
        };
        self.update_weighted(hist, entering, leaving)
    }

    /// [`Self::update`] with the kernel weights of the entering sample and
    /// of the sample leaving the window supplied by the caller, for callers
    /// that tabulate the modulation.
    pub fn update_weighted(
        &mut self,
        hist: &NoiseHistory,
        entering: f64,
        leaving: f64,
    ) -> Result<f64> {
        let w = self.spec.window;
        self.sum += entering * hist.error_at_lag(0)?;
        if hist.len() > w {
            self.sum -= leaving * hist.error_at_lag(w)?;
        }
        Ok(self.sum)
    }

    pub fn spec(&self) -> &FilterSpec {
        &self.spec
    }

    pub fn value(&self) -> f64 {
        self.sum
    }
}

/// J(t) = −mω·J_X(t)·sin(ωt) + J_P(t)·cos(ωt), an estimate of ⟨p⟩ − p_g.
pub fn momentum_estimator(jx: f64, jp: f64, t: f64, m: f64, omega: f64) -> f64 {
    let (s, c) = (omega * t).sin_cos();
    -m * omega * jx * s + jp * c
}

/// Window integral of the exponential kernel, 1 − e^{−1}.
pub const EXPONENTIAL_WINDOW_MASS: f64 = 1.0 - 1.0 / E;

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn increments_are_reproducible() {
        let mut a = WienerSource::from_seed(7);
        let mut b = WienerSource::from_seed(7);
        let (a1, a2) = (a.sample_increment(0.01), a.sample_increment(0.01));
        assert_ne!(a1, a2);
        assert_eq!(a1, b.sample_increment(0.01));
        assert_eq!(a2, b.sample_increment(0.01));
    }

    #[test]
    fn delayed_lookup_semantics() {
        let dt = 0.1;
        let mut hist = NoiseHistory::new(dt, 4);
        assert_eq!(hist.delayed_increment(0.3).unwrap(), 0.0);
        for n in 0..5 {
            hist.push(n as f64 + 1.0, 0.0);
        }
        assert_eq!(hist.delayed_increment(0.0).unwrap(), 5.0);
        assert_eq!(hist.delayed_increment(0.3).unwrap(), 2.0);
        assert!(matches!(
            hist.delayed_increment(1.0),
            Err(SimError::DelayExceedsHistory { .. })
        ));
    }

    #[test]
    fn prehistory_is_zero() {
        let mut hist = NoiseHistory::new(0.01, 10);
        hist.push(0.5, 0.5);
        for lag in 1..=10 {
            assert_eq!(hist.increment_at_lag(lag).unwrap(), 0.0);
            assert_eq!(hist.error_at_lag(lag).unwrap(), 0.0);
        }
    }

    #[test]
    fn grid_alignment_rounds_to_nearest_step() {
        let a = grid_align("tau", 0.305, 0.01).unwrap();
        assert_eq!(a.steps, 31);
        assert!(!a.is_exact());
        let b = grid_align("tau", 3.0, 0.01).unwrap();
        assert_eq!(b.steps, 300);
        assert!(b.is_exact());
    }

    #[test]
    fn empty_history_is_an_error() {
        let hist = NoiseHistory::new(0.01, 10);
        let spec = FilterSpec::exponential(0.1, 0.01).unwrap();
        assert_eq!(filter_evaluate(&hist, &spec), Err(SimError::EmptyHistory));
    }

    #[test]
    fn zero_signal_filters_to_zero() {
        let dt = 0.01;
        let spec = FilterSpec::exponential(1.0, dt).unwrap();
        let mut hist = NoiseHistory::new(dt, spec.window);
        for _ in 0..300 {
            hist.push(0.3, 0.0);
        }
        assert_eq!(filter_evaluate(&hist, &spec).unwrap(), 0.0);
    }

    #[test]
    fn constant_signal_fills_exponential_window() {
        // (1/τ)∫_0^τ c·e^{−u/τ} du = c(1 − e^{−1}); the left-point sum carries
        // an O(dt/τ) correction.
        let dt = 1e-4;
        let spec = FilterSpec::exponential(1.0, dt).unwrap();
        let mut hist = NoiseHistory::new(dt, spec.window);
        for _ in 0..2 * spec.window {
            hist.push(0.0, 2.5);
        }
        let j = filter_evaluate(&hist, &spec).unwrap();
        assert_abs_diff_eq!(j, 2.5 * EXPONENTIAL_WINDOW_MASS, epsilon = 1e-3);
    }

    #[test]
    fn modulated_boxcar_recovers_quadrature() {
        // e(s) = 2cos(ωs) over a half period: (1/τ)∫ 2cos² = 1.
        let omega = 1.0;
        let period = std::f64::consts::TAU / omega;
        let dt = period / 5000.0;
        let spec = FilterSpec::modulated(period / 2.0, dt, omega, Quadrature::Cos, 1.0).unwrap();
        let mut hist = NoiseHistory::new(dt, spec.window);
        for n in 0..12_345 {
            let s = n as f64 * dt;
            hist.push(0.0, 2.0 * (omega * s).cos());
        }
        let j = filter_evaluate(&hist, &spec).unwrap();
        assert_abs_diff_eq!(j, 1.0, epsilon = 2e-3);
    }

    #[test]
    fn momentum_estimator_cases() {
        assert_eq!(momentum_estimator(0.0, 0.0, 1.3, 1.0, 1.0), 0.0);
        assert_abs_diff_eq!(
            momentum_estimator(0.7, -1.2, 0.0, 2.0, 3.0),
            -1.2,
            epsilon = 1e-15
        );
        let t = std::f64::consts::FRAC_PI_2 / 3.0;
        assert_abs_diff_eq!(
            momentum_estimator(0.7, -1.2, t, 2.0, 3.0),
            -6.0 * 0.7,
            epsilon = 1e-12
        );
    }
}
