//! Two qubits under half-parity measurement of L_z with feedback through L_x.
//!
//! The stepper works on any representation that carries H, L_z and L_x. The
//! full 4×4 computational basis covers h1 ≠ h2; when h1 = h2 the singlet
//! decouples and the 3×3 triplet block is used instead, which is exact for
//! states that start in the triplet span and roughly twice as fast.

use std::f64::consts::{FRAC_1_SQRT_2, SQRT_2};

use log::{debug, warn};
use num_complex::Complex64 as C64;
use serde::Serialize;

use crate::ensemble::{self, EnsembleConfig, EnsembleStats, TrajectoryRecord};
use crate::error::{Result, SimError};
use crate::feedback::PIController;
use crate::quantum::{
    concurrence_with_floor, pauli, CMatrix, DensityMatrix, Observable, TripletDecomposition,
    POSITIVITY_ABORT, POSITIVITY_WARN,
};
use crate::stochastic::{ExponentialFilter, FilterSpec, NoiseHistory, WienerSource};

const I: C64 = C64::new(0.0, 1.0);

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TwoQubitModel {
    pub h1: f64,
    pub h2: f64,
    pub k: f64,
    pub eta: f64,
}

impl TwoQubitModel {
    pub fn new(h1: f64, h2: f64, k: f64, eta: f64) -> Result<Self> {
        if !(k > 0.0) || !k.is_finite() {
            return Err(SimError::invalid("k", format!("must be positive, got {k}")));
        }
        if !(eta > 0.0 && eta <= 1.0) {
            return Err(SimError::invalid(
                "eta",
                format!("must lie in (0, 1], got {eta}"),
            ));
        }
        if !h1.is_finite() || !h2.is_finite() {
            return Err(SimError::invalid("h", "must be finite"));
        }
        Ok(TwoQubitModel { h1, h2, k, eta })
    }

    pub fn symmetric(h: f64, k: f64, eta: f64) -> Result<Self> {
        Self::new(h, h, k, eta)
    }

    pub fn is_symmetric(&self) -> bool {
        self.h1 == self.h2
    }

    pub fn lz(&self) -> Observable<4> {
        Observable::new(
            (pauli::on_first(&pauli::z()) + pauli::on_second(&pauli::z())) * C64::from(0.5),
        )
    }

    pub fn lx(&self) -> Observable<4> {
        Observable::new(
            (pauli::on_first(&pauli::x()) + pauli::on_second(&pauli::x())) * C64::from(0.5),
        )
    }

    pub fn hamiltonian(&self) -> Observable<4> {
        Observable::new(
            pauli::on_first(&pauli::z()) * C64::from(self.h1)
                + pauli::on_second(&pauli::z()) * C64::from(self.h2),
        )
    }

    /// Dephasing rate α_p²/(kη) induced by feeding back white measurement noise.
    pub fn kappa(&self, alpha_p: f64) -> f64 {
        alpha_p * alpha_p / (self.k * self.eta)
    }
}

/// j = 2⟨L_z⟩ + (dW/dt)/√(kη).
pub fn measurement_current(model: &TwoQubitModel, rho: &DensityMatrix<4>, dw: f64, dt: f64) -> f64 {
    2.0 * rho.expectation(&model.lz()).re + dw / (dt * (model.k * model.eta).sqrt())
}

/// H, L_z, L_x and their products in a fixed representation.
#[derive(Debug, Clone)]
pub struct SmeOperators<const D: usize> {
    pub h: CMatrix<D>,
    pub lz: CMatrix<D>,
    pub lx: CMatrix<D>,
    lz2: CMatrix<D>,
    lx2: CMatrix<D>,
    lxlz: CMatrix<D>,
    pub k: f64,
    pub eta: f64,
}

impl<const D: usize> SmeOperators<D> {
    fn build(h: CMatrix<D>, lz: CMatrix<D>, lx: CMatrix<D>, model: &TwoQubitModel) -> Self {
        SmeOperators {
            lz2: lz * lz,
            lx2: lx * lx,
            lxlz: lx * lz,
            h,
            lz,
            lx,
            k: model.k,
            eta: model.eta,
        }
    }

    pub fn mean_lz(&self, rho: &CMatrix<D>) -> f64 {
        let mut acc = 0.0;
        for i in 0..D {
            for j in 0..D {
                acc += (self.lz[(i, j)] * rho[(j, i)]).re;
            }
        }
        acc
    }
}

impl SmeOperators<4> {
    /// Computational basis ↑↑, ↑↓, ↓↑, ↓↓.
    pub fn full(model: &TwoQubitModel) -> Self {
        Self::build(
            *model.hamiltonian().matrix(),
            *model.lz().matrix(),
            *model.lx().matrix(),
            model,
        )
    }
}

impl SmeOperators<3> {
    /// Triplet basis T_1, T_0, T_−1. Only valid for h1 = h2.
    pub fn triplet(model: &TwoQubitModel) -> Result<Self> {
        if !model.is_symmetric() {
            return Err(SimError::invalid(
                "h2",
                "triplet representation needs h1 = h2",
            ));
        }
        let z = C64::from(0.0);
        let g = C64::from(FRAC_1_SQRT_2);
        let lz = CMatrix::<3>::from_diagonal(&nalgebra::Vector3::new(1.0.into(), z, (-1.0).into()));
        let lx = CMatrix::<3>::new(z, g, z, g, z, g, z, g, z);
        let h = lz * C64::from(model.h1 + model.h2);
        Ok(Self::build(h, lz, lx, model))
    }
}

/// Scalar coefficients of one Euler-Maruyama step:
/// dρ = −i[H,ρ]dt + kD[L_z]ρdt + κD[L_x]ρdt − iu[L_x,ρ]dt − iv[L_x,{L_z,ρ}]dt
///      + √(ηk)H[L_z]ρ dW − iw[L_x,ρ] dW.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmeCoefficients {
    pub u: f64,
    pub v: f64,
    pub w: f64,
    pub kappa: f64,
}

impl SmeCoefficients {
    /// Undelayed P feedback enters through the Itô product of the current
    /// noise with the measurement back-action.
    pub fn no_delay(model: &TwoQubitModel, alpha_p: f64, alpha_i: f64, j_filtered: f64) -> Self {
        SmeCoefficients {
            u: alpha_i * j_filtered,
            v: alpha_p,
            w: alpha_p / (model.eta * model.k).sqrt(),
            kappa: model.kappa(alpha_p),
        }
    }

    /// Delayed P feedback acts through the stored error e(t − τ_P). The
    /// dephasing it induces is only present once real data reaches the
    /// delay line.
    pub fn delayed(
        model: &TwoQubitModel,
        alpha_p: f64,
        alpha_i: f64,
        j_filtered: f64,
        e_delayed: f64,
        delay_filled: bool,
    ) -> Self {
        SmeCoefficients {
            u: alpha_i * j_filtered + alpha_p * e_delayed,
            v: 0.0,
            w: 0.0,
            kappa: if delay_filled {
                model.kappa(alpha_p)
            } else {
                0.0
            },
        }
    }
}

/// Drift and noise factors, written so that the increment is X + X† with
/// X = (K dt + A dW)ρ + ½dt(BρB† + κ' L_xρL_x).
fn step_matrix<const D: usize>(
    ops: &SmeOperators<D>,
    rho: &CMatrix<D>,
    c: &SmeCoefficients,
    dw: f64,
    dt: f64,
) -> CMatrix<D> {
    let k = ops.k;
    let sqrt_k = k.sqrt();
    let sqrt_etak = (ops.eta * k).sqrt();
    // K = −iH − ½kL_z² − ½κL_x² − iuL_x − ivL_xL_z
    // A = √(ηk)L_z − iwL_x
    let mut g = ops.h * (-I * dt)
        - ops.lz2 * C64::from(0.5 * k * dt)
        - ops.lx2 * C64::from(0.5 * c.kappa * dt)
        + ops.lz * C64::from(sqrt_etak * dw)
        - ops.lx * (I * (c.u * dt + c.w * dw));
    if c.v != 0.0 {
        g -= ops.lxlz * (I * (c.v * dt));
    }
    let mut x = g * rho;
    // B = √k L_z − i(v/√k)L_x, κ' = κ − v²/k
    let b = ops.lz * C64::from(sqrt_k) - ops.lx * (I * (c.v / sqrt_k));
    let mut sandwich = b * rho * b.adjoint();
    let kappa_rest = c.kappa - c.v * c.v / k;
    if kappa_rest != 0.0 {
        sandwich += ops.lx * rho * ops.lx * C64::from(kappa_rest);
    }
    x += sandwich * C64::from(0.5 * dt);
    let mean = ops.mean_lz(rho);
    rho + x + x.adjoint() - rho * C64::from(2.0 * sqrt_etak * mean * dw)
}

fn normalized<const D: usize>(m: CMatrix<D>) -> Result<CMatrix<D>> {
    let tr = m.trace();
    if !(tr.re.abs() >= crate::quantum::MIN_TRACE) || !tr.re.is_finite() {
        return Err(SimError::TraceCollapse { trace: tr.norm() });
    }
    Ok(m * C64::from(1.0 / tr.re))
}

/// One normalized Euler-Maruyama step with explicit coefficients.
pub fn sme_step<const D: usize>(
    ops: &SmeOperators<D>,
    rho: &CMatrix<D>,
    c: &SmeCoefficients,
    dw: f64,
    dt: f64,
) -> Result<CMatrix<D>> {
    normalized(step_matrix(ops, rho, c, dw, dt))
}

/// Positivity-preserving step in Kraus form,
/// ρ' ∝ MρM† + dt·((1−η)k L_zρL_z + (κ − w²) L_xρL_x),
/// M = 1 + K dt + A dy + ½A²(dy² − dt), driven by the measurement record
/// dy = dW + 2√(ηk)⟨L_z⟩dt. Normalizing the linear equation in dy gives
/// back the same SME as [`sme_step`], and the map is completely positive
/// whenever v = √(ηk)·w and κ ≥ w², which both coefficient sets satisfy.
pub fn kraus_step<const D: usize>(
    ops: &SmeOperators<D>,
    rho: &CMatrix<D>,
    c: &SmeCoefficients,
    dw: f64,
    dt: f64,
) -> Result<CMatrix<D>> {
    let k = ops.k;
    let sqrt_etak = (ops.eta * k).sqrt();
    if (c.v - sqrt_etak * c.w).abs() > 1e-12 * (1.0 + c.v.abs()) {
        return Err(SimError::invalid("v", "Kraus form needs v = sqrt(eta k) w"));
    }
    let kappa_rest = c.kappa - c.w * c.w;
    if kappa_rest < -1e-12 * (1.0 + c.kappa) {
        return Err(SimError::invalid("kappa", "Kraus form needs kappa >= w^2"));
    }
    let dy = dw + 2.0 * sqrt_etak * ops.mean_lz(rho) * dt;
    let mut kdt = ops.h * (-I * dt)
        - ops.lz2 * C64::from(0.5 * k * dt)
        - ops.lx2 * C64::from(0.5 * c.kappa * dt)
        - ops.lx * (I * (c.u * dt));
    if c.v != 0.0 {
        kdt -= ops.lxlz * (I * (c.v * dt));
    }
    let a = ops.lz * C64::from(sqrt_etak) - ops.lx * (I * c.w);
    let m = CMatrix::<D>::identity()
        + kdt
        + a * C64::from(dy)
        + a * a * C64::from(0.5 * (dy * dy - dt));
    let mut next = m * rho * m.adjoint();
    next += ops.lz * rho * ops.lz * C64::from((1.0 - ops.eta) * k * dt);
    if kappa_rest > 0.0 {
        next += ops.lx * rho * ops.lx * C64::from(kappa_rest * dt);
    }
    // exact Hermitian symmetry keeps rounding from accumulating
    normalized((next + next.adjoint()) * C64::from(0.5))
}

/// Drift only: Kρ + ρK† + BρB† + κ'L_xρL_x.
pub fn sme_drift<const D: usize>(
    ops: &SmeOperators<D>,
    rho: &CMatrix<D>,
    c: &SmeCoefficients,
) -> CMatrix<D> {
    // The increment at dt = 1, dW = 0 minus ρ is linear in the drift.
    step_matrix(ops, rho, c, 0.0, 1.0) - rho
}

/// Step for τ_P = 0, reading dW from the newest history entry.
pub fn step_no_delay<const D: usize>(
    model: &TwoQubitModel,
    ops: &SmeOperators<D>,
    ctrl: &PIController,
    rho: &DensityMatrix<D>,
    hist: &NoiseHistory,
    j_filtered: f64,
    n: usize,
) -> Result<DensityMatrix<D>> {
    if ctrl.is_delayed() {
        return Err(SimError::invalid(
            "tau_p",
            "step_no_delay requires tau_p = 0",
        ));
    }
    let dw = hist.increment_at_lag(0)?;
    let c = SmeCoefficients::no_delay(model, ctrl.alpha_p.at(n), ctrl.alpha_i.at(n), j_filtered);
    sme_step(ops, rho.matrix(), &c, dw, hist.dt()).map(DensityMatrix::from_matrix_unchecked)
}

/// Step for τ_P > 0 using the stored error sample e(t − τ_P).
pub fn step_with_delay<const D: usize>(
    model: &TwoQubitModel,
    ops: &SmeOperators<D>,
    ctrl: &PIController,
    rho: &DensityMatrix<D>,
    hist: &NoiseHistory,
    j_filtered: f64,
    n: usize,
) -> Result<DensityMatrix<D>> {
    if !ctrl.is_delayed() {
        return Err(SimError::invalid(
            "tau_p",
            "step_with_delay requires tau_p > 0",
        ));
    }
    let dw = hist.increment_at_lag(0)?;
    let e_delayed = hist.error_at_lag(ctrl.delay_steps)?;
    let filled = hist.len() > ctrl.delay_steps;
    let c = SmeCoefficients::delayed(
        model,
        ctrl.alpha_p.at(n),
        ctrl.alpha_i.at(n),
        j_filtered,
        e_delayed,
        filled,
    );
    sme_step(ops, rho.matrix(), &c, dw, hist.dt()).map(DensityMatrix::from_matrix_unchecked)
}

/// One RK4 step of the noise-averaged master equation for undelayed P feedback.
pub fn deterministic_mean_step(
    model: &TwoQubitModel,
    alpha_p: f64,
    rho: &DensityMatrix<4>,
    dt: f64,
) -> Result<DensityMatrix<4>> {
    let ops = SmeOperators::full(model);
    let c = SmeCoefficients::no_delay(model, alpha_p, 0.0, 0.0);
    rk4(&ops, rho.matrix(), &c, dt).map(DensityMatrix::from_matrix_unchecked)
}

pub fn rk4<const D: usize>(
    ops: &SmeOperators<D>,
    rho: &CMatrix<D>,
    c: &SmeCoefficients,
    dt: f64,
) -> Result<CMatrix<D>> {
    let h = C64::from(dt);
    let k1 = sme_drift(ops, rho, c);
    let k2 = sme_drift(ops, &(rho + k1 * (h * 0.5)), c);
    let k3 = sme_drift(ops, &(rho + k2 * (h * 0.5)), c);
    let k4 = sme_drift(ops, &(rho + k3 * h), c);
    normalized(rho + (k1 + k2 * C64::from(2.0) + k3 * C64::from(2.0) + k4) * (h / 6.0))
}

/// Integrates the noise-averaged equation from `rho` for `t_final`, returning
/// the final state.
pub fn integrate_mean(
    model: &TwoQubitModel,
    alpha_p: f64,
    rho: &DensityMatrix<4>,
    dt: f64,
    t_final: f64,
) -> Result<DensityMatrix<4>> {
    let ops = SmeOperators::full(model);
    let c = SmeCoefficients::no_delay(model, alpha_p, 0.0, 0.0);
    let mut m = *rho.matrix();
    for _ in 0..(t_final / dt).round() as usize {
        m = rk4(&ops, &m, &c, dt)?;
    }
    Ok(DensityMatrix::from_matrix_unchecked(m))
}

/// Closed-form long-time E[T_0] for undelayed P feedback.
pub fn analytic_t0_steady(model: &TwoQubitModel, alpha_p: f64) -> f64 {
    let s2 = (model.h1 + model.h2).powi(2);
    let (k, eta, a2) = (model.k, model.eta, alpha_p * alpha_p);
    let num = 4.0 * eta * s2 + k * k * eta + 8.0 * eta * eta * k * k + a2;
    let den = 12.0 * s2 + 3.0 * k * k * eta + 8.0 * eta * eta * k * k + 3.0 * a2;
    num / den
}

/// Exact long-time T_0 of the undelayed P-feedback master equation, from the
/// fixed point of its nine real component equations. Differs from
/// [`analytic_t0_steady`] unless h1 + h2 = 0.
pub fn exact_t0_steady(model: &TwoQubitModel, alpha_p: f64) -> f64 {
    let s2 = (model.h1 + model.h2).powi(2);
    let (k, eta, a2) = (model.k, model.eta, alpha_p * alpha_p);
    let (k2, e2) = (k * k, eta * eta);
    let shared = 8.0 * a2 * e2 * k2 + 16.0 * a2 * e2 * s2 + 32.0 * e2 * eta * k2 * (k2 + s2);
    let num = a2 * a2
        + shared
        + eta * (5.0 * a2 * k2 + 8.0 * a2 * s2)
        + e2 * (4.0 * k2 * k2 + 20.0 * k2 * s2 + 16.0 * s2 * s2);
    let den = 3.0 * a2 * a2
        + shared
        + eta * (15.0 * a2 * k2 + 24.0 * a2 * s2)
        + e2 * (12.0 * k2 * k2 + 60.0 * k2 * s2 + 48.0 * s2 * s2);
    num / den
}

// ----- banded kernel for the triplet block -----

type Block = [[C64; 3]; 3];
const ZT: [f64; 3] = [1.0, 0.0, -1.0];

/// L_x·r with L_x tridiagonal in the triplet basis.
#[inline(always)]
fn lx_left(r: &Block) -> Block {
    let g = FRAC_1_SQRT_2;
    let mut out = [[C64::from(0.0); 3]; 3];
    for j in 0..3 {
        out[0][j] = r[1][j] * g;
        out[1][j] = (r[0][j] + r[2][j]) * g;
        out[2][j] = r[1][j] * g;
    }
    out
}

/// r·L_x.
#[inline(always)]
fn lx_right(r: &Block) -> Block {
    let g = FRAC_1_SQRT_2;
    let mut out = [[C64::from(0.0); 3]; 3];
    for i in 0..3 {
        out[i][0] = r[i][1] * g;
        out[i][1] = (r[i][0] + r[i][2]) * g;
        out[i][2] = r[i][1] * g;
    }
    out
}

/// Same equation as [`sme_step`] on the triplet block, using that L_z is
/// diagonal and L_x tridiagonal there. This is the production stepper for
/// h1 = h2.
pub fn triplet_step(
    model: &TwoQubitModel,
    rho: &CMatrix<3>,
    c: &SmeCoefficients,
    dw: f64,
    dt: f64,
) -> Result<CMatrix<3>> {
    let s = model.h1 + model.h2;
    let k = model.k;
    let sqrt_etak = (model.eta * k).sqrt();
    let mut r: Block = [[C64::from(0.0); 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            r[i][j] = rho[(i, j)];
        }
    }
    let lbar = r[0][0].re - r[2][2].re;

    let left = lx_left(&r);
    let right = lx_right(&r);
    let sandwich = lx_right(&left);
    let mut anti = r;
    for i in 0..3 {
        for j in 0..3 {
            anti[i][j] *= ZT[i] + ZT[j];
        }
    }
    let anti_left = lx_left(&anti);
    let anti_right = lx_right(&anti);

    let rot = -I * (c.u * dt + c.w * dw);
    let rot_v = -I * (c.v * dt);
    let kd = c.kappa * dt;
    let mut next = [[C64::from(0.0); 3]; 3];
    let mut trace = 0.0;
    for i in 0..3 {
        for j in i..3 {
            let dz = ZT[i] - ZT[j];
            let diag = C64::new(
                -0.5 * k * dz * dz * dt + sqrt_etak * (ZT[i] + ZT[j] - 2.0 * lbar) * dw,
                -s * dz * dt,
            );
            // L_x² = [[½,0,½],[0,1,0],[½,0,½]]
            let lx2_left = if i == 1 {
                r[1][j]
            } else {
                (r[0][j] + r[2][j]) * 0.5
            };
            let lx2_right = if j == 1 {
                r[i][1]
            } else {
                (r[i][0] + r[i][2]) * 0.5
            };
            let dissipator = sandwich[i][j] - (lx2_left + lx2_right) * 0.5;
            next[i][j] = r[i][j]
                + r[i][j] * diag
                + rot * (left[i][j] - right[i][j])
                + rot_v * (anti_left[i][j] - anti_right[i][j])
                + dissipator * kd;
        }
        trace += next[i][i].re;
    }
    if !(trace.abs() >= crate::quantum::MIN_TRACE) || !trace.is_finite() {
        return Err(SimError::TraceCollapse { trace: trace.abs() });
    }
    let inv = 1.0 / trace;
    Ok(CMatrix::<3>::from_fn(|i, j| {
        if i == j {
            C64::from(next[i][i].re * inv)
        } else if i < j {
            next[i][j] * inv
        } else {
            next[j][i].conj() * inv
        }
    }))
}

// ----- component equations in the triplet/singlet basis -----

/// Index order T_1, T_0, T_−1, S.
type Comp = [[C64; 4]; 4];
const Z: [f64; 4] = [1.0, 0.0, -1.0, 0.0];

fn comp_from(d: &TripletDecomposition) -> Comp {
    let mut r = [[C64::from(0.0); 4]; 4];
    r[0][0] = d.t_plus.into();
    r[1][1] = d.t_zero.into();
    r[2][2] = d.t_minus.into();
    r[3][3] = d.singlet.into();
    r[0][1] = d.zero_plus.conj();
    r[1][2] = d.zero_minus;
    r[0][2] = d.plus_minus;
    r[0][3] = d.singlet_coherences[0];
    r[1][3] = d.singlet_coherences[1];
    r[2][3] = d.singlet_coherences[2];
    fill_lower_hermitian(&mut r);
    r
}

fn comp_into(r: &Comp) -> TripletDecomposition {
    TripletDecomposition {
        t_minus: r[2][2].re,
        t_zero: r[1][1].re,
        t_plus: r[0][0].re,
        singlet: r[3][3].re,
        plus_minus: r[0][2],
        zero_plus: r[0][1].conj(),
        zero_minus: r[1][2],
        singlet_coherences: [r[0][3], r[1][3], r[2][3]],
    }
}

fn fill_lower_hermitian(r: &mut Comp) {
    for i in 0..4 {
        for j in 0..i {
            r[i][j] = r[j][i].conj();
        }
    }
}

/// [L_x, r] for Hermitian r, written out element by element.
fn lx_commutator(r: &Comp) -> Comp {
    let g = FRAC_1_SQRT_2;
    let (p1, p0, pm) = (r[0][0], r[1][1], r[2][2]);
    let (a, b, c) = (r[0][1], r[1][2], r[0][2]);
    let mut out = [[C64::from(0.0); 4]; 4];
    out[0][0] = -I * SQRT_2 * a.im;
    out[1][1] = I * SQRT_2 * (a.im - b.im);
    out[2][2] = I * SQRT_2 * b.im;
    out[0][1] = (p0 - p1 - c) * g;
    out[1][2] = (c + pm - p0) * g;
    out[0][2] = (b - a) * g;
    out[0][3] = r[1][3] * g;
    out[1][3] = (r[0][3] + r[2][3]) * g;
    out[2][3] = r[1][3] * g;
    // anti-Hermitian
    for i in 0..4 {
        for j in 0..i {
            out[i][j] = -out[j][i].conj();
        }
    }
    out
}

/// D[L_x]r for Hermitian r.
fn lx_dissipator(r: &Comp) -> Comp {
    let (p1, p0, pm) = (r[0][0].re, r[1][1].re, r[2][2].re);
    let (a, b, c) = (r[0][1], r[1][2], r[0][2]);
    let mut out = [[C64::from(0.0); 4]; 4];
    out[0][0] = (0.5 * p0 - 0.5 * (p1 + c.re)).into();
    out[1][1] = (0.5 * (p1 + pm + 2.0 * c.re) - p0).into();
    out[2][2] = (0.5 * p0 - 0.5 * (pm + c.re)).into();
    out[0][1] = a.conj() * 0.5 + b * 0.5 - a * 0.75 - b.conj() * 0.25;
    out[1][2] = a * 0.5 + b.conj() * 0.5 - b * 0.75 - a.conj() * 0.25;
    out[0][2] = C64::from(0.5 * p0 - 0.25 * (p1 + pm)) - c * 0.5;
    out[0][3] = -(r[0][3] + r[2][3]) * 0.25;
    out[1][3] = -r[1][3] * 0.5;
    out[2][3] = -(r[0][3] + r[2][3]) * 0.25;
    fill_lower_hermitian(&mut out);
    out
}

/// [X, r] with X = |T_0⟩⟨S| + |S⟩⟨T_0|, the singlet coupling from h1 − h2.
fn singlet_commutator(r: &Comp) -> Comp {
    let mut out = [[C64::from(0.0); 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            let left = match i {
                1 => r[3][j],
                3 => r[1][j],
                _ => C64::from(0.0),
            };
            let right = match j {
                1 => r[i][3],
                3 => r[i][1],
                _ => C64::from(0.0),
            };
            out[i][j] = left - right;
        }
    }
    out
}

/// Advances the triplet/singlet components one Euler-Maruyama step, element
/// by element, with the same coefficients and noise as the matrix stepper.
/// Used as an independent cross-check.
pub fn component_step(
    state: &TripletDecomposition,
    model: &TwoQubitModel,
    c: &SmeCoefficients,
    dw: f64,
    dt: f64,
) -> Result<TripletDecomposition> {
    let r = comp_from(state);
    let s = model.h1 + model.h2;
    let d = model.h1 - model.h2;
    let (k, sqrt_etak) = (model.k, (model.eta * model.k).sqrt());
    let lbar = r[0][0].re - r[2][2].re;

    let comm = lx_commutator(&r);
    let diss = lx_dissipator(&r);
    let xcomm = singlet_commutator(&r);
    let mut anti = r;
    for i in 0..4 {
        for j in 0..4 {
            anti[i][j] = r[i][j] * (Z[i] + Z[j]);
        }
    }
    let comm_anti = lx_commutator(&anti);

    let mut next = r;
    for i in 0..4 {
        for j in 0..4 {
            let dz = Z[i] - Z[j];
            let drift = -I * s * dz * r[i][j] - I * d * xcomm[i][j] - r[i][j] * (0.5 * k * dz * dz)
                + diss[i][j] * c.kappa
                - I * c.u * comm[i][j]
                - I * c.v * comm_anti[i][j];
            let noise = r[i][j] * (sqrt_etak * (Z[i] + Z[j] - 2.0 * lbar)) - I * c.w * comm[i][j];
            next[i][j] = r[i][j] + drift * dt + noise * dw;
        }
    }
    let tr: f64 = (0..4).map(|i| next[i][i].re).sum();
    if !(tr.abs() >= crate::quantum::MIN_TRACE) || !tr.is_finite() {
        return Err(SimError::TraceCollapse { trace: tr.abs() });
    }
    for row in next.iter_mut() {
        for v in row.iter_mut() {
            *v /= tr;
        }
    }
    Ok(comp_into(&next))
}

// ----- trajectories -----

/// Integrator for the conditional state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Scheme {
    /// [`kraus_step`], positive by construction.
    Kraus,
    /// [`sme_step`], or [`triplet_step`] on the triplet block.
    EulerMaruyama,
}

/// When the positivity monitor runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum PositivityCheck {
    OutputTimes,
    EveryStep,
}

#[derive(Debug, Clone)]
pub struct TwoQubitRun {
    pub model: TwoQubitModel,
    pub ctrl: PIController,
    pub initial: DensityMatrix<4>,
    pub scheme: Scheme,
    pub positivity: PositivityCheck,
    /// Minimum eigenvalue below which a trajectory is aborted.
    pub abort_below: f64,
}

/// Columns recorded per output time. The `rho_*` columns are the real
/// components of the state in the triplet/singlet basis, so that the mean
/// state can be rebuilt from the ensemble means.
pub const OBSERVABLES: [&str; 20] = [
    "T_m1",
    "T_0",
    "T_1",
    "concurrence",
    "T_S",
    "rho_re_10",
    "rho_im_10",
    "rho_re_0m",
    "rho_im_0m",
    "rho_re_1m",
    "rho_im_1m",
    "rho_re_1S",
    "rho_im_1S",
    "rho_re_0S",
    "rho_im_0S",
    "rho_re_mS",
    "rho_im_mS",
    "lz",
    "purity",
    "min_eigenvalue",
];

fn record_row(d: &TripletDecomposition, conc: f64, min_eig: f64) -> [f64; 20] {
    let a = d.zero_plus.conj();
    let s = d.singlet_coherences;
    let rho = d.to_density_matrix();
    [
        d.t_minus,
        d.t_zero,
        d.t_plus,
        conc,
        d.singlet,
        a.re,
        a.im,
        d.zero_minus.re,
        d.zero_minus.im,
        d.plus_minus.re,
        d.plus_minus.im,
        s[0].re,
        s[0].im,
        s[1].re,
        s[1].im,
        s[2].re,
        s[2].im,
        d.mean_lz(),
        rho.purity(),
        min_eig,
    ]
}

fn decompose_triplet_block(m: &CMatrix<3>) -> TripletDecomposition {
    let zero = C64::from(0.0);
    TripletDecomposition {
        t_minus: m[(2, 2)].re,
        t_zero: m[(1, 1)].re,
        t_plus: m[(0, 0)].re,
        singlet: 0.0,
        plus_minus: m[(0, 2)],
        zero_plus: m[(1, 0)],
        zero_minus: m[(1, 2)],
        singlet_coherences: [zero; 3],
    }
}

/// Abort floor suited to [`Scheme::EulerMaruyama`]. At dt = 0.01 that scheme
/// dips to −5e−4 under feedback and far lower under strong undelayed P, so
/// the tight [`crate::quantum::POSITIVITY_ABORT`] is only usable with
/// [`Scheme::Kraus`].
pub const TRAJECTORY_ABORT: f64 = -1e-2;

/// Returns true when the eigenvalue is below the warning level.
fn monitor(min_eig: f64, abort_below: f64, t: f64) -> Result<bool> {
    if min_eig < abort_below || !min_eig.is_finite() {
        warn!("state eigenvalue {min_eig:.3e} below {abort_below:.0e} at t = {t}, aborting");
        return Err(SimError::NotPositive {
            min_eigenvalue: min_eig,
        });
    }
    Ok(min_eig < POSITIVITY_WARN)
}

impl TwoQubitRun {
    pub fn new(model: TwoQubitModel, ctrl: PIController) -> Self {
        TwoQubitRun {
            model,
            ctrl,
            initial: DensityMatrix::pure(&crate::quantum::triplet::t_plus()).expect("unit vector"),
            scheme: Scheme::Kraus,
            positivity: PositivityCheck::OutputTimes,
            abort_below: POSITIVITY_ABORT,
        }
    }

    /// True when the 3×3 triplet block is exact for this run.
    pub fn uses_triplet_block(&self) -> bool {
        let d = crate::quantum::triplet_decompose(&self.initial);
        let leak = d.singlet + d.singlet_coherences.iter().map(|c| c.norm()).sum::<f64>();
        self.model.is_symmetric() && leak < 1e-14
    }

    /// Runs one trajectory and records [`OBSERVABLES`] at every output time.
    pub fn trajectory(&self, ens: &EnsembleConfig, seed: u64) -> Result<TrajectoryRecord> {
        if self.uses_triplet_block() {
            let ops = SmeOperators::triplet(&self.model)?;
            let d = crate::quantum::triplet_decompose(&self.initial);
            let m = CMatrix::<3>::from_fn(|i, j| {
                let r = comp_from(&d);
                r[i][j]
            });
            let model = self.model;
            let dt = ens.dt;
            match self.scheme {
                Scheme::Kraus => {
                    let step = |r: &CMatrix<3>, c: &SmeCoefficients, dw: f64| {
                        kraus_step(&ops, r, c, dw, dt)
                    };
                    self.trajectory_in(&ops, m, step, decompose_triplet_block, ens, seed)
                }
                Scheme::EulerMaruyama => {
                    let step = move |r: &CMatrix<3>, c: &SmeCoefficients, dw: f64| {
                        triplet_step(&model, r, c, dw, dt)
                    };
                    self.trajectory_in(&ops, m, step, decompose_triplet_block, ens, seed)
                }
            }
        } else {
            let ops = SmeOperators::full(&self.model);
            let dt = ens.dt;
            let scheme = self.scheme;
            let step = |r: &CMatrix<4>, c: &SmeCoefficients, dw: f64| match scheme {
                Scheme::Kraus => kraus_step(&ops, r, c, dw, dt),
                Scheme::EulerMaruyama => sme_step(&ops, r, c, dw, dt),
            };
            self.trajectory_in(
                &ops,
                *self.initial.matrix(),
                step,
                |m| crate::quantum::triplet_decompose(&DensityMatrix::from_matrix_unchecked(*m)),
                ens,
                seed,
            )
        }
    }

    fn trajectory_in<const D: usize>(
        &self,
        ops: &SmeOperators<D>,
        rho0: CMatrix<D>,
        step: impl Fn(&CMatrix<D>, &SmeCoefficients, f64) -> Result<CMatrix<D>>,
        decompose: impl Fn(&CMatrix<D>) -> TripletDecomposition,
        ens: &EnsembleConfig,
        seed: u64,
    ) -> Result<TrajectoryRecord> {
        let dt = ens.dt;
        let ctrl = &self.ctrl;
        let n_steps = ens.n_steps();
        let mut rec = TrajectoryRecord::with_capacity(OBSERVABLES.len(), ens.n_outputs());
        let mut hist = NoiseHistory::new(dt, ctrl.history_lag());
        let mut filter = if ctrl.has_integral() {
            Some(ExponentialFilter::new(&FilterSpec::exponential(
                ctrl.tau_i, dt,
            )?))
        } else {
            None
        };
        let mut noise = WienerSource::from_seed(seed);
        let current_scale = 1.0 / (dt * (self.model.k * self.model.eta).sqrt());
        let mut rho = rho0;
        let (mut warnings, mut worst) = (0usize, f64::INFINITY);

        for n in 0..=n_steps {
            let t = n as f64 * dt;
            let output = n % ens.output_stride == 0;
            if output || self.positivity == PositivityCheck::EveryStep {
                let d = decompose(&rho);
                let (conc, min_eig) =
                    concurrence_with_floor(&d.to_density_matrix(), self.abort_below)?;
                if monitor(min_eig, self.abort_below, t)? {
                    warnings += 1;
                    worst = worst.min(min_eig);
                }
                if output {
                    rec.push_row(&record_row(&d, conc, min_eig));
                }
            }
            if n == n_steps {
                break;
            }
            let j_filtered = filter.as_ref().map_or(0.0, |f| f.value());
            let dw = noise.sample_increment(dt);
            let e = 2.0 * ops.mean_lz(&rho) + dw * current_scale - ctrl.goal.at(t);
            hist.push(dw, e);
            if let Some(f) = filter.as_mut() {
                f.update(&hist)?;
            }
            let (ap, ai) = (ctrl.alpha_p.at(n), ctrl.alpha_i.at(n));
            let c = if ctrl.is_delayed() {
                let e_delayed = hist.error_at_lag(ctrl.delay_steps)?;
                let filled = hist.len() > ctrl.delay_steps;
                SmeCoefficients::delayed(&self.model, ap, ai, j_filtered, e_delayed, filled)
            } else {
                SmeCoefficients::no_delay(&self.model, ap, ai, j_filtered)
            };
            rho = step(&rho, &c, dw)?;
        }
        if warnings > 0 {
            debug!("seed {seed}: {warnings} checks below {POSITIVITY_WARN:.0e}, worst {worst:.3e}");
        }
        Ok(rec)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TwoQubitStats {
    pub stats: EnsembleStats,
    /// Concurrence of the ensemble-mean state at each output time.
    pub mean_state_concurrence: Vec<f64>,
}

impl TwoQubitStats {
    /// Ensemble-mean state at output index `i`.
    pub fn mean_state(&self, i: usize) -> Result<DensityMatrix<4>> {
        let get = |name: &str| self.stats.series(name).map(|s| s.mean[i]);
        let cx = |re: &str, im: &str| -> Result<C64> { Ok(C64::new(get(re)?, get(im)?)) };
        let d = TripletDecomposition {
            t_minus: get("T_m1")?,
            t_zero: get("T_0")?,
            t_plus: get("T_1")?,
            singlet: get("T_S")?,
            plus_minus: cx("rho_re_1m", "rho_im_1m")?,
            zero_plus: cx("rho_re_10", "rho_im_10")?.conj(),
            zero_minus: cx("rho_re_0m", "rho_im_0m")?,
            singlet_coherences: [
                cx("rho_re_1S", "rho_im_1S")?,
                cx("rho_re_0S", "rho_im_0S")?,
                cx("rho_re_mS", "rho_im_mS")?,
            ],
        };
        Ok(d.to_density_matrix())
    }

    /// Window average of the per-trajectory concurrence and its standard error.
    pub fn steady_concurrence(&self) -> Result<(f64, f64)> {
        let s = self.stats.series("concurrence")?;
        Ok((s.window_mean, s.window_sem))
    }
}

pub fn run_twoqubit_ensemble(run: &TwoQubitRun, ens: &EnsembleConfig) -> Result<TwoQubitStats> {
    let stats = ensemble::run_ensemble(&OBSERVABLES, ens, |_, seed| run.trajectory(ens, seed))?;
    let mut out = TwoQubitStats {
        stats,
        mean_state_concurrence: Vec::new(),
    };
    // λ_min of an average is at least the average λ_min, so the run's own
    // floor also bounds the mean state.
    out.mean_state_concurrence = (0..out.stats.times.len())
        .map(|i| concurrence_with_floor(&out.mean_state(i)?, run.abort_below).map(|(c, _)| c))
        .collect::<Result<_>>()?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantum::{triplet, triplet_decompose};
    use approx::assert_abs_diff_eq;

    fn paper_model() -> TwoQubitModel {
        TwoQubitModel::symmetric(0.1, 1.0, 0.4).unwrap()
    }

    #[test]
    fn current_examples() {
        let m = paper_model();
        let t0 = DensityMatrix::pure(&triplet::t_zero()).unwrap();
        let t1 = DensityMatrix::pure(&triplet::t_plus()).unwrap();
        assert_abs_diff_eq!(
            measurement_current(&m, &t0, 0.0, 0.001),
            0.0,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(
            measurement_current(&m, &t1, 0.0, 0.001),
            2.0,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(
            measurement_current(&m, &t0, 0.01, 0.001),
            15.811388300841896,
            epsilon = 1e-9
        );
    }

    #[test]
    fn analytic_examples() {
        let m = paper_model();
        assert_abs_diff_eq!(analytic_t0_steady(&m, 0.2), 1.784 / 3.08, epsilon = 1e-12);
        assert_abs_diff_eq!(analytic_t0_steady(&m, 1e6), 1.0 / 3.0, epsilon = 1e-9);
        let ideal = TwoQubitModel::symmetric(0.0, 1.0, 1.0).unwrap();
        assert_abs_diff_eq!(analytic_t0_steady(&ideal, 0.0), 9.0 / 11.0, epsilon = 1e-12);
    }

    #[test]
    fn t0_is_invariant_without_feedback() {
        let m = paper_model();
        let ops = SmeOperators::full(&m);
        let rho = *DensityMatrix::pure(&triplet::t_zero()).unwrap().matrix();
        let c = SmeCoefficients::no_delay(&m, 0.0, 0.0, 0.0);
        let next = sme_step(&ops, &rho, &c, 0.37, 0.01).unwrap();
        assert!((next - rho).iter().all(|z| z.norm() < 1e-15));
    }

    #[test]
    fn t1_populations_frozen_without_feedback() {
        let m = paper_model();
        let rho = DensityMatrix::pure(&triplet::t_plus()).unwrap();
        let next = deterministic_mean_step(&m, 0.0, &rho, 0.1).unwrap();
        let d = triplet_decompose(&next);
        assert_abs_diff_eq!(d.t_plus, 1.0, epsilon = 1e-14);
    }

    #[test]
    fn triplet_block_matches_full_matrix() {
        let m = paper_model();
        let full = SmeOperators::full(&m);
        let block = SmeOperators::triplet(&m).unwrap();
        let mut a = *DensityMatrix::pure(&triplet::t_plus()).unwrap().matrix();
        let mut b = CMatrix::<3>::zeros();
        b[(0, 0)] = 1.0.into();
        let c = SmeCoefficients::no_delay(&m, 0.2, 0.1, 0.3);
        let mut src = WienerSource::from_seed(3);
        for _ in 0..200 {
            let dw = src.sample_increment(0.01);
            a = sme_step(&full, &a, &c, dw, 0.01).unwrap();
            b = sme_step(&block, &b, &c, dw, 0.01).unwrap();
        }
        let da = triplet_decompose(&DensityMatrix::from_matrix_unchecked(a));
        let db = decompose_triplet_block(&b);
        assert_abs_diff_eq!(da.t_zero, db.t_zero, epsilon = 1e-12);
        assert_abs_diff_eq!(da.plus_minus.re, db.plus_minus.re, epsilon = 1e-12);
        assert_abs_diff_eq!(da.zero_plus.im, db.zero_plus.im, epsilon = 1e-12);
    }

    #[test]
    fn fast_drift_matches_superoperator_form() {
        // Drift written with explicit dissipators and commutators.
        let m = TwoQubitModel::new(0.13, 0.05, 1.3, 0.6).unwrap();
        let ops = SmeOperators::full(&m);
        let rho = DensityMatrix::new(
            CMatrix::<4>::from_fn(|i, j| {
                C64::new((i + j) as f64 * 0.1, i as f64 - j as f64) * 0.05
            }) + CMatrix::<4>::identity(),
        )
        .unwrap();
        let c = SmeCoefficients {
            u: 0.31,
            v: 0.2,
            w: 0.17,
            kappa: 0.5,
        };
        let (lz, lx, h) = (m.lz(), m.lx(), m.hamiltonian());
        let r = rho.matrix();
        let comm = |a: &CMatrix<4>, b: &CMatrix<4>| a * b - b * a;
        let expected = comm(h.matrix(), r) * (-I)
            + crate::quantum::dissipator(&lz.scaled(m.k.sqrt()), &rho)
            + crate::quantum::dissipator(&lx, &rho) * C64::from(c.kappa)
            - comm(lx.matrix(), r) * (I * c.u)
            - comm(lx.matrix(), &(lz.matrix() * r + r * lz.matrix())) * (I * c.v);
        let got = sme_drift(&ops, r, &c);
        assert!((got - expected).iter().all(|z| z.norm() < 1e-13));
    }

    #[test]
    fn delayed_stepper_without_data_is_plain_measurement() {
        let m = paper_model();
        let dt = 0.01;
        let ops = SmeOperators::full(&m);
        let delayed = PIController::new(0.2, 0.0, 5.0, 0.0, dt).unwrap();
        let off = SmeCoefficients::no_delay(&m, 0.0, 0.0, 0.0);
        let mut hist = NoiseHistory::new(dt, delayed.history_lag());
        let mut src = WienerSource::from_seed(11);
        let mut a = DensityMatrix::pure(&triplet::t_plus()).unwrap();
        a = DensityMatrix::new(
            *a.matrix() * C64::from(0.7) + CMatrix::<4>::identity() * C64::from(0.075),
        )
        .unwrap();
        let mut b = *a.matrix();
        for n in 0..400 {
            let dw = src.sample_increment(dt);
            hist.push(dw, 1.0);
            a = step_with_delay(&m, &ops, &delayed, &a, &hist, 0.0, n).unwrap();
            b = sme_step(&ops, &b, &off, dw, dt).unwrap();
        }
        assert!((a.matrix() - b).iter().all(|z| z.norm() < 1e-14));
    }

    #[test]
    fn banded_kernel_matches_generic_stepper() {
        let m = paper_model();
        let ops = SmeOperators::triplet(&m).unwrap();
        let mut a = CMatrix::<3>::zeros();
        a[(0, 0)] = 0.6.into();
        a[(1, 1)] = 0.3.into();
        a[(2, 2)] = 0.1.into();
        a[(0, 1)] = C64::new(0.2, 0.1);
        a[(1, 0)] = C64::new(0.2, -0.1);
        let mut b = a;
        let cs = [
            SmeCoefficients::no_delay(&m, 0.2, 0.1, 0.3),
            SmeCoefficients {
                u: -0.4,
                v: 0.0,
                w: 0.0,
                kappa: 0.1,
            },
        ];
        let mut src = WienerSource::from_seed(5);
        for n in 0..2000 {
            let c = &cs[n % 2];
            let dw = src.sample_increment(0.01);
            a = triplet_step(&m, &a, c, dw, 0.01).unwrap();
            b = sme_step(&ops, &b, c, dw, 0.01).unwrap();
        }
        assert!((a - b).iter().all(|z| z.norm() < 1e-12));
    }

    #[test]
    fn exact_steady_state_agrees_with_closed_form_only_without_field() {
        let m = TwoQubitModel::symmetric(0.0, 1.0, 0.4).unwrap();
        assert_abs_diff_eq!(
            exact_t0_steady(&m, 0.2),
            analytic_t0_steady(&m, 0.2),
            epsilon = 1e-14
        );
        let m = paper_model();
        let exact = exact_t0_steady(&m, 0.2);
        assert_abs_diff_eq!(exact, 0.639279, epsilon = 1e-6);
        let rho = integrate_mean(
            &m,
            0.2,
            &DensityMatrix::pure(&triplet::t_plus()).unwrap(),
            0.01,
            400.0,
        )
        .unwrap();
        assert_abs_diff_eq!(triplet_decompose(&rho).t_zero, exact, epsilon = 1e-8);
    }

    /// Nodes and weights of probabilists' Gauss–Hermite quadrature.
    fn gauss_hermite(n: usize) -> Vec<(f64, f64)> {
        let jacobi = nalgebra::DMatrix::<f64>::from_fn(n, n, |i, j| {
            if i + 1 == j || j + 1 == i {
                (i.max(j) as f64).sqrt()
            } else {
                0.0
            }
        });
        let eig = jacobi.symmetric_eigen();
        (0..n)
            .map(|i| (eig.eigenvalues[i], eig.eigenvectors[(0, i)].powi(2)))
            .collect()
    }

    fn lopsided() -> CMatrix<4> {
        let a = [C64::new(0.6, 0.0), C64::new(0.3, 0.2)];
        let b = [C64::new(0.2, -0.1), C64::new(0.7, 0.4)];
        let v = nalgebra::SVector::<C64, 4>::from_fn(|i, _| a[i / 2] * b[i % 2]);
        *DensityMatrix::pure(&(v / C64::from(v.norm())))
            .unwrap()
            .matrix()
    }

    #[test]
    fn kraus_step_mean_matches_drift_to_second_order() {
        let m = TwoQubitModel::new(0.3, -0.1, 1.0, 0.4).unwrap();
        let ops = SmeOperators::full(&m);
        let rho = lopsided();
        let nodes = gauss_hermite(40);
        for c in [
            SmeCoefficients::no_delay(&m, 0.4, 0.2, 0.3),
            SmeCoefficients::delayed(&m, 0.4, 0.2, 0.3, -0.5, true),
        ] {
            let err = |dt: f64| {
                let mut mean = CMatrix::<4>::zeros();
                for &(x, wgt) in &nodes {
                    mean += kraus_step(&ops, &rho, &c, x * dt.sqrt(), dt).unwrap() * C64::from(wgt);
                }
                (mean - rho - sme_drift(&ops, &rho, &c) * C64::from(dt)).norm()
            };
            let (e1, e2) = (err(1e-3), err(5e-4));
            assert!(e1 < 1e-4, "{e1:e}");
            assert!(e1 / e2 > 3.0, "local error not O(dt^2): {e1:e} {e2:e}");
        }
    }

    #[test]
    fn kraus_step_stays_positive_under_strong_feedback() {
        let m = paper_model();
        let ops = SmeOperators::full(&m);
        let mut rho = *DensityMatrix::pure(&triplet::t_plus()).unwrap().matrix();
        let mut src = crate::stochastic::WienerSource::from_seed(4);
        let dt = 0.01;
        let c = SmeCoefficients::no_delay(&m, 0.2, 0.0, 0.0);
        for _ in 0..20_000 {
            rho = kraus_step(&ops, &rho, &c, src.sample_increment(dt), dt).unwrap();
            let min = rho.symmetric_eigenvalues().min();
            assert!(min > -1e-12, "{min:e}");
            assert_abs_diff_eq!(rho.trace().re, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn kraus_step_rejects_inconsistent_coefficients() {
        let m = paper_model();
        let ops = SmeOperators::full(&m);
        let rho = lopsided();
        let mut c = SmeCoefficients::no_delay(&m, 0.2, 0.0, 0.0);
        c.v *= 2.0;
        assert!(kraus_step(&ops, &rho, &c, 0.0, 0.01).is_err());
    }
}
