//! Dense density-matrix algebra: the measurement superoperators, expectation
//! values, positivity monitoring, the Wootters concurrence and the
//! triplet/singlet decomposition of two-qubit states.

use std::f64::consts::FRAC_1_SQRT_2;

use nalgebra::{SMatrix, SVector};
use num_complex::Complex64 as C64;

use crate::error::{Result, SimError};

pub type CMatrix<const D: usize> = SMatrix<C64, D, D>;
pub type CVector<const D: usize> = SVector<C64, D>;

/// Largest element-wise deviation from Hermiticity tolerated when validating
/// user-supplied states.
pub const HERMITIAN_TOL: f64 = 1e-10;
/// Min eigenvalue below which a positivity diagnostic is emitted.
pub const POSITIVITY_WARN: f64 = -1e-8;
/// Min eigenvalue below which integration is aborted.
pub const POSITIVITY_ABORT: f64 = -1e-5;
/// Traces smaller than this in magnitude are treated as an integrator blow-up.
pub const MIN_TRACE: f64 = 1e-14;

const ZERO: C64 = C64::new(0.0, 0.0);
const ONE: C64 = C64::new(1.0, 0.0);
const I: C64 = C64::new(0.0, 1.0);

/// A (usually Hermitian) operator on a `D`-dimensional Hilbert space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observable<const D: usize>(CMatrix<D>);

impl<const D: usize> Observable<D> {
    pub fn new(matrix: CMatrix<D>) -> Self {
        Observable(matrix)
    }

    pub fn identity() -> Self {
        Observable(CMatrix::<D>::identity())
    }

    pub fn matrix(&self) -> &CMatrix<D> {
        &self.0
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        hermitian_deviation(&self.0) <= tol
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Observable(self.0 * C64::from(factor))
    }
}

/// The conditional quantum state. Constructors normalize the trace; the
/// stochastic steppers re-normalize after every step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DensityMatrix<const D: usize>(CMatrix<D>);

impl<const D: usize> DensityMatrix<D> {
    /// Validates Hermiticity and normalizes the trace.
    pub fn new(matrix: CMatrix<D>) -> Result<Self> {
        let deviation = hermitian_deviation(&matrix);
        if deviation > HERMITIAN_TOL {
            return Err(SimError::NotHermitian { deviation });
        }
        DensityMatrix(matrix).normalize()
    }

    /// Wraps a matrix without any checks. Used by steppers that maintain the
    /// invariants themselves.
    pub fn from_matrix_unchecked(matrix: CMatrix<D>) -> Self {
        DensityMatrix(matrix)
    }

    pub fn pure(state: &CVector<D>) -> Result<Self> {
        let norm = state.norm();
        if norm < MIN_TRACE {
            return Err(SimError::TraceCollapse { trace: norm * norm });
        }
        let psi = state / C64::from(norm);
        Ok(DensityMatrix(psi * psi.adjoint()))
    }

    pub fn maximally_mixed() -> Self {
        DensityMatrix(CMatrix::<D>::identity() / C64::from(D as f64))
    }

    pub fn matrix(&self) -> &CMatrix<D> {
        &self.0
    }

    pub fn into_matrix(self) -> CMatrix<D> {
        self.0
    }

    pub fn trace(&self) -> C64 {
        self.0.trace()
    }

    /// Rescales to unit trace. The direction of the matrix is preserved.
    pub fn normalize(self) -> Result<Self> {
        let trace = self.0.trace();
        if trace.norm() < MIN_TRACE || !trace.re.is_finite() {
            return Err(SimError::TraceCollapse {
                trace: trace.norm(),
            });
        }
        Ok(DensityMatrix(self.0 / trace))
    }

    pub fn hermitian_deviation(&self) -> f64 {
        hermitian_deviation(&self.0)
    }

    /// Smallest eigenvalue of the Hermitian part.
    pub fn min_eigenvalue(&self) -> f64 {
        let h = hermitian_part(&self.0);
        nalgebra::DMatrix::from_fn(D, D, |i, j| h[(i, j)])
            .symmetric_eigenvalues()
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }

    pub fn expectation(&self, a: &Observable<D>) -> C64 {
        expectation(a, self)
    }

    /// Tr[ρ²].
    pub fn purity(&self) -> f64 {
        (self.0 * self.0).trace().re
    }
}

/// Outcome of a positivity check on a state produced by an Euler-Maruyama step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Positivity {
    Ok,
    /// Slightly negative eigenvalue; integration may continue.
    Warn(f64),
}

/// Monitors (but never enforces) positivity. Projection onto the positive
/// cone would bias the ensemble statistics, so small violations are only
/// reported and integration aborts only on gross ones.
pub fn check_positivity<const D: usize>(rho: &DensityMatrix<D>) -> Result<Positivity> {
    let min = rho.min_eigenvalue();
    if min < POSITIVITY_ABORT {
        Err(SimError::NotPositive {
            min_eigenvalue: min,
        })
    } else if min < POSITIVITY_WARN {
        Ok(Positivity::Warn(min))
    } else {
        Ok(Positivity::Ok)
    }
}

pub fn hermitian_deviation<const D: usize>(m: &CMatrix<D>) -> f64 {
    let mut worst = 0.0_f64;
    for i in 0..D {
        for j in i..D {
            worst = worst.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    worst
}

fn hermitian_part<const D: usize>(m: &CMatrix<D>) -> CMatrix<D> {
    (m + m.adjoint()) * C64::from(0.5)
}

/// D[A]ρ = AρA† − ½(A†Aρ + ρA†A).
pub fn dissipator<const D: usize>(a: &Observable<D>, rho: &DensityMatrix<D>) -> CMatrix<D> {
    let a = a.matrix();
    let rho = rho.matrix();
    let ad = a.adjoint();
    let ada = ad * a;
    a * rho * ad - (ada * rho + rho * ada) * C64::from(0.5)
}

/// H[A]ρ = Aρ + ρA† − Tr[(A + A†)ρ]ρ.
pub fn innovation<const D: usize>(a: &Observable<D>, rho: &DensityMatrix<D>) -> CMatrix<D> {
    let a = a.matrix();
    let rho = rho.matrix();
    let ad = a.adjoint();
    let mean = ((a + ad) * rho).trace();
    a * rho + rho * ad - rho * mean
}

/// Tr[Aρ].
pub fn expectation<const D: usize>(a: &Observable<D>, rho: &DensityMatrix<D>) -> C64 {
    // Tr[Aρ] = Σ_ij A_ij ρ_ji without forming the product.
    let a = a.matrix();
    let rho = rho.matrix();
    let mut acc = ZERO;
    for i in 0..D {
        for j in 0..D {
            acc += a[(i, j)] * rho[(j, i)];
        }
    }
    acc
}

/// [A, B].
pub fn commutator<const D: usize>(a: &CMatrix<D>, b: &CMatrix<D>) -> CMatrix<D> {
    a * b - b * a
}

/// Single-qubit Pauli matrices and their two-qubit embeddings. Qubit 1 is
/// the left tensor factor and |↑⟩ = (1, 0).
pub mod pauli {
    use super::*;
    use nalgebra::Matrix2;

    pub fn x() -> Matrix2<C64> {
        Matrix2::new(ZERO, ONE, ONE, ZERO)
    }

    pub fn y() -> Matrix2<C64> {
        Matrix2::new(ZERO, -I, I, ZERO)
    }

    pub fn z() -> Matrix2<C64> {
        Matrix2::new(ONE, ZERO, ZERO, -ONE)
    }

    pub fn kron(a: &Matrix2<C64>, b: &Matrix2<C64>) -> CMatrix<4> {
        let mut out = CMatrix::<4>::zeros();
        for i in 0..2 {
            for j in 0..2 {
                for k in 0..2 {
                    for l in 0..2 {
                        out[(2 * i + k, 2 * j + l)] = a[(i, j)] * b[(k, l)];
                    }
                }
            }
        }
        out
    }

    pub fn on_first(op: &Matrix2<C64>) -> CMatrix<4> {
        kron(op, &Matrix2::identity())
    }

    pub fn on_second(op: &Matrix2<C64>) -> CMatrix<4> {
        kron(&Matrix2::identity(), op)
    }
}

/// Computational two-qubit basis index order: ↑↑, ↑↓, ↓↑, ↓↓.
pub mod triplet {
    use super::*;

    pub fn t_plus() -> CVector<4> {
        CVector::<4>::new(ONE, ZERO, ZERO, ZERO)
    }

    pub fn t_zero() -> CVector<4> {
        let s = C64::from(FRAC_1_SQRT_2);
        CVector::<4>::new(ZERO, s, s, ZERO)
    }

    pub fn t_minus() -> CVector<4> {
        CVector::<4>::new(ZERO, ZERO, ZERO, ONE)
    }

    pub fn singlet() -> CVector<4> {
        let s = C64::from(FRAC_1_SQRT_2);
        CVector::<4>::new(ZERO, s, -s, ZERO)
    }

    /// Basis (T_1, T_0, T_−1, S).
    pub fn basis() -> [CVector<4>; 4] {
        [t_plus(), t_zero(), t_minus(), singlet()]
    }
}

/// Populations and coherences of a two-qubit state in the (T_1, T_0, T_−1, S)
/// basis. Coherences are ⟨a|ρ|b⟩ with `a` the first index in the field name.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct TripletDecomposition {
    pub t_minus: f64,
    pub t_zero: f64,
    pub t_plus: f64,
    pub singlet: f64,
    /// ⟨T_1|ρ|T_−1⟩
    pub plus_minus: C64,
    /// ⟨T_0|ρ|T_1⟩
    pub zero_plus: C64,
    /// ⟨T_0|ρ|T_−1⟩
    pub zero_minus: C64,
    /// ⟨T_1|ρ|S⟩, ⟨T_0|ρ|S⟩, ⟨T_−1|ρ|S⟩
    pub singlet_coherences: [C64; 3],
}

impl TripletDecomposition {
    pub fn population_sum(&self) -> f64 {
        self.t_minus + self.t_zero + self.t_plus + self.singlet
    }

    /// ⟨L_z⟩ for L_z = ½(σ_z1 + σ_z2).
    pub fn mean_lz(&self) -> f64 {
        self.t_plus - self.t_minus
    }

    /// Rebuilds the 4×4 matrix in the computational basis.
    pub fn to_density_matrix(&self) -> DensityMatrix<4> {
        let [b1, b0, bm, bs] = triplet::basis();
        let basis = [b1, b0, bm, bs];
        let mut elems = [[ZERO; 4]; 4];
        elems[0][0] = C64::from(self.t_plus);
        elems[1][1] = C64::from(self.t_zero);
        elems[2][2] = C64::from(self.t_minus);
        elems[3][3] = C64::from(self.singlet);
        elems[0][2] = self.plus_minus;
        elems[1][0] = self.zero_plus;
        elems[1][2] = self.zero_minus;
        elems[0][3] = self.singlet_coherences[0];
        elems[1][3] = self.singlet_coherences[1];
        elems[2][3] = self.singlet_coherences[2];
        for (i, j) in [(0, 2), (1, 0), (1, 2), (0, 3), (1, 3), (2, 3)] {
            elems[j][i] = elems[i][j].conj();
        }
        let mut m = CMatrix::<4>::zeros();
        for (i, bi) in basis.iter().enumerate() {
            for (j, bj) in basis.iter().enumerate() {
                m += bi * bj.adjoint() * elems[i][j];
            }
        }
        DensityMatrix::from_matrix_unchecked(m)
    }
}

fn sandwich(a: &CVector<4>, m: &CMatrix<4>, b: &CVector<4>) -> C64 {
    (a.adjoint() * m * b)[(0, 0)]
}

/// Projects a two-qubit state onto the triplet/singlet basis.
pub fn triplet_decompose(rho: &DensityMatrix<4>) -> TripletDecomposition {
    let m = rho.matrix();
    let [tp, tz, tm, s] = triplet::basis();
    TripletDecomposition {
        t_minus: sandwich(&tm, m, &tm).re,
        t_zero: sandwich(&tz, m, &tz).re,
        t_plus: sandwich(&tp, m, &tp).re,
        singlet: sandwich(&s, m, &s).re,
        plus_minus: sandwich(&tp, m, &tm),
        zero_plus: sandwich(&tz, m, &tp),
        zero_minus: sandwich(&tz, m, &tm),
        singlet_coherences: [
            sandwich(&tp, m, &s),
            sandwich(&tz, m, &s),
            sandwich(&tm, m, &s),
        ],
    }
}

fn sigma_y_y() -> CMatrix<4> {
    let y = pauli::y();
    pauli::kron(&y, &y)
}

/// Wootters concurrence max(0, λ1 − λ2 − λ3 − λ4), with λ_i the decreasing
/// eigenvalues of sqrt(sqrt(ρ) ρ̃ sqrt(ρ)) and ρ̃ the spin-flipped state.
pub fn concurrence(rho: &DensityMatrix<4>) -> Result<f64> {
    concurrence_and_min_eigenvalue(rho).map(|(c, _)| c)
}

/// Concurrence together with the smallest eigenvalue of ρ, which falls out
/// of the same eigendecomposition.
pub fn concurrence_and_min_eigenvalue(rho: &DensityMatrix<4>) -> Result<(f64, f64)> {
    concurrence_with_floor(rho, POSITIVITY_ABORT)
}

/// As [`concurrence_and_min_eigenvalue`] with a caller-chosen rejection
/// threshold for negative eigenvalues.
pub fn concurrence_with_floor(rho: &DensityMatrix<4>, floor: f64) -> Result<(f64, f64)> {
    let m = rho.matrix();
    let deviation = hermitian_deviation(m);
    if deviation > 1e-8 {
        return Err(SimError::NotHermitian { deviation });
    }
    let eig = hermitian_part(m).symmetric_eigen();
    let min = eig
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    if min < floor || !min.is_finite() {
        return Err(SimError::NotPositive {
            min_eigenvalue: min,
        });
    }
    let roots = eig.eigenvalues.map(|l| C64::from(l.max(0.0).sqrt()));
    let sqrt_rho =
        eig.eigenvectors * CMatrix::<4>::from_diagonal(&roots) * eig.eigenvectors.adjoint();

    let yy = sigma_y_y();
    let flipped = yy * m.conjugate() * yy;
    let inner = sqrt_rho * flipped * sqrt_rho;
    let mut lambdas: Vec<f64> = hermitian_part(&inner)
        .symmetric_eigenvalues()
        .iter()
        .map(|mu| mu.max(0.0).sqrt())
        .collect();
    lambdas.sort_by(|a, b| b.total_cmp(a));
    let c = lambdas[0] - lambdas[1] - lambdas[2] - lambdas[3];
    Ok((c.clamp(0.0, 1.0), min))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn lz() -> Observable<4> {
        Observable::new(
            (pauli::on_first(&pauli::z()) + pauli::on_second(&pauli::z())) * C64::from(0.5),
        )
    }

    fn proj(v: &CVector<4>) -> DensityMatrix<4> {
        DensityMatrix::pure(v).unwrap()
    }

    fn max_abs<const D: usize>(m: &CMatrix<D>) -> f64 {
        m.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    #[test]
    fn identity_dissipator_vanishes() {
        let rho = proj(&CVector::<4>::new(ONE, I, ONE * 0.3, -ONE));
        assert!(max_abs(&dissipator(&Observable::identity(), &rho)) < 1e-15);
    }

    #[test]
    fn lz_dissipator_on_t0_vanishes() {
        let rho = proj(&triplet::t_zero());
        assert!(max_abs(&dissipator(&lz(), &rho)) < 1e-15);
    }

    #[test]
    fn lz_dissipator_damps_t0_t1_coherence_at_half_rate() {
        // ρ = ½(|T0⟩⟨T0| + |T1⟩⟨T1|) + ½(|T0⟩⟨T1| + h.c.) is the pure state
        // (|T0⟩ + |T1⟩)/√2. In the triplet basis L_z = diag(1, 0, -1), so
        // D[L_z] acts element-wise as −½(z_i − z_j)² ρ_ij: the T0/T1
        // coherence is damped at rate ½ and the populations are untouched.
        let psi = (triplet::t_zero() + triplet::t_plus()) * C64::from(FRAC_1_SQRT_2);
        let rho = proj(&psi);
        let d = dissipator(&lz(), &rho);
        let t0 = triplet::t_zero();
        let t1 = triplet::t_plus();
        assert_abs_diff_eq!(sandwich(&t0, &d, &t1).re, -0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(sandwich(&t1, &d, &t0).re, -0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(sandwich(&t0, &d, &t0).norm(), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(sandwich(&t1, &d, &t1).norm(), 0.0, epsilon = 1e-15);
        assert!(d.trace().norm() < 1e-12);
    }

    #[test]
    fn innovation_vanishes_on_lz_eigenstates() {
        for v in [triplet::t_plus(), triplet::t_zero(), triplet::t_minus()] {
            assert!(max_abs(&innovation(&lz(), &proj(&v))) < 1e-15);
        }
    }

    #[test]
    fn innovation_on_balanced_mixture() {
        let rho = DensityMatrix::new(
            (proj(&triplet::t_plus()).into_matrix() + proj(&triplet::t_minus()).into_matrix())
                * C64::from(0.5),
        )
        .unwrap();
        let expected =
            proj(&triplet::t_plus()).into_matrix() - proj(&triplet::t_minus()).into_matrix();
        assert!(max_abs(&(innovation(&lz(), &rho) - expected)) < 1e-15);
    }

    #[test]
    fn expectation_examples() {
        let rho = proj(&triplet::t_plus());
        assert_abs_diff_eq!(
            expectation(&Observable::identity(), &rho).re,
            1.0,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(expectation(&lz(), &rho).re, 1.0, epsilon = 1e-15);
        let mixed = DensityMatrix::<4>::maximally_mixed();
        assert_abs_diff_eq!(expectation(&lz(), &mixed).norm(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn normalize_rescales_trace() {
        let rho = proj(&triplet::t_zero());
        assert!(max_abs(&(rho.normalize().unwrap().into_matrix() - rho.into_matrix())) < 1e-15);
        let doubled = DensityMatrix::from_matrix_unchecked(rho.into_matrix() * C64::from(2.0));
        assert!(max_abs(&(doubled.normalize().unwrap().into_matrix() - rho.into_matrix())) < 1e-15);

        let bumped =
            DensityMatrix::from_matrix_unchecked(rho.into_matrix() * C64::from(1.0 + 3e-4));
        let fixed = bumped.normalize().unwrap();
        assert_abs_diff_eq!(fixed.trace().re, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn normalize_rejects_zero_trace() {
        let z = DensityMatrix::<4>::from_matrix_unchecked(CMatrix::<4>::zeros());
        assert!(matches!(z.normalize(), Err(SimError::TraceCollapse { .. })));
    }

    #[test]
    fn concurrence_of_product_and_bell_states() {
        assert_abs_diff_eq!(
            concurrence(&proj(&triplet::t_plus())).unwrap(),
            0.0,
            epsilon = 1e-7
        );
        assert_abs_diff_eq!(
            concurrence(&proj(&triplet::t_zero())).unwrap(),
            1.0,
            epsilon = 1e-7
        );
    }

    #[test]
    fn concurrence_rejects_non_hermitian() {
        let mut m = proj(&triplet::t_zero()).into_matrix();
        m[(0, 1)] += C64::new(0.1, 0.0);
        let rho = DensityMatrix::from_matrix_unchecked(m);
        assert!(matches!(
            concurrence(&rho),
            Err(SimError::NotHermitian { .. })
        ));
    }

    #[test]
    fn triplet_decomposition_of_basis_states() {
        let d = triplet_decompose(&proj(&triplet::t_plus()));
        assert_abs_diff_eq!(d.t_plus, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(d.t_zero + d.t_minus + d.singlet, 0.0, epsilon = 1e-15);

        let d = triplet_decompose(&proj(&triplet::t_zero()));
        assert_abs_diff_eq!(d.t_zero, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn triplet_decomposition_of_up_down() {
        // |↑↓⟩ = (|T0⟩ + |S⟩)/√2
        let up_down = CVector::<4>::new(ZERO, ONE, ZERO, ZERO);
        let d = triplet_decompose(&proj(&up_down));
        assert_abs_diff_eq!(d.t_zero, 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(d.singlet, 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(d.singlet_coherences[1].re, 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(d.singlet_coherences[1].im, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn triplet_round_trip() {
        let psi = CVector::<4>::new(ONE, C64::new(0.2, -0.7), C64::new(0.4, 0.1), -I * 0.5);
        let rho = proj(&psi);
        let back = triplet_decompose(&rho).to_density_matrix();
        assert!(max_abs(&(back.into_matrix() - rho.into_matrix())) < 1e-14);
    }

    #[test]
    fn positivity_monitor_levels() {
        let rho = proj(&triplet::t_zero());
        assert_eq!(check_positivity(&rho).unwrap(), Positivity::Ok);
        let mut m = rho.into_matrix();
        m[(0, 0)] -= C64::from(1e-6);
        let warn = DensityMatrix::from_matrix_unchecked(m);
        assert!(matches!(check_positivity(&warn), Ok(Positivity::Warn(_))));
        m[(0, 0)] -= C64::from(1e-3);
        let bad = DensityMatrix::from_matrix_unchecked(m);
        assert!(check_positivity(&bad).is_err());
    }
}
