use nalgebra::{Matrix2, SMatrix, SVector};
use num_complex::Complex64 as C64;
use pisim_core::quantum::{
    concurrence, dissipator, innovation, pauli, triplet, triplet_decompose, DensityMatrix,
    Observable,
};
use proptest::prelude::*;

type M4 = SMatrix<C64, 4, 4>;

fn complex_entries(n: usize) -> impl Strategy<Value = Vec<(f64, f64)>> {
    prop::collection::vec((-1.0..1.0f64, -1.0..1.0f64), n)
}

/// ρ = GG†/tr(GG†) for a random complex G, full rank almost surely.
fn random_state(entries: &[(f64, f64)]) -> DensityMatrix<4> {
    let g = M4::from_fn(|i, j| {
        let (re, im) = entries[4 * i + j];
        C64::new(re, im)
    });
    let m = g * g.adjoint();
    let tr = m.trace().re;
    DensityMatrix::new(m / C64::from(tr)).unwrap()
}

fn random_hermitian(entries: &[(f64, f64)]) -> Observable<4> {
    let g = M4::from_fn(|i, j| {
        let (re, im) = entries[4 * i + j];
        C64::new(re, im)
    });
    Observable::new((g + g.adjoint()) * C64::from(0.5))
}

/// exp(−i v·σ) for a real 3-vector v.
fn su2(v: (f64, f64, f64)) -> Matrix2<C64> {
    let norm = (v.0 * v.0 + v.1 * v.1 + v.2 * v.2).sqrt();
    if norm == 0.0 {
        return Matrix2::identity();
    }
    let n = pauli::x() * C64::from(v.0 / norm)
        + pauli::y() * C64::from(v.1 / norm)
        + pauli::z() * C64::from(v.2 / norm);
    Matrix2::identity() * C64::from(norm.cos()) - n * C64::new(0.0, norm.sin())
}

/// Wootters concurrence through the spectrum of ρρ̃, read off a complex
/// Schur form rather than the Hermitian square-root route.
fn concurrence_oracle(rho: &DensityMatrix<4>) -> f64 {
    let yy = pauli::kron(&pauli::y(), &pauli::y());
    let m = rho.matrix();
    let r = m * (yy * m.conjugate() * yy);
    let (_, t) = r.schur().unpack();
    let mut l: Vec<f64> = (0..4).map(|i| t[(i, i)].norm().sqrt()).collect();
    l.sort_by(|a, b| b.total_cmp(a));
    (l[0] - l[1] - l[2] - l[3]).max(0.0)
}

fn werner(p: f64) -> DensityMatrix<4> {
    let s = triplet::singlet();
    let m = s * s.adjoint() * C64::from(p) + M4::identity() * C64::from((1.0 - p) / 4.0);
    DensityMatrix::new(m).unwrap()
}

#[test]
fn werner_states_follow_closed_form() {
    for i in 0..=20 {
        let p = i as f64 / 20.0;
        let expected = ((3.0 * p - 1.0) / 2.0).max(0.0);
        let c = concurrence(&werner(p)).unwrap();
        assert!((c - expected).abs() < 1e-10, "p = {p}: {c} vs {expected}");
    }
}

#[test]
fn maximally_mixed_state_is_separable() {
    assert!(concurrence(&DensityMatrix::<4>::maximally_mixed()).unwrap() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn dissipator_and_innovation_are_traceless(a in complex_entries(16), r in complex_entries(16)) {
        let op = random_hermitian(&a);
        let rho = random_state(&r);
        prop_assert!(dissipator(&op, &rho).trace().norm() < 1e-12);
        prop_assert!(innovation(&op, &rho).trace().norm() < 1e-12);
    }

    #[test]
    fn dissipator_and_innovation_are_hermitian(a in complex_entries(16), r in complex_entries(16)) {
        let op = random_hermitian(&a);
        let rho = random_state(&r);
        for m in [dissipator(&op, &rho), innovation(&op, &rho)] {
            prop_assert!((m - m.adjoint()).norm() < 1e-12);
        }
    }

    #[test]
    fn concurrence_matches_schur_oracle(r in complex_entries(16)) {
        let rho = random_state(&r);
        let c = concurrence(&rho).unwrap();
        prop_assert!((0.0..=1.0).contains(&c));
        prop_assert!((c - concurrence_oracle(&rho)).abs() < 1e-6);
    }

    #[test]
    fn pure_state_concurrence_is_twice_determinant(a in complex_entries(4)) {
        let v = SVector::<C64, 4>::from_fn(|i, _| C64::new(a[i].0, a[i].1));
        prop_assume!(v.norm() > 1e-3);
        let v = v / C64::from(v.norm());
        let expected = 2.0 * (v[0] * v[3] - v[1] * v[2]).norm();
        let c = concurrence(&DensityMatrix::pure(&v).unwrap()).unwrap();
        prop_assert!((c - expected).abs() < 1e-6, "{} vs {}", c, expected);
    }

    #[test]
    fn concurrence_is_local_unitary_invariant(
        r in complex_entries(16),
        u in (-3.0..3.0f64, -3.0..3.0f64, -3.0..3.0f64),
        w in (-3.0..3.0f64, -3.0..3.0f64, -3.0..3.0f64),
    ) {
        let rho = random_state(&r);
        let local = pauli::kron(&su2(u), &su2(w));
        let rotated = DensityMatrix::new(local * rho.matrix() * local.adjoint()).unwrap();
        let (c0, c1) = (concurrence(&rho).unwrap(), concurrence(&rotated).unwrap());
        prop_assert!((c0 - c1).abs() < 1e-6, "{} vs {}", c0, c1);
    }

    #[test]
    fn triplet_decomposition_is_complete(r in complex_entries(16)) {
        let rho = random_state(&r);
        let d = triplet_decompose(&rho);
        prop_assert!((d.population_sum() - 1.0).abs() < 1e-12);
        for p in [d.t_minus, d.t_zero, d.t_plus, d.singlet] {
            prop_assert!(p >= -1e-12);
        }
        // |ρ_ab|² ≤ ρ_aa ρ_bb for a positive matrix
        let pairs = [
            (d.plus_minus, d.t_plus, d.t_minus),
            (d.zero_plus, d.t_zero, d.t_plus),
            (d.zero_minus, d.t_zero, d.t_minus),
            (d.singlet_coherences[0], d.t_plus, d.singlet),
            (d.singlet_coherences[1], d.t_zero, d.singlet),
            (d.singlet_coherences[2], d.t_minus, d.singlet),
        ];
        for (c, a, b) in pairs {
            prop_assert!(c.norm_sqr() <= a * b + 1e-12);
        }
        prop_assert!((d.to_density_matrix().matrix() - rho.matrix()).norm() < 1e-12);
    }

    #[test]
    fn purity_is_bounded(r in complex_entries(16)) {
        let p = random_state(&r).purity();
        prop_assert!((0.25 - 1e-12..=1.0 + 1e-12).contains(&p));
    }
}
