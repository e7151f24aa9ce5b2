use covsteer_conic::{project_psd, project_soc};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn sym(k: usize) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-3.0f64..3.0, k * k).prop_map(move |v| {
        let m = DMatrix::from_vec(k, k, v);
        (&m + m.transpose()) * 0.5
    })
}

fn min_eig(m: &DMatrix<f64>) -> f64 {
    m.clone().symmetric_eigen().eigenvalues.min()
}

proptest! {
    #[test]
    fn psd_projection_is_idempotent(m in sym(4)) {
        let p = project_psd(&m).unwrap();
        let pp = project_psd(&p).unwrap();
        prop_assert!((pp - &p).norm() <= 1e-10);
    }

    #[test]
    fn psd_projection_is_nonexpansive(a in sym(4), b in sym(4)) {
        let d = (project_psd(&a).unwrap() - project_psd(&b).unwrap()).norm();
        prop_assert!(d <= (&a - &b).norm() + 1e-10);
    }

    // Moreau: M = P - N with P, N ⪰ 0 and ⟨P, N⟩ = 0 characterizes the projection.
    #[test]
    fn psd_projection_satisfies_moreau(m in sym(5)) {
        let p = project_psd(&m).unwrap();
        let n = &p - &m;
        prop_assert!(min_eig(&p) >= -1e-9);
        prop_assert!(min_eig(&n) >= -1e-9);
        prop_assert!((&p * &n).trace().abs() <= 1e-9);
    }

    #[test]
    fn soc_projection_is_idempotent(v in prop::collection::vec(-3.0f64..3.0, 1..6)) {
        let v = DVector::from_vec(v);
        let p = project_soc(&v);
        prop_assert!((project_soc(&p) - &p).norm() <= 1e-12);
    }

    #[test]
    fn soc_projection_is_nonexpansive(a in prop::collection::vec(-3.0f64..3.0, 4), b in prop::collection::vec(-3.0f64..3.0, 4)) {
        let (a, b) = (DVector::from_vec(a), DVector::from_vec(b));
        prop_assert!((project_soc(&a) - project_soc(&b)).norm() <= (&a - &b).norm() + 1e-12);
    }
}

/// Projected-gradient oracle: minimize ½‖X - M‖² over X = LLᵀ by gradient
/// descent on the factor.
fn factor_descent(m: &DMatrix<f64>) -> DMatrix<f64> {
    let k = m.nrows();
    let mut l = DMatrix::<f64>::identity(k, k);
    let step = 0.05 / (1.0 + m.norm());
    for _ in 0..200_000 {
        let x = &l * l.transpose();
        let g = (&x - m) * &l * 2.0;
        l -= g * step;
    }
    &l * l.transpose()
}

#[test]
fn psd_projection_matches_descent_oracle() {
    let ms = [
        DMatrix::from_row_slice(3, 3, &[1.0, 2.0, 0.0, 2.0, -1.0, 0.5, 0.0, 0.5, 0.3]),
        DMatrix::from_row_slice(3, 3, &[-0.5, 0.2, 0.1, 0.2, 2.0, -1.0, 0.1, -1.0, 0.4]),
    ];
    for m in &ms {
        let want = factor_descent(m);
        let got = project_psd(m).unwrap();
        assert!((got - want).norm() <= 1e-6);
    }
}

/// `(M + |M|)/2` with `|M| = sign(M)·M`; the matrix sign comes from the
/// scaled Newton iteration `X ← (γX + (γX)⁻¹)/2`, so no eigensolver is used.
fn polar_oracle(m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut x = m.clone();
    for _ in 0..100 {
        let inv = x.clone().try_inverse().expect("nonsingular iterate");
        let gamma = (inv.norm() / x.norm()).sqrt();
        let next = (&x * gamma + inv / gamma) * 0.5;
        let done = (&next - &x).norm() <= 1e-15 * next.norm();
        x = next;
        if done {
            break;
        }
    }
    let abs = &x * m;
    (m + (&abs + abs.transpose()) * 0.5) * 0.5
}

#[test]
fn psd_projection_matches_polar_oracle_on_random_matrices() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let a = DMatrix::from_fn(5, 5, |_, _| rng.random_range(-1.0..1.0));
        let m = (&a + a.transpose()) * 0.5;
        let got = project_psd(&m).unwrap();
        worst = worst.max((got - polar_oracle(&m)).norm());
    }
    assert!(worst <= 1e-6, "{worst:e}");
}
