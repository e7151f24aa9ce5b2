use covsteer::chance::{
    build_constraint_sets, gaussian_quantile, linearize_obstacle, linearize_tightened, signed_distance,
    tightened_constraint_value, Obstacle, RiskBudget, Shape, TightenedHalfplane,
};
use covsteer::models::NominalTrajectory;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Standard normal CDF by Simpson integration of the density, tabulated on
/// a coarse grid so bisection stays cheap. No erf involved.
struct CdfOracle {
    step: f64,
    table: Vec<f64>,
}

fn pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

fn simpson(a: f64, b: f64, panels: usize) -> f64 {
    let h = (b - a) / panels as f64;
    let mut s = pdf(a) + pdf(b);
    for i in 1..panels {
        s += pdf(a + h * i as f64) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

impl CdfOracle {
    fn new() -> Self {
        let step = 0.01;
        let mut table = vec![0.0];
        for k in 0..800 {
            let prev = table[k];
            table.push(prev + simpson(step * k as f64, step * (k + 1) as f64, 64));
        }
        Self { step, table }
    }

    fn cdf(&self, x: f64) -> f64 {
        let z = x.abs();
        let k = ((z / self.step) as usize).min(self.table.len() - 1);
        let half = self.table[k] + simpson(self.step * k as f64, z, 64);
        if x >= 0.0 {
            0.5 + half
        } else {
            0.5 - half
        }
    }

    fn quantile(&self, p: f64) -> f64 {
        let (mut lo, mut hi) = (-8.0, 8.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.cdf(mid) < p {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }
}

#[test]
fn quantile_matches_bisection_oracle() {
    let oracle = CdfOracle::new();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for i in 0..1000 {
        // half the points in the tails used by chance constraints
        let p: f64 = if i % 2 == 0 {
            rng.random_range(1e-4..1.0 - 1e-4)
        } else {
            1.0 - 10f64.powf(rng.random_range(-4.0..-0.5))
        };
        let got: f64 = gaussian_quantile(p).unwrap();
        worst = worst.max((got - oracle.quantile(p)).abs());
    }
    assert!(worst <= 1e-9, "{worst:e}");
    let q99: f64 = gaussian_quantile(0.99).unwrap();
    assert!((q99 - oracle.quantile(0.99)).abs() <= 1e-9);
}

fn random_psd(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> DMatrix<f64> {
    let l = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    &l * l.transpose() * scale
}

#[test]
fn linearization_is_conservative_and_anchored() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst_gap = f64::INFINITY;
    let mut worst_anchor = 0.0f64;
    for _ in 0..10_000 {
        let n = rng.random_range(1..=4);
        let hp = TightenedHalfplane {
            a: DVector::from_fn(n, |_, _| rng.random_range(-2.0..2.0)),
            b: rng.random_range(-3.0..3.0),
            delta_prime: rng.random_range(0.01..0.49),
        };
        let mu_bar = DVector::from_fn(n, |_, _| rng.random_range(-2.0..2.0));
        let sigma_bar = random_psd(&mut rng, n, 0.5) + DMatrix::identity(n, n) * 1e-3;
        let lin = linearize_tightened(&hp, &mu_bar, &sigma_bar).unwrap();
        let g_bar = tightened_constraint_value(&hp, &mu_bar, &sigma_bar).unwrap();
        worst_anchor = worst_anchor.max((lin.eval(&mu_bar, &sigma_bar) - g_bar).abs());

        let mu = DVector::from_fn(n, |_, _| rng.random_range(-2.0..2.0));
        // include rank-deficient samples
        let sigma = if rng.random_bool(0.2) {
            let v = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
            &v * v.transpose()
        } else {
            let scale = rng.random_range(0.0..2.0);
            random_psd(&mut rng, n, scale)
        };
        let g = tightened_constraint_value(&hp, &mu, &sigma).unwrap();
        worst_gap = worst_gap.min(lin.eval(&mu, &sigma) - g);
    }
    assert!(worst_gap >= -1e-9, "{worst_gap:e}");
    assert!(worst_anchor <= 1e-12, "{worst_anchor:e}");
}

#[test]
fn linearization_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..50 {
        let n = 3;
        let hp = TightenedHalfplane {
            a: DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0)),
            b: 0.4,
            delta_prime: rng.random_range(0.01..0.3),
        };
        let mu = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        let sigma = random_psd(&mut rng, n, 0.5) + DMatrix::identity(n, n) * 0.1;
        let lin = linearize_tightened(&hp, &mu, &sigma).unwrap();
        let h = 1e-6;
        let g = |m: &DVector<f64>, s: &DMatrix<f64>| tightened_constraint_value(&hp, m, s).unwrap();
        for i in 0..n {
            let mut e = DVector::zeros(n);
            e[i] = h;
            let d = (g(&(&mu + &e), &sigma) - g(&(&mu - &e), &sigma)) / (2.0 * h);
            assert!((d - lin.w[i]).abs() <= 1e-6);
        }
        // symmetric basis directions E_ij + E_ji
        for i in 0..n {
            for j in i..n {
                let mut e = DMatrix::zeros(n, n);
                e[(i, j)] = h;
                e[(j, i)] = h;
                let d = (g(&mu, &(&sigma + &e)) - g(&mu, &(&sigma - &e))) / (2.0 * h);
                let expected = if i == j { lin.g[(i, i)] } else { 2.0 * lin.g[(i, j)] };
                assert!((d - expected).abs() <= 1e-6);
            }
        }
    }
}

#[test]
fn median_risk_drops_the_covariance_term() {
    let hp = TightenedHalfplane {
        a: DVector::from_vec(vec![1.0, -2.0]),
        b: 0.3,
        delta_prime: 0.5,
    };
    let mu = DVector::from_vec(vec![0.2, 0.1]);
    let sigma = DMatrix::identity(2, 2) * 4.0;
    let lin = linearize_tightened(&hp, &mu, &sigma).unwrap();
    assert_eq!(lin.g.amax(), 0.0);
    assert_eq!(
        tightened_constraint_value(&hp, &mu, &sigma).unwrap(),
        hp.a.dot(&mu) + hp.b
    );
}

#[test]
fn worked_tightening_value() {
    let oracle = CdfOracle::new();
    let hp = TightenedHalfplane {
        a: DVector::from_vec(vec![1.0, 0.0]),
        b: 0.0,
        delta_prime: 0.0228,
    };
    let g = tightened_constraint_value(&hp, &DVector::from_vec(vec![1.0, 0.0]), &DMatrix::identity(2, 2)).unwrap();
    assert!((g - (1.0 + oracle.quantile(0.9772))).abs() <= 1e-9);
    assert!((g - 3.0).abs() <= 1e-2);
}

proptest! {
    #[test]
    fn tightening_grows_as_risk_shrinks(d1 in 0.001f64..0.49, d2 in 0.001f64..0.49, var in 0.01f64..4.0) {
        prop_assume!((d1 - d2).abs() > 1e-6);
        let mk = |d: f64| TightenedHalfplane { a: DVector::from_vec(vec![1.0]), b: 0.0, delta_prime: d };
        let mu = DVector::from_vec(vec![0.0]);
        let s = DMatrix::from_element(1, 1, var);
        let (lo, hi) = if d1 < d2 { (d1, d2) } else { (d2, d1) };
        prop_assert!(
            tightened_constraint_value(&mk(lo), &mu, &s).unwrap() > tightened_constraint_value(&mk(hi), &mu, &s).unwrap()
        );
    }

    #[test]
    fn risk_split_is_exact(delta in 0.001f64..0.9, n in 2usize..20) {
        prop_assume!(delta / (n as f64) < 0.5);
        let b = RiskBudget::joint(delta, n).unwrap();
        prop_assert!((b.delta_prime * n as f64 - delta).abs() <= 1e-15);
    }
}

#[test]
fn tight_constraint_has_nominal_violation_frequency() {
    let hp = TightenedHalfplane::<f64> {
        a: DVector::from_vec(vec![0.6, -0.8]),
        b: 0.0,
        delta_prime: 0.05,
    };
    let sigma = DMatrix::from_row_slice(2, 2, &[0.5, 0.1, 0.1, 0.3]);
    let sd = (&sigma * &hp.a).dot(&hp.a).sqrt();
    let z: f64 = gaussian_quantile(0.95).unwrap();
    // shift μ along a so that g(μ, Σ) = 0
    let mu = &hp.a * (-z * sd / hp.a.norm_squared());
    assert!(tightened_constraint_value(&hp, &mu, &sigma).unwrap().abs() <= 1e-12);
    let root = sigma.clone().cholesky().unwrap().l();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let samples = 1_000_000;
    let mut violations = 0usize;
    for _ in 0..samples {
        let w = DVector::from_fn(2, |_, _| rng.sample::<f64, _>(StandardNormal));
        let x = &mu + &root * w;
        // the unsafe side of the safe-side halfplane
        if hp.a.dot(&x) + hp.b > 0.0 {
            violations += 1;
        }
    }
    let freq = violations as f64 / samples as f64;
    let se = (0.05 * 0.95 / samples as f64).sqrt();
    assert!((freq - 0.05).abs() <= 4.0 * se, "{freq}");
}

#[test]
fn halfspace_sign_matches_membership() {
    let normal = DVector::from_vec(vec![1.0, 0.0]);
    let obs = Obstacle {
        shape: Shape::Halfspace {
            normal: normal.clone(),
            offset: 0.0,
        },
        coords: vec![0, 1],
    };
    assert_eq!(signed_distance(&obs, &DVector::from_vec(vec![-3.0, 5.0])), -3.0);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..1000 {
        let x = DVector::from_fn(2, |_, _| rng.random_range(-5.0..5.0));
        let forbidden = x[0] <= 0.0;
        assert_eq!(signed_distance(&obs, &x) <= 0.0, forbidden);
    }
    let (a, b) = linearize_obstacle(&obs, &DVector::from_vec(vec![1.0, 1.0])).unwrap();
    assert_eq!((a, b), (normal, 0.0));
}

#[test]
fn circle_gradient_matches_finite_differences() {
    let obs = Obstacle::<f64>::circle([1.0, 1.0], 0.5, [0, 1]);
    let x = DVector::from_vec(vec![0.0, 0.0]);
    let (a, b) = linearize_obstacle(&obs, &x).unwrap();
    let h = 1e-6;
    for i in 0..2 {
        let mut e = DVector::zeros(2);
        e[i] = h;
        let d = (signed_distance(&obs, &(&x + &e)) - signed_distance(&obs, &(&x - &e))) / (2.0 * h);
        assert!((d - a[i]).abs() <= 1e-6);
    }
    assert!((b - signed_distance(&obs, &x)).abs() <= 1e-15);
}

fn straight_nominal(tf: usize) -> NominalTrajectory<f64> {
    NominalTrajectory {
        x: (0..=tf).map(|t| DVector::from_vec(vec![t as f64, -1.0, 0.0])).collect(),
        u: vec![DVector::zeros(2); tf],
        sigma: vec![DMatrix::identity(3, 3) * 0.1; tf + 1],
    }
}

#[test]
fn constraint_sets_cover_interior_steps() {
    let obs = vec![Obstacle::circle([1.5, 0.5], 0.5, [0, 1])];
    let budget = RiskBudget::joint(0.05, 1).unwrap();
    let groups = build_constraint_sets(&obs, &budget, &straight_nominal(3)).unwrap();
    assert_eq!(groups.iter().map(|g| g.t).collect::<Vec<_>>(), vec![1, 2]);
    let none = build_constraint_sets(&[], &RiskBudget::joint(0.05, 0).unwrap(), &straight_nominal(3)).unwrap();
    assert!(none.is_empty());
}

#[test]
fn constraint_sets_are_anchored_everywhere() {
    let tf = 50;
    let obs: Vec<Obstacle<f64>> = (0..5)
        .map(|i| Obstacle::circle([8.0 * i as f64 + 3.0, 1.0 + 0.2 * i as f64], 0.8, [0, 1]))
        .collect();
    let budget = RiskBudget::joint(0.05, 5).unwrap();
    let nominal = straight_nominal(tf);
    let groups = build_constraint_sets(&obs, &budget, &nominal).unwrap();
    assert_eq!(groups.iter().map(|g| g.constraints.len()).sum::<usize>(), 5 * 49);
    for g in &groups {
        for (hp, lin) in g.halfplanes.iter().zip(&g.constraints) {
            let exact = tightened_constraint_value(hp, &nominal.x[g.t], &nominal.sigma[g.t]).unwrap();
            assert!((lin.eval(&nominal.x[g.t], &nominal.sigma[g.t]) - exact).abs() <= 1e-12);
        }
    }
}
