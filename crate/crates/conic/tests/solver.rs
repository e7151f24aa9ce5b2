use covsteer_conic::{
    dump, project_psd, smat, solve_cone_program, svec, svec_len, Cone, ConeProgram, ConeSolver, CscMatrix, Settings,
    SolveStatus,
};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn lp(c: Vec<f64>, g: &DMatrix<f64>, h: Vec<f64>) -> ConeProgram<f64> {
    let mut trip = Vec::new();
    for i in 0..g.nrows() {
        for j in 0..g.ncols() {
            if g[(i, j)] != 0.0 {
                trip.push((i, j, g[(i, j)]));
            }
        }
    }
    ConeProgram {
        p: None,
        c,
        a: CscMatrix::from_triplets(g.nrows(), g.ncols(), &trip),
        cones: vec![Cone::Nonneg(h.len())],
        b: h,
    }
}

#[test]
fn lp_lower_bound() {
    // min x  s.t.  x >= 1
    let prog = lp(vec![1.0], &DMatrix::from_element(1, 1, -1.0), vec![-1.0]);
    let sol = solve_cone_program(&prog, 1e-9, 10_000).unwrap();
    assert_eq!(sol.status, SolveStatus::Optimal);
    assert!((sol.x[0] - 1.0).abs() <= 1e-6, "x = {}", sol.x[0]);
    assert!((sol.objective - 1.0).abs() <= 1e-6);
    assert!((sol.y[0] - 1.0).abs() <= 1e-6, "y = {}", sol.y[0]);
}

#[test]
fn lp_lower_bound_f32() {
    let prog = ConeProgram::<f32> {
        p: None,
        c: vec![1.0],
        a: CscMatrix::from_triplets(1, 1, &[(0, 0, -1.0)]),
        b: vec![-1.0],
        cones: vec![Cone::Nonneg(1)],
    };
    let sol = solve_cone_program(&prog, 1e-5, 10_000).unwrap();
    assert_eq!(sol.status, SolveStatus::Optimal);
    assert!((sol.x[0] - 1.0).abs() <= 1e-4);
}

#[test]
fn detects_primal_infeasibility() {
    // x >= 1 and x <= 0
    let g = DMatrix::from_row_slice(2, 1, &[-1.0, 1.0]);
    let prog = lp(vec![1.0], &g, vec![-1.0, 0.0]);
    let sol = solve_cone_program(&prog, 1e-8, 20_000).unwrap();
    assert_eq!(sol.status, SolveStatus::Infeasible);
}

#[test]
fn detects_unboundedness() {
    // min x  s.t.  x <= 0
    let prog = lp(vec![1.0], &DMatrix::from_element(1, 1, 1.0), vec![0.0]);
    let sol = solve_cone_program(&prog, 1e-8, 20_000).unwrap();
    assert_eq!(sol.status, SolveStatus::Unbounded);
}

#[test]
fn equality_constrained_qp_matches_kkt() {
    // min ½‖x‖² - x0  s.t.  x0 + x1 + x2 = 1
    let prog = ConeProgram {
        p: Some(CscMatrix::from_triplets(3, 3, &[(0, 0, 1.0), (1, 1, 1.0), (2, 2, 1.0)])),
        c: vec![-1.0, 0.0, 0.0],
        a: CscMatrix::from_triplets(1, 3, &[(0, 0, 1.0), (0, 1, 1.0), (0, 2, 1.0)]),
        b: vec![1.0],
        cones: vec![Cone::Zero(1)],
    };
    let sol = solve_cone_program(&prog, 1e-10, 20_000).unwrap();
    assert_eq!(sol.status, SolveStatus::Optimal);
    // stationarity: x = e0 - λ·1, sum = 1  →  λ = 0, x = (1, 0, 0)
    let want = [1.0f64, 0.0, 0.0];
    for (&a, b) in sol.x.iter().zip(want) {
        assert!((a - b).abs() <= 1e-7, "{:?}", sol.x);
    }
}

#[test]
fn soc_linear_objective() {
    // min x1 + x2  s.t.  ‖(x1, x2)‖ <= 1
    let prog = ConeProgram {
        p: None,
        c: vec![1.0, 1.0],
        a: CscMatrix::from_triplets(3, 2, &[(1, 0, -1.0), (2, 1, -1.0)]),
        b: vec![1.0, 0.0, 0.0],
        cones: vec![Cone::Soc(3)],
    };
    let sol = solve_cone_program(&prog, 1e-9, 20_000).unwrap();
    assert_eq!(sol.status, SolveStatus::Optimal);
    let r = -std::f64::consts::FRAC_1_SQRT_2;
    assert!(
        (sol.x[0] - r).abs() <= 1e-6 && (sol.x[1] - r).abs() <= 1e-6,
        "{:?}",
        sol.x
    );
}

fn nearest_psd_program(m: &DMatrix<f64>) -> ConeProgram<f64> {
    let k = m.nrows();
    let len = svec_len(k);
    let eye: Vec<(usize, usize, f64)> = (0..len).map(|i| (i, i, 1.0)).collect();
    let neg: Vec<(usize, usize, f64)> = (0..len).map(|i| (i, i, -1.0)).collect();
    ConeProgram {
        p: Some(CscMatrix::from_triplets(len, len, &eye)),
        c: svec(m).into_iter().map(|v| -v).collect(),
        a: CscMatrix::from_triplets(len, len, &neg),
        b: vec![0.0; len],
        cones: vec![Cone::Psd(k)],
    }
}

#[test]
fn nearest_psd_matches_projection() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..5 {
        let k = 4;
        let raw = DMatrix::from_fn(k, k, |_, _| rng.random_range(-1.0..1.0));
        let m = (&raw + raw.transpose()) * 0.5;
        let sol = solve_cone_program(&nearest_psd_program(&m), 1e-10, 50_000).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        let got = smat(&sol.x, k);
        let want = project_psd(&m).unwrap();
        assert!((got - want).norm() <= 1e-6);
    }
}

/// Vertex enumeration over all n-subsets of active constraints.
fn lp_vertex_oracle(c: &[f64], g: &DMatrix<f64>, h: &[f64]) -> f64 {
    let (m, n) = (g.nrows(), g.ncols());
    let mut best = f64::INFINITY;
    let mut idx: Vec<usize> = (0..n).collect();
    loop {
        let sub = DMatrix::from_fn(n, n, |r, j| g[(idx[r], j)]);
        let rhs = nalgebra::DVector::from_fn(n, |r, _| h[idx[r]]);
        if let Some(x) = sub.lu().solve(&rhs) {
            let feasible = (0..m).all(|i| (0..n).map(|j| g[(i, j)] * x[j]).sum::<f64>() <= h[i] + 1e-9);
            if feasible {
                best = best.min((0..n).map(|j| c[j] * x[j]).sum());
            }
        }
        // next combination
        let mut i = n;
        loop {
            if i == 0 {
                return best;
            }
            i -= 1;
            if idx[i] < m - n + i {
                idx[i] += 1;
                for t in i + 1..n {
                    idx[t] = idx[t - 1] + 1;
                }
                break;
            }
        }
    }
}

#[test]
fn random_lps_match_vertex_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..20 {
        let n = 3;
        let extra = 5;
        // box |x_i| <= 2 keeps the problem bounded; h > 0 keeps x = 0 feasible
        let m = 2 * n + extra;
        let mut g = DMatrix::zeros(m, n);
        let mut h = vec![0.0; m];
        for j in 0..n {
            g[(2 * j, j)] = 1.0;
            g[(2 * j + 1, j)] = -1.0;
            h[2 * j] = 2.0;
            h[2 * j + 1] = 2.0;
        }
        for i in 2 * n..m {
            for j in 0..n {
                g[(i, j)] = rng.random_range(-1.0..1.0);
            }
            h[i] = rng.random_range(0.2..1.5);
        }
        let c: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let want = lp_vertex_oracle(&c, &g, &h);
        let sol = solve_cone_program(&lp(c, &g, h), 1e-10, 50_000).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert!((sol.objective - want).abs() <= 1e-6, "{} vs {}", sol.objective, want);
    }
}

/// One-step scalar covariance steering as an SDP in (Σ1, U, Y):
/// min qΣ1 + Y  s.t.  [[Σ1 - d², aΣ0 + bU], [·, Σ0]] ⪰ 0,  [[Y, √r U], [·, Σ0]] ⪰ 0.
fn scalar_steering(a: f64, b: f64, d: f64, s0: f64, q: f64, r: f64) -> ConeProgram<f64> {
    let sr = r.sqrt();
    let s2 = std::f64::consts::SQRT_2;
    // s = b - A x with x = (Σ1, U, Y); svec layout (00, 01, 11)
    let trip = vec![(0, 0, -1.0), (1, 1, -s2 * b), (3, 2, -1.0), (4, 1, -s2 * sr)];
    ConeProgram {
        p: None,
        c: vec![q, 0.0, 1.0],
        a: CscMatrix::from_triplets(6, 3, &trip),
        b: vec![-d * d, s2 * a * s0, s0, 0.0, 0.0, s0],
        cones: vec![Cone::Psd(2), Cone::Psd(2)],
    }
}

#[test]
fn covariance_lmi_matches_gain_grid() {
    for &(a, b, d, s0, q, r) in &[
        (1.0, 0.2, 0.1, 1.0, 1.0, 0.5),
        (1.2, 1.0, 0.3, 2.0, 3.0, 1.0),
        (0.9, -0.5, 0.0, 0.5, 1.0, 0.1),
    ] {
        let sol = solve_cone_program(&scalar_steering(a, b, d, s0, q, r), 1e-9, 100_000).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        let mut best = f64::INFINITY;
        let mut k = -10.0;
        while k <= 10.0 {
            let cost = q * ((a + b * k).powi(2) * s0 + d * d) + r * k * k * s0;
            best = best.min(cost);
            k += 1e-3;
        }
        assert!((sol.objective - best).abs() <= 1e-5, "{} vs {}", sol.objective, best);
    }
}

#[test]
fn warm_start_after_objective_change() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let k = 3;
    let raw = DMatrix::from_fn(k, k, |_, _| rng.random_range(-1.0..1.0));
    let m = (&raw + raw.transpose()) * 0.5;
    let settings = Settings {
        tol: 1e-9,
        ..Settings::default()
    };
    let mut solver = ConeSolver::new(nearest_psd_program(&m), settings).unwrap();
    let first = solver.solve();
    assert_eq!(first.status, SolveStatus::Optimal);

    let m2 = &m + DMatrix::from_diagonal_element(k, k, 0.01);
    let c2: Vec<f64> = svec(&m2).into_iter().map(|v| -v).collect();
    solver.set_linear_objective(&c2);
    let warm = solver.solve();
    assert_eq!(warm.status, SolveStatus::Optimal);
    assert!((smat(&warm.x, k) - project_psd(&m2).unwrap()).norm() <= 1e-6);

    let cold = solve_cone_program(&nearest_psd_program(&m2), 1e-9, 50_000).unwrap();
    assert!(warm.iterations <= cold.iterations);
}

#[test]
fn dump_round_trips_solver_input() {
    let prog = scalar_steering(1.0, 0.2, 0.1, 1.0, 1.0, 0.5);
    let back = dump::read_program(&dump::write_program(&prog)).unwrap();
    assert_eq!(back, prog);
}

#[test]
fn rejects_dimension_mismatch() {
    let prog = ConeProgram {
        p: None,
        c: vec![1.0],
        a: CscMatrix::from_triplets(2, 1, &[(0, 0, 1.0)]),
        b: vec![0.0, 0.0],
        cones: vec![Cone::Nonneg(1)],
    };
    assert!(solve_cone_program(&prog, 1e-8, 10).is_err());
}
