use covsteer::eval::SampledTrajectory;
use covsteer::solver::{InnerRecord, OuterRecord};
use covsteer_cli::artifact::*;
use covsteer_cli::spec::SolverSpec;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn any_f64() -> impl Strategy<Value = f64> {
    prop::num::f64::ANY
}

fn finite() -> impl Strategy<Value = f64> {
    prop::num::f64::NORMAL | prop::num::f64::SUBNORMAL | prop::num::f64::ZERO
}

fn same(a: f64, b: f64) -> bool {
    a.to_bits() == b.to_bits() || (a.is_nan() && b.is_nan())
}

fn trajectory(n: usize, m: usize, tf: usize, vals: &[f64]) -> TrajectoryArtifact {
    let mut it = vals.iter().copied().cycle();
    let mut take = |k: usize| -> Vec<f64> { (0..k).map(|_| it.next().unwrap()).collect() };
    TrajectoryArtifact {
        scenario_sha256: "ab".repeat(32),
        method: "admm".into(),
        status: "converged".into(),
        objective: 1.25,
        config: "rho=1".into(),
        mean: (0..=tf).map(|_| DVector::from_vec(take(n))).collect(),
        cov: (0..=tf).map(|_| DMatrix::from_vec(n, n, take(n * n))).collect(),
        v: (0..tf).map(|_| DVector::from_vec(take(m))).collect(),
        k: (0..tf).map(|_| DMatrix::from_vec(m, n, take(m * n))).collect(),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]
    #[test]
    fn printed_floats_read_back_exactly(x in any_f64()) {
        let back: f64 = fmt_f64(x).parse().unwrap();
        prop_assert!(same(x, back));
    }

    #[test]
    fn trajectory_files_read_back_exactly(
        n in 1usize..5,
        m in 1usize..3,
        tf in 1usize..6,
        vals in prop::collection::vec(finite(), 1..40),
    ) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trajectory.csv");
        let traj = trajectory(n, m, tf, &vals);
        traj.write(&path).unwrap();
        let back = TrajectoryArtifact::read(&path).unwrap();
        prop_assert_eq!(&back, &traj);
        prop_assert_eq!(back.horizon(), tf);
    }
}

#[test]
fn trajectory_layout() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("trajectory.csv");
    let traj = trajectory(2, 1, 3, &[0.5, -1.0, 3.0]);
    traj.write(&path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let body: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(
        body[0],
        "t,mu_0,mu_1,sigma_0_0,sigma_0_1,sigma_1_0,sigma_1_1,v_0,k_0_0,k_0_1"
    );
    assert_eq!(body.len(), 1 + 4);
    assert!(body[4].ends_with(",,,"));
    assert!(text.contains("# kind=trajectory\n"));

    let law = traj.law();
    assert_eq!(law.ref_mean.len(), 3);
    assert_eq!(law.v.len(), 3);
}

#[test]
fn wrong_kind_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("trials.csv");
    write_trials(&path, "x", 0, &[]).unwrap();
    assert!(TrajectoryArtifact::read(&path).is_err());
    assert!(TrajectoryArtifact::read(&dir.path().join("missing.csv")).is_err());
}

fn history() -> Vec<OuterRecord<f64>> {
    let inner = |p: f64| InnerRecord {
        primal: p,
        dual: p / 2.0,
        chance_violation: -p,
        cov_relaxed: p > 0.1,
        dykstra_converged: true,
    };
    vec![
        OuterRecord {
            inner: vec![inner(1.0), inner(0.05)],
            trust_region: 1.0,
            constraint_residual: 0.3,
            objective: 2.0,
            failure: None,
        },
        OuterRecord {
            inner: vec![],
            trust_region: 0.5,
            constraint_residual: f64::NAN,
            objective: f64::NAN,
            failure: Some("local problem infeasible".into()),
        },
    ]
}

#[test]
fn residual_rows_flatten_the_history() {
    let rows = residual_rows(&history());
    assert_eq!(rows.len(), 3);
    assert_eq!((rows[1].outer, rows[1].inner, rows[1].primal), (0, Some(1), Some(0.05)));
    assert_eq!(rows[2].inner, None);
    assert_eq!(rows[2].failure.as_deref(), Some("local problem infeasible"));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("residuals.csv");
    write_residuals(&path, "abc", &rows).unwrap();
    let back = read_residuals(&path).unwrap();
    assert_eq!(back.len(), 3);
    assert_eq!(back[..2], rows[..2]);
    assert!(back[2].objective.is_nan() && back[2].constraint_residual.is_nan());
    assert_eq!(back[2].failure, rows[2].failure);
    assert_eq!(back[2].primal, None);
}

#[test]
fn report_json_keeps_non_finite_values() {
    let doc = SolveReportDoc {
        format_version: FORMAT_VERSION,
        kind: "solve_report".into(),
        version: VERSION.into(),
        scenario: Some("s".into()),
        scenario_sha256: "00".into(),
        method: "admm".into(),
        status: "numeric".into(),
        exit_code: 3,
        objective: f64::NAN,
        constraint_residual: f64::INFINITY,
        outer_iterations: 1,
        message: Some("boom".into()),
        seed: 7,
        config: SolverSpec::default(),
        history: vec![OuterDoc {
            trust_region: 1.0,
            constraint_residual: f64::NEG_INFINITY,
            objective: 0.1 + 0.2,
            failure: None,
            inner: vec![InnerDoc {
                primal: 1e-300,
                dual: f64::NAN,
                chance_violation: -0.0,
                cov_relaxed: false,
                dykstra_converged: true,
            }],
        }],
        wall_time: 0.5,
    };
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("report.json");
    write_json(&path, &doc).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.contains("\"objective\": \"NaN\""));
    assert!(text.contains("\"constraint_residual\": \"inf\""));
    let back: SolveReportDoc = read_json(&path).unwrap();
    assert!(back.objective.is_nan());
    assert_eq!(back.constraint_residual, f64::INFINITY);
    assert_eq!(back.history[0].constraint_residual, f64::NEG_INFINITY);
    assert_eq!(back.history[0].objective, 0.1 + 0.2);
    assert_eq!(back.history[0].inner[0].primal, 1e-300);
    assert!(back.history[0].inner[0].chance_violation.is_sign_negative());
    assert_eq!(back.config, doc.config);
}

#[test]
fn trials_round_trip() {
    let rows: Vec<TrialRow> = (0..5)
        .map(|i| TrialRow {
            trial: i,
            safe: i % 2 == 0,
            numeric_failure: i == 3,
            cost: if i == 3 { f64::NAN } else { 1.0 / (i as f64 + 3.0) },
            min_distance: -0.125 * i as f64,
        })
        .collect();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("trials.csv");
    write_trials(&path, "abc", 11, &rows).unwrap();
    let back = read_trials(&path).unwrap();
    assert_eq!(back.len(), rows.len());
    for (a, b) in back.iter().zip(&rows) {
        assert_eq!(
            (a.trial, a.safe, a.numeric_failure),
            (b.trial, b.safe, b.numeric_failure)
        );
        assert!(same(a.cost, b.cost) && same(a.min_distance, b.min_distance));
    }
}

#[test]
fn samples_round_trip() {
    let tf = 4;
    let path_of = |k: f64| SampledTrajectory {
        x: (0..=tf)
            .map(|t| DVector::from_vec(vec![k, t as f64 / 3.0, -k * t as f64]))
            .collect(),
        u: (0..tf).map(|t| DVector::from_vec(vec![t as f64 * 0.1, k])).collect(),
    };
    let set = SampleSet {
        trials: vec![(0, path_of(1.0)), (4, path_of(-2.5))],
    };
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("samples.csv");
    set.write(&path, "abc", 3).unwrap();
    let back = SampleSet::read(&path).unwrap();
    assert_eq!(back, set);
    assert_eq!(back.trials[1].1.x.len(), tf + 1);
    assert_eq!(back.trials[1].1.u.len(), tf);
}
