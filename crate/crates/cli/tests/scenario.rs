use covsteer_cli::commands::{perturbed_scenario, Overrides, Perturbation};
use covsteer_cli::spec::{Convention, MatrixSpec, ObstacleSpec};
use covsteer_cli::{load_scenario, parse_scenario, save_scenario, CliError, Exit, ScenarioSpec};
use nalgebra::DMatrix;
use proptest::prelude::*;
use std::path::PathBuf;

fn bundled(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(name)
}

fn unicycle_text() -> String {
    std::fs::read_to_string(bundled("unicycle_fig1.json")).unwrap()
}

fn pointer_of(err: CliError) -> String {
    match err {
        CliError::Spec { pointer, .. } => pointer,
        other => panic!("expected a schema error, got {other}"),
    }
}

fn edit(text: &str, f: impl FnOnce(&mut serde_json::Value)) -> String {
    let mut v: serde_json::Value = serde_json::from_str(text).unwrap();
    f(&mut v);
    serde_json::to_string(&v).unwrap()
}

#[test]
fn bundled_unicycle_has_five_obstacles() {
    let (spec, warnings) = load_scenario(&bundled("unicycle_fig1.json"), false).unwrap();
    assert!(warnings.is_empty());
    let sc = spec.build().unwrap();
    assert_eq!((sc.state_dim(), sc.control_dim()), (3, 2));
    assert_eq!(sc.obstacles.len(), 5);
    assert_eq!(sc.horizon, 50);
    assert_eq!(sc.boundary.sigma_ic, DMatrix::identity(3, 3) * 0.1);
}

#[test]
fn every_bundled_scenario_builds() {
    for name in [
        "unicycle_fig1.json",
        "quadrotor.json",
        "ablation_099.json",
        "ablation_090.json",
    ] {
        let (spec, _) = load_scenario(&bundled(name), false).unwrap();
        spec.build().unwrap_or_else(|e| panic!("{name}: {e}"));
        spec.solver_config().unwrap();
    }
    let (quad, _) = load_scenario(&bundled("quadrotor.json"), false).unwrap();
    assert_eq!(quad.build().unwrap().state_dim(), 12);
}

#[test]
fn empty_document_is_a_parse_error() {
    for text in ["", "  \n"] {
        let err = parse_scenario(text, false).unwrap_err();
        assert_eq!(err.exit(), Exit::BadInput);
    }
    assert!(parse_scenario("{", false).is_err());
}

#[test]
fn save_and_load_round_trip() {
    let (spec, _) = parse_scenario(&unicycle_text(), false).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.json");
    save_scenario(&spec, &path).unwrap();
    let (back, _) = load_scenario(&path, false).unwrap();
    assert_eq!(back, spec);
    assert_eq!(back.sha256(), spec.sha256());
}

#[test]
fn unknown_keys_are_rejected_with_their_pointer() {
    let text = edit(&unicycle_text(), |v| {
        v["boundary"]["sigma_x"] = serde_json::json!(1.0);
        v["obstacles"][2]["colour"] = serde_json::json!("red");
    });
    let err = parse_scenario(&text, false).unwrap_err();
    assert_eq!(pointer_of(err), "/boundary/sigma_x");

    let (spec, warnings) = parse_scenario(&text, true).unwrap();
    assert_eq!(warnings.len(), 2);
    assert!(warnings[0].starts_with("/boundary/sigma_x"));
    assert!(warnings[1].starts_with("/obstacles/2/colour"));
    spec.build().unwrap();
}

#[test]
fn type_errors_name_the_offending_field() {
    let text = edit(&unicycle_text(), |v| {
        v["obstacles"][1]["radius"] = serde_json::json!("wide")
    });
    assert_eq!(
        pointer_of(parse_scenario(&text, false).unwrap_err()),
        "/obstacles/1/radius"
    );
    let text = edit(&unicycle_text(), |v| v["solver"]["inner_iters"] = serde_json::json!(-3));
    assert_eq!(
        pointer_of(parse_scenario(&text, false).unwrap_err()),
        "/solver/inner_iters"
    );
    let text = edit(&unicycle_text(), |v| {
        v.as_object_mut().unwrap().remove("t_f");
    });
    assert!(parse_scenario(&text, false).unwrap_err().to_string().contains("t_f"));
}

#[test]
fn semantic_errors_name_the_offending_field() {
    let cases: Vec<(Box<dyn Fn(&mut serde_json::Value)>, &str)> = vec![
        (
            Box::new(|v| v["boundary"]["mu_ic"] = serde_json::json!([0.0, 0.0])),
            "/boundary/mu_ic",
        ),
        (
            Box::new(|v| v["boundary"]["sigma_tc"] = serde_json::json!("0.1*J")),
            "/boundary/sigma_tc",
        ),
        (
            Box::new(|v| v["cost"]["r"] = serde_json::json!([[1.0, 0.0, 0.0]])),
            "/cost/r",
        ),
        (Box::new(|v| v["state_dim"] = serde_json::json!(4)), "/state_dim"),
        (
            Box::new(|v| v["obstacles"][3]["radius"] = serde_json::json!(-1.0)),
            "/obstacles/3/radius",
        ),
        (
            Box::new(|v| v["obstacles"][0]["coords"] = serde_json::json!([0, 5])),
            "/obstacles/0/coords",
        ),
        (
            Box::new(|v| v["obstacles"][4]["coords"] = serde_json::json!([1, 1])),
            "/obstacles/4/coords",
        ),
        (Box::new(|v| v["risk"]["value"] = serde_json::json!(0.7)), "/risk/value"),
        (
            Box::new(|v| v["format_version"] = serde_json::json!(2)),
            "/format_version",
        ),
        (
            Box::new(|v| v["model_params"] = serde_json::json!({"mass": 2.0})),
            "/model_params/mass",
        ),
        (Box::new(|v| v["solver"]["rho"] = serde_json::json!(0.0)), "/solver"),
    ];
    for (f, want) in cases {
        let text = edit(&unicycle_text(), f);
        let (spec, _) = parse_scenario(&text, false).unwrap();
        let err = spec.build().and_then(|_| spec.solver_config()).unwrap_err();
        assert_eq!(pointer_of(err), want);
    }
}

#[test]
fn matrix_forms_agree() {
    let want = DMatrix::identity(3, 3) * 0.25;
    for m in [
        MatrixSpec::Scalar(0.25),
        MatrixSpec::Shorthand("0.25*I".into()),
        MatrixSpec::Shorthand(" 0.25 * I ".into()),
        MatrixSpec::scaled_identity(0.25),
        MatrixSpec::Rows(vec![vec![0.25, 0.0, 0.0], vec![0.0, 0.25, 0.0], vec![0.0, 0.0, 0.25]]),
    ] {
        assert_eq!(m.square(3, "/x").unwrap(), want);
    }
    assert_eq!(
        MatrixSpec::Shorthand("I".into()).square(2, "/x").unwrap(),
        DMatrix::identity(2, 2)
    );
    assert!(MatrixSpec::Scalar(1.0).resolve(2, 3, "/x").is_err());
}

#[test]
fn risk_conventions_split_the_budget() {
    let (mut spec, _) = parse_scenario(&unicycle_text(), false).unwrap();
    spec.risk.value = 0.05;
    spec.risk.convention = Convention::Joint;
    let joint = spec.risk_budget().unwrap();
    assert!((joint.delta_prime - 0.01).abs() < 1e-15);
    assert!((joint.delta - 0.05).abs() < 1e-15);

    Overrides {
        delta_convention: Some(Convention::PerConstraint),
        ..Overrides::default()
    }
    .apply(&mut spec);
    let per = spec.risk_budget().unwrap();
    assert_eq!(per.delta_prime, 0.05);
    assert!((per.delta - 0.25).abs() < 1e-15);
}

#[test]
fn overrides_replace_solver_fields() {
    let (mut spec, _) = parse_scenario(&unicycle_text(), false).unwrap();
    Overrides {
        seed: Some(9),
        inner_iters: Some(3),
        outer_iters: Some(2),
        rho: Some(0.5),
        averaging: Some(covsteer_cli::spec::Averaging::Paper),
        delta_convention: None,
    }
    .apply(&mut spec);
    let cfg = spec.solver_config().unwrap();
    assert_eq!((cfg.seed, cfg.inner_iters, cfg.outer_iters, cfg.rho), (9, 3, 2, 0.5));
    assert_eq!(cfg.averaging, covsteer::blocks::AveragingMode::PaperExact);
}

#[test]
fn perturbations_are_seeded_per_environment() {
    let (spec, _) = parse_scenario(&unicycle_text(), false).unwrap();
    let p = Perturbation {
        center_std: 0.1,
        radius_std: 0.05,
    };
    assert_eq!(perturbed_scenario(&spec, &Perturbation::default(), 3), spec);
    let a = perturbed_scenario(&spec, &p, 1);
    assert_eq!(a, perturbed_scenario(&spec, &p, 1));
    assert_ne!(a, perturbed_scenario(&spec, &p, 2));
    assert_ne!(a.obstacles, spec.obstacles);
    a.build().unwrap();
}

fn finite() -> impl Strategy<Value = f64> {
    prop::num::f64::NORMAL | prop::num::f64::SUBNORMAL | prop::num::f64::ZERO
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn documents_round_trip_exactly(
        mu in prop::collection::vec(finite(), 3),
        obstacles in prop::collection::vec((finite(), finite(), 1e-6f64..1e6), 0..6),
        dt in 1e-4f64..1.0,
        rho in 1e-3f64..1e3,
        seed in any::<u64>(),
    ) {
        let (mut spec, _) = parse_scenario(&unicycle_text(), false).unwrap();
        spec.boundary.mu_ic = mu;
        spec.obstacles = obstacles.iter().map(|&(x, y, r)| ObstacleSpec::circle([x, y], r)).collect();
        spec.dt = dt;
        spec.solver.rho = Some(rho);
        spec.seed = seed;
        let (back, warnings): (ScenarioSpec, _) = parse_scenario(&spec.to_json(), false).unwrap();
        prop_assert!(warnings.is_empty());
        prop_assert_eq!(&back, &spec);
        prop_assert_eq!(back.sha256(), spec.sha256());
    }
}
