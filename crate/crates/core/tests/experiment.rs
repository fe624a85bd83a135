use delinkit_core::evaluation::*;
use delinkit_core::synthetic::{generate_scene, SceneParams, SyntheticScene};

fn small(seed: u64) -> SyntheticScene {
    generate_scene(&SceneParams {
        rows: 200,
        cols: 200,
        layout: (2, 2),
        seed,
        ..Default::default()
    })
    .unwrap()
}

fn inputs() -> ExperimentInputs {
    ExperimentInputs {
        test: small(3).to_project("small"),
        train: None,
        settings: PipelineSettings {
            seed: 42,
            radii: vec![0.30, 0.80],
            ..Default::default()
        },
    }
}

fn strip_label(v: &VariantReport) -> VariantReport {
    VariantReport {
        label: String::new(),
        ..v.clone()
    }
}

#[test]
fn identity_resolution_matches_baseline() {
    let r = run_experiment(Dimension::Resolution, &inputs(), &Alteration::Resolution { factor: 1 }).unwrap();
    assert_eq!(r.variants.len(), 2);
    assert_eq!(strip_label(&r.variants[0]), strip_label(&r.variants[1]));
    let base = &r.variants[0];
    assert_eq!(base.completeness.denominator, 4);
    assert!(base.completeness.no_edit >= 3, "{:?}", base.objects);
}

#[test]
fn coarse_variant_reports_both_resolutions() {
    let r = run_experiment(Dimension::Resolution, &inputs(), &Alteration::Resolution { factor: 6 }).unwrap();
    let gsd: Vec<f64> = r.variants.iter().map(|v| (v.gsd_m * 100.0).round()).collect();
    assert_eq!(gsd, [5.0, 30.0]);
    assert_eq!((r.variants[1].rows, r.variants[1].cols), (33, 33));
    let table = r.to_table();
    assert!(table.contains("GSD [cm]"));
    assert!(table.lines().any(|l| l.starts_with("baseline") && l.contains(" 5.0 ")));
    assert!(table.lines().any(|l| l.starts_with("x6") && l.contains(" 30.0 ")));
    // Evaluation always happens on the full-resolution grid.
    assert_eq!(r.variants[1].extent, r.variants[0].extent);
}

#[test]
fn dropping_dsm_removes_the_feature() {
    let r = run_experiment(Dimension::Input, &inputs(), &Alteration::Input { with_dsm: false }).unwrap();
    let (base, alt) = (&r.variants[0], &r.variants[1]);
    assert!(base.dsm && !alt.dsm);
    assert!(base.feature_names.iter().any(|f| f == "dsm_grad"));
    assert!(!alt.feature_names.iter().any(|f| f == "dsm_grad"));
    for v in &r.variants {
        assert!(v.likelihood_min >= 0.0 && v.likelihood_max <= 1.0);
    }
    let table = r.to_table();
    let dsm_col: Vec<&str> = table
        .lines()
        .skip(3)
        .take(2)
        .map(|l| {
            let cells: Vec<&str> = l.split_whitespace().collect();
            let m = cells.iter().position(|c| *c == "m").unwrap();
            cells[m + 2]
        })
        .collect();
    assert_eq!(dsm_col, ["yes", "no"]);
}

#[test]
fn reports_are_deterministic() {
    let a = run_experiment(Dimension::Input, &inputs(), &Alteration::Input { with_dsm: false }).unwrap();
    let b = run_experiment(Dimension::Input, &inputs(), &Alteration::Input { with_dsm: false }).unwrap();
    assert_eq!(a.to_json(), b.to_json());
    assert_eq!(a.to_table(), b.to_table());
    let back: ExperimentReport = serde_json::from_str(&a.to_json()).unwrap();
    assert_eq!(back, a);
}

#[test]
fn alteration_must_match_dimension() {
    let err = run_experiment(Dimension::Input, &inputs(), &Alteration::Resolution { factor: 2 }).unwrap_err();
    assert!(matches!(err, ExperimentError::Config(_)), "{err}");
    let err = run_experiment(Dimension::Resolution, &inputs(), &Alteration::Resolution { factor: 0 }).unwrap_err();
    assert!(matches!(err, ExperimentError::Config(_)));
    let err = run_experiment(Dimension::Parameters, &inputs(), &Alteration::Parameters { scales: vec![] }).unwrap_err();
    assert!(matches!(err, ExperimentError::Config(_)));
    let mut no_dsm = inputs();
    no_dsm.test.dsm = None;
    no_dsm.settings.use_dsm = false;
    let err = run_experiment(Dimension::Input, &no_dsm, &Alteration::Input { with_dsm: true }).unwrap_err();
    assert!(matches!(err, ExperimentError::Config(_)));
}

#[test]
fn location_parameters_application() {
    let other = small(11).to_project("elsewhere");
    let r = run_experiment(Dimension::Location, &inputs(), &Alteration::Location { train: Box::new(other) }).unwrap();
    assert!(!r.variants[0].transferred && r.variants[1].transferred);
    assert!(r.variants[1].label.contains("elsewhere"));

    let r = run_experiment(Dimension::Parameters, &inputs(), &Alteration::Parameters { scales: vec![0.2, 0.8] }).unwrap();
    let scales: Vec<f64> = r.variants.iter().map(|v| v.seg_scale).collect();
    assert_eq!(scales, [0.5, 0.2, 0.8]);
    assert!(r.variants[1].network_edges < r.variants[2].network_edges);

    let base = inputs();
    let reference = base.test.reference[..2].to_vec();
    let clicks = ClickFile {
        objects: base.test.clicks.objects[..2].to_vec(),
    };
    let r = run_experiment(
        Dimension::Application,
        &base,
        &Alteration::Application {
            name: "first two".into(),
            reference,
            clicks,
        },
    )
    .unwrap();
    assert_eq!(r.variants[1].completeness.denominator, 2);
    assert_eq!(r.variants[1].objects.len(), 2);
}

#[test]
fn config_round_trip_from_disk() {
    let dir = tempfile::tempdir().unwrap();
    let spec = small(3).write(dir.path(), "small").unwrap();
    let config = ExperimentConfig {
        test: spec,
        train: None,
        settings: inputs().settings,
    };
    let text = serde_json::to_string_pretty(&config).unwrap();
    let parsed: ExperimentConfig = serde_json::from_str(&text).unwrap();
    let loaded = parsed.load(dir.path()).unwrap();
    assert_eq!(loaded.test.clicks, inputs().test.clicks);
    let r = run_experiment(Dimension::Resolution, &loaded, &Alteration::Resolution { factor: 2 }).unwrap();
    assert_eq!(r.variants.len(), 2);
    assert_eq!(r.config["test"], "small");
}

#[test]
fn scripted_clicks_produce_session_statistics() {
    let r = run_experiment(Dimension::Resolution, &inputs(), &Alteration::Resolution { factor: 1 }).unwrap();
    let s = r.variants[0].interaction;
    assert_eq!(s.clicks, 16);
    assert_eq!(s.accepts, s.suggests);
    assert_eq!(s.duration_s, 67.5);
}
