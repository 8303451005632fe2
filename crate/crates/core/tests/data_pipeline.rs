use std::fs;
use tabsae::data::{ingest_csv, Schema, SyntheticSpec};
use tabsae::pipeline::{run_pipeline, RunConfig};
use tabsae::train::EvaluationReport;
use tabsae::Error;

#[test]
fn uniform_priors_give_counts_within_three_sigma() {
    let mut spec = SyntheticSpec::separable(3000);
    spec.class_priors = vec![1.0, 1.0, 1.0];
    for seed in 0..5 {
        let counts = spec.synthesize(seed).unwrap().class_counts();
        assert!(counts.iter().all(|c| (900..=1100).contains(c)), "{counts:?}");
    }
}

#[test]
fn csv_round_trip_through_the_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SyntheticSpec::separable(400);
    let ds = spec.synthesize(4).unwrap();
    let data = dir.path().join("crashes.csv");
    ds.write_csv(&data).unwrap();
    let schema_path = dir.path().join("schema.toml");
    fs::write(&schema_path, spec.schema().unwrap().to_toml_string()).unwrap();

    let (back, report) = ingest_csv(&data, &Schema::load(&schema_path).unwrap()).unwrap();
    assert_eq!(back, ds);
    assert_eq!(report.rows_read, 400);
    assert_eq!(report.excluded_rows, 0);

    let cfg = RunConfig {
        output: dir.path().join("out"),
        data: Some(data),
        schema: Some(schema_path),
        mamba_d_model: 16,
        mamba_d_token: 8,
        mamba_heads: 4,
        max_epochs: 2,
        ..RunConfig::default()
    };
    let run = run_pipeline(&cfg).unwrap();
    for f in ["ingest_report.json", "metrics.json", "sankey.svg", "roc.svg", "confusion.svg"] {
        assert!(run.join(f).is_file(), "missing {f}");
    }
    let metrics = EvaluationReport::read(&run.join("metrics.json")).unwrap();
    assert_eq!(metrics.seed, 42);
}

#[test]
fn too_small_minority_is_reported_by_the_resample_stage() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig {
        output: dir.path().to_path_buf(),
        synthetic: Some("separable".into()),
        synthetic_rows: 40,
        smote_k: 5,
        ..RunConfig::default()
    };
    let err = run_pipeline(&cfg).unwrap_err();
    assert!(matches!(err.root(), Error::InsufficientClass { .. } | Error::InsufficientData(_)), "{err}");
    assert!(matches!(err, Error::Stage { .. }));
}

#[test]
fn resampling_after_the_split_leaves_the_test_rows_alone() {
    let dir = tempfile::tempdir().unwrap();
    let base = RunConfig {
        output: dir.path().to_path_buf(),
        synthetic: Some("separable".into()),
        synthetic_rows: 400,
        mamba_d_model: 16,
        mamba_d_token: 8,
        mamba_heads: 4,
        max_epochs: 1,
        ..RunConfig::default()
    };
    let after = RunConfig {
        run_id: "after".into(),
        resample_after_split: true,
        ..base.clone()
    };
    let run = run_pipeline(&after).unwrap();
    let report = EvaluationReport::read(&run.join("metrics.json")).unwrap();
    let tested: usize = report.confusion.iter().flatten().sum();
    // 20% of the raw 400 rows, within rounding per class
    assert!((78..=82).contains(&tested), "{tested} test rows");
}
