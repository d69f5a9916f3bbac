use gpc_phs::experiment::{Experiment, ExperimentConfig, StageStatus, SweepConfig};

fn tiny() -> ExperimentConfig {
    let mut c = ExperimentConfig::microactuator();
    c.sampling.samples = 60;
    c.training.restarts = 2;
    c.training.screen_iters = 30;
    c.training.max_iters = 150;
    c.design.grid_counts = vec![5, 5, 5];
    c.closed_loop.t_end = 2.0;
    c.closed_loop.dt = 1e-2;
    c.sweep = Some(SweepConfig { sizes: vec![80, 80] });
    c
}

fn status(exp: &Experiment, stage: &str) -> Option<StageStatus> {
    exp.stages().iter().find(|(s, _)| s == stage).map(|(_, st)| *st)
}

#[test]
fn pipeline_writes_artifacts_and_resumes() {
    let dir = tempfile::tempdir().unwrap();
    let mut exp = Experiment::new(tiny(), dir.path()).unwrap();
    let report = exp.pipeline().unwrap();
    assert_eq!(status(&exp, "train[60]"), Some(StageStatus::Computed));
    for name in [
        "data.csv",
        "regression.csv",
        "model.json",
        "open_loop.csv",
        "design.json",
        "certificate.json",
        "closed_loop.csv",
        "sweep.csv",
        "report.json",
    ] {
        let text = std::fs::read_to_string(dir.path().join(name)).unwrap();
        assert!(text.contains(exp.config_digest()), "{name} lacks the config digest");
    }
    let sweep = report.sweep.as_ref().unwrap();
    assert_eq!(sweep.len(), 2);
    assert!(sweep[0].time_averaged_mse.is_some(), "{:?}", sweep[0]);
    assert_eq!(sweep[0], sweep[1]);
    let csv = std::fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(2).collect();
    let (a, b) = rows.split_at(rows.len() / 2);
    assert_eq!(a, b);

    let mut again = Experiment::new(tiny(), dir.path()).unwrap();
    let second = again.pipeline().unwrap();
    assert_eq!(status(&again, "train[60]"), Some(StageStatus::Reused));
    assert_eq!(status(&again, "certify"), Some(StageStatus::Reused));
    assert_eq!(second, report);
    assert_eq!(second.to_json().unwrap(), report.to_json().unwrap());

    let model = gpc_phs::experiment::read_model_artifact(&dir.path().join("model.json")).unwrap();
    assert_eq!(model.hyperparameters(), &report.hyperparameters);
}

#[test]
fn sweep_disabled_report_omits_table() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = tiny();
    config.sweep = None;
    let mut exp = Experiment::new(config, dir.path()).unwrap();
    let report = exp.pipeline().unwrap();
    assert!(report.sweep.is_none());
    assert!(!report.to_json().unwrap().contains("sweep"));
    assert!(!dir.path().join("sweep.csv").exists());
}

#[test]
fn unsupported_sweep_size_recorded() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = tiny();
    config.sweep = Some(SweepConfig {
        sizes: vec![80, 50_000],
    });
    let mut exp = Experiment::new(config, dir.path()).unwrap();
    let rows = exp.sweep().unwrap();
    assert!(
        rows[0].error.is_none() && rows[0].time_averaged_mse.is_some(),
        "{:?}",
        rows[0]
    );
    assert!(rows[1].error.as_deref().unwrap().contains("integration step"));
    assert!(rows[1].time_averaged_mse.is_none());
}

#[test]
fn shared_cache_between_output_directories() {
    let cache = tempfile::tempdir().unwrap();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let mut config = tiny();
    config.sweep = None;
    let mut first = Experiment::new(config.clone(), a.path())
        .unwrap()
        .with_cache_dir(cache.path())
        .unwrap();
    first.model(60).unwrap();
    let mut second = Experiment::new(config, b.path())
        .unwrap()
        .with_cache_dir(cache.path())
        .unwrap();
    second.model(60).unwrap();
    assert_eq!(status(&second, "train[60]"), Some(StageStatus::Reused));
}
