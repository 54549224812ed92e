use snpformer::model::ModelConfig;
use snpformer::pipeline::{
    cross_validate, evaluate, load_checkpoint, load_dataset, save_checkpoint, synth_generate, train, Noise, Signal,
    SynthConfig, SynthTask, TaskKind, TrainConfig,
};

fn quick(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        patience: 2,
        seed: 3,
        ..TrainConfig::default()
    }
}

#[test]
fn files_to_checkpoint_and_back() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SynthConfig::new(
        40,
        90,
        SynthTask::Classification { classes: 3 },
        Signal::additive(3, Noise::Sd(0.2)),
        4,
    );
    let paths = synth_generate(&cfg).unwrap().write_files(dir.path().join("toy")).unwrap();
    let ds = load_dataset(&paths.sequences, &paths.phenotypes, "synthetic", TaskKind::Classification).unwrap();
    assert_eq!(ds.len(), 40);
    assert_eq!(ds.seq_tokens(6), 15);

    let model = ModelConfig::new(6, 15, ds.task());
    let out = train(&ds, &ds, &model, &quick(3)).unwrap();
    assert!(!out.history.is_empty() && out.history.len() <= 3);

    let path = dir.path().join("model.ckpt");
    save_checkpoint(&out.checkpoint, &path).unwrap();
    let loaded = load_checkpoint(&path).unwrap();
    let a = evaluate(&out.checkpoint, &ds).unwrap();
    let b = evaluate(&loaded, &ds).unwrap();
    assert_eq!(a.metric.to_bits(), b.metric.to_bits());
    assert_eq!(a.predictions, b.predictions);
    assert_eq!(loaded.labels, ["0", "1", "2"]);
}

#[test]
fn cross_validation_reports_five_folds() {
    let cfg = SynthConfig::new(50, 60, SynthTask::Regression, Signal::additive(2, Noise::Sd(0.1)), 9);
    let ds = synth_generate(&cfg).unwrap().dataset;
    let model = ModelConfig::new(6, ds.seq_tokens(6), ds.task());
    let cv = cross_validate(&ds, &model, &quick(3), 2).unwrap();
    assert_eq!(cv.report.folds.len(), 5);
    assert_eq!(cv.folds.len(), 5);
    let values = cv.report.values();
    let mean = values.iter().sum::<f64>() / 5.0;
    assert!((cv.report.mean - mean).abs() < 1e-12);
    assert!(values.iter().all(|v| (-1.0..=1.0).contains(v)));
}
