use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::checkpoint::{Checkpoint, TargetScale};
use super::dataset::{Dataset, Targets};
use super::metrics::{accuracy, pcc_or_zero, MetricKind};
use crate::error::{Error, Result};
use crate::model::{BatchTargets, ModelConfig, PhenotypePrediction, Task, Transformer};
use crate::numeric::{Adam, AdamConfig, Gradients, Tape};
use crate::tokenizer::{mask_sample, TokenIds, TokenizerConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Upper bound on passes over the training set.
    pub epochs: usize,
    /// Non-improving epochs tolerated before stopping.
    pub patience: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    /// Per-token masking probability during training.
    pub mask_prob: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 80,
            patience: 10,
            batch_size: 16,
            adam: AdamConfig::default(),
            mask_prob: 0.15,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.epochs == 0 {
            return fail("epochs must be positive".into());
        }
        if self.patience >= self.epochs {
            return fail(format!("patience {} must be below epochs {}", self.patience, self.epochs));
        }
        if self.batch_size == 0 {
            return fail("batch size must be positive".into());
        }
        if !(self.adam.lr > 0.0 && self.adam.lr.is_finite()) {
            return fail(format!("learning rate {} must be positive", self.adam.lr));
        }
        if !(0.0..=1.0).contains(&self.mask_prob) {
            return fail(format!("mask probability {} outside [0, 1]", self.mask_prob));
        }
        Ok(())
    }

    pub fn tokenizer(&self, k: usize) -> TokenizerConfig {
        TokenizerConfig {
            k,
            mask_prob: self.mask_prob,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_metric: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    /// Parameters from the best validation epoch.
    pub checkpoint: Checkpoint,
    pub history: Vec<EpochRecord>,
    pub stopped_early: bool,
}

/// Scores from [`evaluate`].
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub kind: MetricKind,
    pub metric: f64,
    pub predictions: Vec<PhenotypePrediction>,
}

pub fn metric_kind(task: Task) -> MetricKind {
    match task {
        Task::Classification { .. } => MetricKind::Accuracy,
        Task::Regression => MetricKind::Pcc,
    }
}

fn check_task(model: &ModelConfig, ds: &Dataset, what: &str) -> Result<()> {
    if ds.task() != model.task {
        return Err(Error::Config(format!(
            "{what} task {:?} does not match model task {:?}",
            ds.task(),
            model.task
        )));
    }
    if ds.seq_tokens(model.k) != model.seq_tokens {
        return Err(Error::shape(
            "tokenized sequence",
            &[ds.seq_tokens(model.k)],
            &[model.seq_tokens],
        ));
    }
    Ok(())
}

fn score(task: Task, predictions: &[PhenotypePrediction], targets: &Targets) -> Result<f64> {
    match (task, targets) {
        (Task::Classification { .. }, Targets::Classes { labels, .. }) => {
            let pred: Vec<usize> = predictions.iter().map(|p| p.class().unwrap_or(usize::MAX)).collect();
            accuracy(&pred, labels)
        }
        (Task::Regression, Targets::Values(values)) => {
            let pred: Vec<f64> = predictions.iter().map(|p| p.value().unwrap_or(f64::NAN)).collect();
            pcc_or_zero(&pred, values)
        }
        _ => Err(Error::Config("targets do not match the task".into())),
    }
}

pub fn train(train_set: &Dataset, val_set: &Dataset, model: &ModelConfig, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_observed(train_set, val_set, model, cfg, |_| {})
}

/// [`train`], calling `observe` after every epoch.
pub fn train_observed(
    train_set: &Dataset,
    val_set: &Dataset,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    mut observe: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    model_cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::Config("empty training set".into()));
    }
    if val_set.is_empty() {
        return Err(Error::Config("empty validation set".into()));
    }
    check_task(model_cfg, train_set, "training")?;
    check_task(model_cfg, val_set, "validation")?;

    let tokenizer = cfg.tokenizer(model_cfg.k);
    let tokens = train_set.tokenize(model_cfg.k)?;
    let val_tokens = val_set.tokenize(model_cfg.k)?;
    let (labels, names, scale) = match train_set.targets() {
        Targets::Classes { labels, names } => (labels.clone(), names.clone(), TargetScale::IDENTITY),
        Targets::Values(v) => (Vec::new(), Vec::new(), TargetScale::fit(v)),
    };
    let scaled: Vec<f64> = match train_set.targets() {
        Targets::Values(v) => v.iter().map(|&y| scale.forward(y)).collect(),
        Targets::Classes { .. } => Vec::new(),
    };

    let mut model = Transformer::<f32>::new(model_cfg.clone(), cfg.seed)?;
    let mut adam = Adam::new(cfg.adam, model.params()).with_checks();
    let mut grads = Gradients::zeros_like(model.params());
    let mut order_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    order_rng.set_stream(u64::MAX);
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    let snapshot = |model: &Transformer<f32>, epoch: usize, best_metric: f64| Checkpoint {
        model: model_cfg.clone(),
        tokenizer,
        params: model.params().clone(),
        labels: names.clone(),
        target_scale: scale,
        epoch,
        best_metric,
    };
    let mut best: Option<Checkpoint> = None;
    let mut best_metric = f64::NEG_INFINITY;
    let mut stale = 0;
    let mut history = Vec::new();
    let mut stopped_early = false;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut order_rng);
        let mut loss_sum = 0.0;
        let mut batches = 0;
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            let masked: Vec<Vec<u32>> = idx
                .iter()
                .map(|&i| mask_sample(&tokens[i], &tokenizer, i as u64, epoch as u64).ids)
                .collect();
            let batch: Vec<&[u32]> = masked.iter().map(Vec::as_slice).collect();
            let context = |e: Error| match e {
                Error::Numeric(msg) => Error::Numeric(format!("epoch {epoch}, batch {}: {msg}", b + 1)),
                other => other,
            };
            let loss = {
                let mut tape = Tape::new(model.params()).with_checks();
                let out = model.forward(&mut tape, &batch).map_err(context)?;
                let batch_labels: Vec<usize>;
                let batch_values: Vec<f64>;
                let targets = match model_cfg.task {
                    Task::Classification { .. } => {
                        batch_labels = idx.iter().map(|&i| labels[i]).collect();
                        BatchTargets::Classes(&batch_labels)
                    }
                    Task::Regression => {
                        batch_values = idx.iter().map(|&i| scaled[i]).collect();
                        BatchTargets::Values(&batch_values)
                    }
                };
                let loss = model.loss(&mut tape, out, targets).map_err(context)?;
                grads.zero();
                tape.backward(loss, &mut grads).map_err(context)?;
                tape.data(loss)[0] as f64
            };
            adam.step(model.params_mut(), &grads).map_err(context)?;
            loss_sum += loss;
            batches += 1;
        }

        let placeholder = snapshot(&model, epoch, f64::NAN);
        let preds = placeholder.predict_with(&model, &val_tokens)?;
        let val_metric = score(model_cfg.task, &preds, val_set.targets())?;
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / batches as f64,
            val_metric,
        };
        history.push(record);
        observe(&record);

        if val_metric > best_metric || best.is_none() {
            best_metric = val_metric;
            best = Some(snapshot(&model, epoch, val_metric));
            stale = 0;
        } else {
            stale += 1;
            if stale > cfg.patience {
                stopped_early = epoch < cfg.epochs;
                break;
            }
        }
    }
    Ok(TrainOutcome {
        checkpoint: best.expect("at least one epoch"),
        history,
        stopped_early,
    })
}

/// Map a dataset's labels onto the checkpoint's label ids by name.
fn align_targets(ckpt: &Checkpoint, ds: &Dataset) -> Result<Targets> {
    match ds.targets() {
        Targets::Values(v) => Ok(Targets::Values(v.clone())),
        Targets::Classes { labels, names } => {
            let remap = names
                .iter()
                .map(|n| {
                    ckpt.labels
                        .iter()
                        .position(|c| c == n)
                        .ok_or_else(|| Error::Config(format!("class {n:?} unknown to the checkpoint")))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(Targets::Classes {
                labels: labels.iter().map(|&l| remap[l]).collect(),
                names: ckpt.labels.clone(),
            })
        }
    }
}

/// ACC or PCC of unmasked predictions.
pub fn evaluate(ckpt: &Checkpoint, ds: &Dataset) -> Result<Evaluation> {
    let task_matches = matches!(
        (ckpt.model.task, ds.task()),
        (Task::Regression, Task::Regression) | (Task::Classification { .. }, Task::Classification { .. })
    );
    if !task_matches {
        return Err(Error::Config(format!(
            "checkpoint task {:?} does not match dataset task {:?}",
            ckpt.model.task,
            ds.task()
        )));
    }
    let targets = align_targets(ckpt, ds)?;
    let tokens: Vec<TokenIds> = ds.tokenize(ckpt.model.k)?;
    let predictions = ckpt.predict(&tokens)?;
    let metric = score(ckpt.model.task, &predictions, &targets)?;
    Ok(Evaluation {
        kind: metric_kind(ckpt.model.task),
        metric,
        predictions,
    })
}

/// `epoch,train_loss,val_metric` rows.
pub fn write_history_csv(mut out: impl std::io::Write, history: &[EpochRecord]) -> Result<()> {
    writeln!(out, "epoch,train_loss,val_metric")?;
    for r in history {
        writeln!(out, "{},{},{}", r.epoch, r.train_loss, r.val_metric)?;
    }
    Ok(())
}
