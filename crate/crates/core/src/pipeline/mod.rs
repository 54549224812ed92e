//! Datasets, folds, training, metrics, synthetic data, ridge and checkpoints.

pub mod ablate;
pub mod checkpoint;
pub mod cv;
pub mod dataset;
pub mod metrics;
pub mod ridge;
pub mod split;
pub mod synth;
pub mod train;

pub use ablate::{ablate, write_ablation_csv, Cell, Grid};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, TargetScale};
pub use cv::{cross_validate, run_indexed, CvOutcome, FoldOutcome};
pub use dataset::{load_dataset, Dataset, Targets, TaskKind};
pub use metrics::{accuracy, pcc, FoldReport, FoldResult, MetricKind};
pub use ridge::{one_hot, ridge_baseline, RidgeFit};
pub use split::{five_fold_split, Fold};
pub use synth::{synth_generate, Noise, Signal, SynthConfig, SynthTask, Synthetic};
pub use train::{evaluate, train, EpochRecord, Evaluation, TrainConfig, TrainOutcome};
