use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use super::dataset::Dataset;
use super::metrics::{FoldReport, FoldResult, Stopwatch};
use super::split::{five_fold_split, fold_seed, Fold};
use super::train::{evaluate, metric_kind, train, TrainConfig, TrainOutcome};
use crate::error::Result;
use crate::model::ModelConfig;

/// Run `job(0..n)` on up to `threads` scoped workers. Results come back in
/// index order, so the worker count never changes the output.
pub fn run_indexed<T: Send>(n: usize, threads: usize, job: impl Fn(usize) -> Result<T> + Sync) -> Result<Vec<T>> {
    let threads = threads.clamp(1, n.max(1));
    if threads == 1 {
        return (0..n).map(&job).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<T>>>> = Mutex::new((0..n).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..threads {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= n {
                    break;
                }
                let r = job(i);
                slots.lock().expect("worker panicked")[i] = Some(r);
            });
        }
    });
    slots
        .into_inner()
        .expect("worker panicked")
        .into_iter()
        .map(|r| r.expect("every index ran"))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldOutcome {
    pub fold: Fold,
    pub training: TrainOutcome,
    pub test_metric: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvOutcome {
    pub report: FoldReport,
    pub folds: Vec<FoldOutcome>,
}

/// Five-fold cross-validation. Folds are split with `cfg.seed`; fold `i`
/// trains with `fold_seed(cfg.seed, i)`.
pub fn cross_validate(ds: &Dataset, model: &ModelConfig, cfg: &TrainConfig, threads: usize) -> Result<CvOutcome> {
    cfg.validate()?;
    model.validate()?;
    let start = Stopwatch::start();
    let folds = five_fold_split(ds.len(), cfg.seed)?;
    let runs = run_indexed(folds.len(), threads, |i| {
        let fold = &folds[i];
        let t0 = Stopwatch::start();
        let fold_cfg = TrainConfig {
            seed: fold_seed(cfg.seed, i),
            ..cfg.clone()
        };
        let training = train(&ds.subset(&fold.train), &ds.subset(&fold.validation), model, &fold_cfg)?;
        let test_metric = evaluate(&training.checkpoint, &ds.subset(&fold.test))?.metric;
        Ok((
            FoldOutcome {
                fold: fold.clone(),
                training,
                test_metric,
            },
            FoldResult {
                fold: i,
                seed: fold_cfg.seed,
                metric: test_metric,
                wall_seconds: t0.seconds(),
            },
        ))
    })?;
    let (outcomes, results): (Vec<_>, Vec<_>) = runs.into_iter().unzip();
    Ok(CvOutcome {
        report: FoldReport::new(metric_kind(model.task), results, start.seconds()),
        folds: outcomes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    use crate::error::Error;

    #[test]
    fn results_follow_index_order() {
        for threads in [1, 2, 7] {
            let out = run_indexed(10, threads, |i| Ok(i * i)).unwrap();
            assert_eq!(out, (0..10).map(|i| i * i).collect::<Vec<_>>());
        }
        let err = run_indexed(4, 2, |i| if i == 2 { Err(Error::Config("x".into())) } else { Ok(i) });
        assert!(err.is_err());
        assert!(run_indexed(0, 3, Ok).unwrap().is_empty());
    }
}
