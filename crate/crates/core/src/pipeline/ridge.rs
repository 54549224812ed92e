//! Closed-form ridge regression on per-locus one-hot features, with a
//! one-vs-rest classifier on top.

use nalgebra::{DMatrix, DVector};

use super::cv::run_indexed;
use super::dataset::{Dataset, Targets};
use super::metrics::{accuracy, pcc_or_zero, FoldReport, FoldResult, MetricKind, Stopwatch};
use super::split::five_fold_split;
use crate::codec::PreprocessedSequence;
use crate::error::{Error, Result};
use crate::model::argmax;

/// Five columns per locus, in A, T, C, G, X order.
pub fn one_hot(seqs: &[PreprocessedSequence]) -> DMatrix<f64> {
    let len = seqs.first().map_or(0, |s| s.len());
    let mut x = DMatrix::zeros(seqs.len(), 5 * len);
    for (i, s) in seqs.iter().enumerate() {
        for (j, sym) in s.letters().iter().enumerate() {
            x[(i, 5 * j + sym.digit() as usize)] = 1.0;
        }
    }
    x
}

fn column_means(x: &DMatrix<f64>) -> DVector<f64> {
    let n = x.nrows().max(1) as f64;
    DVector::from_iterator(x.ncols(), x.column_iter().map(|c| c.sum() / n))
}

fn center(x: &DMatrix<f64>, means: &DVector<f64>) -> DMatrix<f64> {
    let mut out = x.clone();
    for (mut col, &m) in out.column_iter_mut().zip(means.iter()) {
        col.add_scalar_mut(-m);
    }
    out
}

/// Ridge solution for every column of `y` at once.
#[derive(Debug, Clone)]
pub struct RidgeFit {
    x_mean: DVector<f64>,
    y_mean: DVector<f64>,
    weights: DMatrix<f64>,
}

impl RidgeFit {
    /// Minimizes `|Xc w - yc|^2 + l2 |w|^2` on centered data, so the
    /// intercept is not penalized. Uses the `n x n` dual system when there
    /// are more features than samples.
    pub fn fit(x: &DMatrix<f64>, y: &DMatrix<f64>, l2: f64) -> Result<RidgeFit> {
        if !(l2 > 0.0 && l2.is_finite()) {
            return Err(Error::Config(format!("ridge penalty must be positive, got {l2}")));
        }
        if x.nrows() != y.nrows() || x.nrows() == 0 {
            return Err(Error::shape("ridge", &[x.nrows(), x.ncols()], &[y.nrows(), y.ncols()]));
        }
        let x_mean = column_means(x);
        let y_mean = column_means(y);
        let xc = center(x, &x_mean);
        let yc = center(y, &y_mean);
        let singular = || Error::Numeric("ridge system is not positive definite".into());
        let weights = if xc.ncols() > xc.nrows() {
            let mut k = &xc * xc.transpose();
            for i in 0..k.nrows() {
                k[(i, i)] += l2;
            }
            let alpha = k.cholesky().ok_or_else(singular)?.solve(&yc);
            xc.transpose() * alpha
        } else {
            let mut g = xc.transpose() * &xc;
            for i in 0..g.nrows() {
                g[(i, i)] += l2;
            }
            g.cholesky().ok_or_else(singular)?.solve(&(xc.transpose() * &yc))
        };
        Ok(RidgeFit { x_mean, y_mean, weights })
    }

    pub fn predict(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.ncols() != self.x_mean.len() {
            return Err(Error::shape("ridge predict", &[x.nrows(), x.ncols()], &[self.x_mean.len()]));
        }
        let mut out = center(x, &self.x_mean) * &self.weights;
        for (mut col, &m) in out.column_iter_mut().zip(self.y_mean.iter()) {
            col.add_scalar_mut(m);
        }
        Ok(out)
    }
}

fn target_matrix(targets: &Targets, idx: &[usize]) -> DMatrix<f64> {
    match targets {
        Targets::Values(v) => DMatrix::from_fn(idx.len(), 1, |i, _| v[idx[i]]),
        Targets::Classes { labels, names } => DMatrix::from_fn(idx.len(), names.len(), |i, c| {
            if labels[idx[i]] == c {
                1.0
            } else {
                -1.0
            }
        }),
    }
}

/// Metric of a ridge model fit on `fit_idx` and scored on `test_idx`.
pub fn ridge_holdout(ds: &Dataset, x: &DMatrix<f64>, fit_idx: &[usize], test_idx: &[usize], l2: f64) -> Result<f64> {
    let rows = |idx: &[usize]| x.select_rows(idx.iter());
    let fit = RidgeFit::fit(&rows(fit_idx), &target_matrix(ds.targets(), fit_idx), l2)?;
    let pred = fit.predict(&rows(test_idx))?;
    match ds.targets() {
        Targets::Values(v) => {
            let truth: Vec<f64> = test_idx.iter().map(|&i| v[i]).collect();
            pcc_or_zero(pred.column(0).as_slice(), &truth)
        }
        Targets::Classes { labels, .. } => {
            let guess: Vec<usize> = pred
                .row_iter()
                .map(|r| argmax(&r.iter().copied().collect::<Vec<_>>()))
                .collect();
            let truth: Vec<usize> = test_idx.iter().map(|&i| labels[i]).collect();
            accuracy(&guess, &truth)
        }
    }
}

/// Ridge under the same five folds as the transformer (train and
/// validation parts are both used for fitting).
pub fn ridge_baseline(ds: &Dataset, l2: f64, seed: u64, threads: usize) -> Result<FoldReport> {
    let start = Stopwatch::start();
    let folds = five_fold_split(ds.len(), seed)?;
    let x = one_hot(ds.sequences());
    let results = run_indexed(folds.len(), threads, |i| {
        let t0 = Stopwatch::start();
        let metric = ridge_holdout(ds, &x, &folds[i].fit_indices(), &folds[i].test, l2)?;
        Ok(FoldResult {
            fold: i,
            seed,
            metric,
            wall_seconds: t0.seconds(),
        })
    })?;
    let kind = match ds.targets() {
        Targets::Values(_) => MetricKind::Pcc,
        Targets::Classes { .. } => MetricKind::Accuracy,
    };
    Ok(FoldReport::new(kind, results, start.seconds()))
}
