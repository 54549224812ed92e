use std::fmt;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use crate::error::{Error, Result};

/// Pearson correlation, two-pass.
pub fn pcc(pred: &[f64], target: &[f64]) -> Result<f64> {
    if pred.len() != target.len() {
        return Err(Error::shape("pcc", &[pred.len()], &[target.len()]));
    }
    if pred.len() < 2 {
        return Err(Error::DegenerateInput("correlation needs at least two samples"));
    }
    let n = pred.len() as f64;
    let mp = pred.iter().sum::<f64>() / n;
    let mt = target.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&p, &t) in pred.iter().zip(target) {
        let (dp, dt) = (p - mp, t - mt);
        sxy += dp * dt;
        sxx += dp * dp;
        syy += dt * dt;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::DegenerateInput("correlation of a constant vector"));
    }
    Ok(sxy / (sxx * syy).sqrt())
}

/// PCC with constant predictions scored as 0 (no linear association).
pub fn pcc_or_zero(pred: &[f64], target: &[f64]) -> Result<f64> {
    match pcc(pred, target) {
        Err(Error::DegenerateInput(_)) if pred.len() == target.len() && pred.len() >= 2 => Ok(0.0),
        other => other,
    }
}

pub fn accuracy(pred: &[usize], labels: &[usize]) -> Result<f64> {
    if pred.len() != labels.len() {
        return Err(Error::shape("accuracy", &[pred.len()], &[labels.len()]));
    }
    if pred.is_empty() {
        return Err(Error::DegenerateInput("accuracy of an empty set"));
    }
    let hits = pred.iter().zip(labels).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / pred.len() as f64)
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample (n - 1) standard deviation; 0 for a single value.
pub fn sample_std(xs: &[f64]) -> f64 {
    match xs.len() {
        0 => f64::NAN,
        1 => 0.0,
        n => {
            let m = mean(xs);
            (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetricKind {
    Accuracy,
    Pcc,
}

impl MetricKind {
    pub fn name(self) -> &'static str {
        match self {
            MetricKind::Accuracy => "acc",
            MetricKind::Pcc => "pcc",
        }
    }
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Wall clock that reads zero on targets without one (browser wasm).
#[derive(Debug, Clone, Copy)]
pub(crate) struct Stopwatch(Option<Instant>);

impl Stopwatch {
    pub(crate) fn start() -> Self {
        let has_clock = !cfg!(all(target_arch = "wasm32", target_os = "unknown"));
        Stopwatch(has_clock.then(Instant::now))
    }

    pub(crate) fn seconds(&self) -> f64 {
        self.0.map_or(0.0, |t| t.elapsed().as_secs_f64())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldResult {
    pub fold: usize,
    pub seed: u64,
    pub metric: f64,
    pub wall_seconds: f64,
}

/// Per-fold metrics with their mean and sample standard deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldReport {
    pub kind: MetricKind,
    pub folds: Vec<FoldResult>,
    pub mean: f64,
    pub std: f64,
    pub wall_seconds: f64,
}

impl FoldReport {
    pub fn new(kind: MetricKind, folds: Vec<FoldResult>, wall_seconds: f64) -> Self {
        let values = folds.iter().map(|f| f.metric).collect::<Vec<_>>();
        FoldReport {
            kind,
            mean: mean(&values),
            std: sample_std(&values),
            folds,
            wall_seconds,
        }
    }

    pub fn values(&self) -> Vec<f64> {
        self.folds.iter().map(|f| f.metric).collect()
    }

    /// `fold,metric,value` rows, then `mean` and `std` summary rows.
    /// Wall times are left out so identical runs give identical files.
    pub fn write_csv(&self, mut out: impl Write) -> Result<()> {
        writeln!(out, "fold,metric,value")?;
        for f in &self.folds {
            writeln!(out, "{},{},{}", f.fold, self.kind, f.metric)?;
        }
        writeln!(out, "mean,{},{}", self.kind, self.mean)?;
        writeln!(out, "std,{},{}", self.kind, self.std)?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_csv(&mut out)?;
        out.flush()?;
        Ok(())
    }

    /// Parse the CSV written by [`FoldReport::write_csv`]; wall times and
    /// seeds are not stored there and come back as zero.
    pub fn parse_csv(text: &str) -> Result<FoldReport> {
        let bad = |line: usize, message: &str| Error::Value {
            line,
            message: message.to_string(),
        };
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, "fold,metric,value")) => {}
            _ => return Err(bad(1, "expected header fold,metric,value")),
        }
        let mut kind = None;
        let mut folds = Vec::new();
        for (i, line) in lines {
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 3 {
                return Err(bad(i + 1, "expected 3 fields"));
            }
            let k = match fields[1] {
                "acc" => MetricKind::Accuracy,
                "pcc" => MetricKind::Pcc,
                _ => return Err(bad(i + 1, "unknown metric")),
            };
            if kind.is_some_and(|prev| prev != k) {
                return Err(bad(i + 1, "mixed metrics"));
            }
            kind = Some(k);
            let value: f64 = fields[2].parse().map_err(|_| bad(i + 1, "bad value"))?;
            if let Ok(fold) = fields[0].parse::<usize>() {
                folds.push(FoldResult {
                    fold,
                    seed: 0,
                    metric: value,
                    wall_seconds: 0.0,
                });
            }
        }
        let kind = kind.ok_or_else(|| bad(2, "no rows"))?;
        Ok(FoldReport::new(kind, folds, 0.0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn pcc_unit_cases() {
        assert_eq!(pcc(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), 1.0);
        assert_eq!(pcc(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap(), -1.0);
        assert!(matches!(pcc(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]), Err(Error::DegenerateInput(_))));
        assert!(matches!(pcc(&[1.0], &[1.0]), Err(Error::DegenerateInput(_))));
        assert!(matches!(pcc(&[1.0, 2.0], &[1.0]), Err(Error::Shape { .. })));
        assert_eq!(pcc_or_zero(&[2.0, 2.0, 2.0], &[1.0, 2.0, 3.0]).unwrap(), 0.0);
    }

    #[test]
    fn pcc_matches_covariance_oracle() {
        let (x, y) = ([1.0, 2.0, 3.0, 4.0], [1.0, 2.0, 3.0, 100.0]);
        // cov / (sd sd) with population moments
        let n = 4.0;
        let ex = x.iter().sum::<f64>() / n;
        let ey = y.iter().sum::<f64>() / n;
        let exy = x.iter().zip(&y).map(|(a, b)| a * b).sum::<f64>() / n;
        let exx = x.iter().map(|a| a * a).sum::<f64>() / n;
        let eyy = y.iter().map(|a| a * a).sum::<f64>() / n;
        let want = (exy - ex * ey) / ((exx - ex * ex).sqrt() * (eyy - ey * ey).sqrt());
        assert_abs_diff_eq!(pcc(&x, &y).unwrap(), want, epsilon = 1e-12);
    }

    #[test]
    fn accuracy_unit_cases() {
        assert_eq!(accuracy(&[0, 1, 2], &[0, 1, 2]).unwrap(), 1.0);
        assert_eq!(accuracy(&[0, 1, 2, 2], &[0, 1, 1, 0]).unwrap(), 0.5);
        assert_eq!(accuracy(&[1, 1], &[0, 0]).unwrap(), 0.0);
        assert!(accuracy(&[], &[]).is_err());
    }

    #[test]
    fn fold_summaries() {
        let results = |vals: &[f64]| {
            vals.iter()
                .enumerate()
                .map(|(fold, &metric)| FoldResult {
                    fold,
                    seed: fold as u64,
                    metric,
                    wall_seconds: 1.0,
                })
                .collect::<Vec<_>>()
        };
        let r = FoldReport::new(MetricKind::Accuracy, results(&[0.8; 5]), 5.0);
        assert_abs_diff_eq!(r.mean, 0.8, epsilon = 1e-15);
        assert_eq!(r.std, 0.0);

        let r = FoldReport::new(MetricKind::Pcc, results(&[0.6, 0.7, 0.8, 0.9, 1.0]), 5.0);
        assert_abs_diff_eq!(r.mean, 0.8, epsilon = 1e-12);
        assert_abs_diff_eq!(r.std, 0.025f64.sqrt(), epsilon = 1e-12);
        assert_abs_diff_eq!(r.std, 0.1581, epsilon = 1e-4);

        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("fold,metric,value\n0,pcc,0.6\n"));
        let back = FoldReport::parse_csv(&text).unwrap();
        assert_eq!(back.values(), r.values());
        assert_eq!((back.mean, back.std), (r.mean, r.std));
    }

    proptest! {
        #[test]
        fn pcc_affine_invariance(
            pairs in prop::collection::vec((-100.0f64..100.0, -100.0f64..100.0), 3..50),
            a in 0.01f64..100.0,
            b in -100.0f64..100.0,
        ) {
            let (x, y): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            prop_assume!(sample_std(&x) > 1e-3 && sample_std(&y) > 1e-3);
            let base = pcc(&x, &y).unwrap();
            let moved: Vec<f64> = x.iter().map(|v| a * v + b).collect();
            prop_assert!((pcc(&moved, &y).unwrap() - base).abs() < 1e-9);
            prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&base));
        }
    }
}
