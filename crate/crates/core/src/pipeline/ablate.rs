//! Ablation grids: cross-validation repeated over tokenizer settings.

use std::io::Write;
use std::str::FromStr;

use super::cv::cross_validate;
use super::dataset::Dataset;
use super::metrics::FoldReport;
use super::train::TrainConfig;
use crate::error::{Error, Result};
use crate::model::ModelConfig;

pub const MASK_GRID: [f64; 5] = [0.0, 0.15, 0.30, 0.45, 0.60];
/// Masking proportion used by the `+mask` component cells.
pub const COMPONENT_MASK: f64 = 0.15;

#[derive(Debug, Clone, PartialEq)]
pub enum Grid {
    K(Vec<usize>),
    Mask(Vec<f64>),
    /// `-kmer` tokenizes single letters (k = 1); `+kmer` keeps the base k.
    Component,
}

impl Grid {
    pub fn name(&self) -> &'static str {
        match self {
            Grid::K(_) => "k",
            Grid::Mask(_) => "mask",
            Grid::Component => "component",
        }
    }

    /// `(label, k, mask_prob)` per cell.
    pub fn cells(&self, base_k: usize) -> Vec<(String, usize, f64)> {
        match self {
            Grid::K(ks) => ks.iter().map(|&k| (format!("k={k}"), k, f64::NAN)).collect(),
            Grid::Mask(ps) => ps.iter().map(|&p| (format!("mask={p}"), 0, p)).collect(),
            Grid::Component => [(false, false), (false, true), (true, false), (true, true)]
                .into_iter()
                .map(|(kmer, mask)| {
                    let sign = |on: bool| if on { '+' } else { '-' };
                    (
                        format!("{}kmer {}mask", sign(kmer), sign(mask)),
                        if kmer { base_k } else { 1 },
                        if mask { COMPONENT_MASK } else { 0.0 },
                    )
                })
                .collect(),
        }
    }
}

/// `k`, `mask`, `component`, or an explicit list such as `k:1..8`,
/// `k:4,6` or `mask:0,0.3`.
impl FromStr for Grid {
    type Err = Error;

    fn from_str(s: &str) -> Result<Grid> {
        let bad = |m: String| Error::Config(format!("grid {s:?}: {m}"));
        let (name, list) = match s.split_once(':') {
            Some((n, l)) => (n.trim(), Some(l.trim())),
            None => (s.trim(), None),
        };
        match (name, list) {
            ("component", None) => Ok(Grid::Component),
            ("k", None) => Ok(Grid::K((1..=8).collect())),
            ("mask", None) => Ok(Grid::Mask(MASK_GRID.to_vec())),
            ("k", Some(l)) => {
                let ks = if let Some((a, b)) = l.split_once("..") {
                    let a: usize = a.parse().map_err(|_| bad("bad range start".into()))?;
                    let b: usize = b.parse().map_err(|_| bad("bad range end".into()))?;
                    (a..=b).collect()
                } else {
                    l.split(',')
                        .map(|v| v.trim().parse().map_err(|_| bad(format!("bad k {v:?}"))))
                        .collect::<Result<Vec<usize>>>()?
                };
                if ks.is_empty() {
                    return Err(bad("empty k list".into()));
                }
                Ok(Grid::K(ks))
            }
            ("mask", Some(l)) => {
                let ps = l
                    .split(',')
                    .map(|v| v.trim().parse().map_err(|_| bad(format!("bad proportion {v:?}"))))
                    .collect::<Result<Vec<f64>>>()?;
                Ok(Grid::Mask(ps))
            }
            _ => Err(bad("expected k, mask or component".into())),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub label: String,
    pub k: usize,
    pub mask_prob: f64,
    pub report: FoldReport,
}

/// Five-fold cross-validation for every cell of `grid`. Settings the grid
/// does not touch come from `model` and `train`.
pub fn ablate(ds: &Dataset, model: &ModelConfig, train: &TrainConfig, grid: &Grid, threads: usize) -> Result<Vec<Cell>> {
    grid.cells(model.k)
        .into_iter()
        .map(|(label, k, p)| {
            let k = if k == 0 { model.k } else { k };
            let mask_prob = if p.is_nan() { train.mask_prob } else { p };
            let cell_model = ModelConfig {
                k,
                seq_tokens: ds.seq_tokens(k),
                ..model.clone()
            };
            let cell_train = TrainConfig {
                mask_prob,
                ..train.clone()
            };
            let report = cross_validate(ds, &cell_model, &cell_train, threads)?.report;
            Ok(Cell {
                label,
                k,
                mask_prob,
                report,
            })
        })
        .collect()
}

/// One row per cell: `grid,cell,k,mask_prob,metric,mean,std,fold0..`.
pub fn write_ablation_csv(mut out: impl Write, grid: &Grid, cells: &[Cell]) -> Result<()> {
    let folds = cells.iter().map(|c| c.report.folds.len()).max().unwrap_or(0);
    write!(out, "grid,cell,k,mask_prob,metric,mean,std")?;
    for f in 0..folds {
        write!(out, ",fold{f}")?;
    }
    writeln!(out)?;
    for c in cells {
        write!(
            out,
            "{},{},{},{},{},{},{}",
            grid.name(),
            c.label,
            c.k,
            c.mask_prob,
            c.report.kind,
            c.report.mean,
            c.report.std
        )?;
        for v in c.report.values() {
            write!(out, ",{v}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_parsing() {
        assert_eq!("k".parse::<Grid>().unwrap(), Grid::K((1..=8).collect()));
        assert_eq!("k:2..4".parse::<Grid>().unwrap(), Grid::K(vec![2, 3, 4]));
        assert_eq!("k:4,6".parse::<Grid>().unwrap(), Grid::K(vec![4, 6]));
        assert_eq!("mask".parse::<Grid>().unwrap(), Grid::Mask(MASK_GRID.to_vec()));
        assert_eq!("mask:0,0.3".parse::<Grid>().unwrap(), Grid::Mask(vec![0.0, 0.3]));
        assert_eq!("component".parse::<Grid>().unwrap(), Grid::Component);
        for bad in ["", "depth", "k:", "k:a..3", "mask:x", "component:1"] {
            assert!(bad.parse::<Grid>().is_err(), "{bad}");
        }
    }

    #[test]
    fn component_cells() {
        let cells = Grid::Component.cells(6);
        let got: Vec<(&str, usize, f64)> = cells.iter().map(|(l, k, p)| (l.as_str(), *k, *p)).collect();
        assert_eq!(
            got,
            [
                ("-kmer -mask", 1, 0.0),
                ("-kmer +mask", 1, 0.15),
                ("+kmer -mask", 6, 0.0),
                ("+kmer +mask", 6, 0.15)
            ]
        );
    }
}
