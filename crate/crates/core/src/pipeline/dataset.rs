use std::collections::{HashMap, HashSet};
use std::path::Path;

use crate::codec::{preprocess, read_sequence_file, PreprocessedSequence, SnpSequence};
use crate::error::{Error, Result};
use crate::model::Task;
use crate::tokenizer::{kmer_tokenize, TokenIds};

/// How phenotype values are interpreted.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskKind {
    Classification,
    Regression,
}

impl std::str::FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "classification" | "cls" => Ok(TaskKind::Classification),
            "regression" | "reg" => Ok(TaskKind::Regression),
            _ => Err(Error::Config(format!(
                "unknown task {s:?} (expected classification or regression)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    /// Dense labels in `[0, names.len())`; `names[i]` is the original value.
    Classes { labels: Vec<usize>, names: Vec<String> },
    Values(Vec<f64>),
}

impl Targets {
    pub fn len(&self) -> usize {
        match self {
            Targets::Classes { labels, .. } => labels.len(),
            Targets::Values(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn subset(&self, idx: &[usize]) -> Targets {
        match self {
            Targets::Classes { labels, names } => Targets::Classes {
                labels: idx.iter().map(|&i| labels[i]).collect(),
                names: names.clone(),
            },
            Targets::Values(v) => Targets::Values(idx.iter().map(|&i| v[i]).collect()),
        }
    }
}

/// Paired genotypes and phenotypes sharing one sequence length.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    sequences: Vec<PreprocessedSequence>,
    targets: Targets,
}

impl Dataset {
    pub fn new(sequences: Vec<PreprocessedSequence>, targets: Targets) -> Result<Self> {
        if sequences.len() != targets.len() {
            return Err(Error::Config(format!(
                "{} sequences but {} targets",
                sequences.len(),
                targets.len()
            )));
        }
        if let Some(first) = sequences.first() {
            for s in &sequences {
                if s.len() != first.len() {
                    return Err(Error::Length {
                        id: s.id().to_string(),
                        expected: first.len(),
                        actual: s.len(),
                    });
                }
            }
        }
        if let Targets::Classes { labels, names } = &targets {
            if let Some(&bad) = labels.iter().find(|&&l| l >= names.len()) {
                return Err(Error::Label {
                    label: bad,
                    classes: names.len(),
                });
            }
        }
        Ok(Dataset { sequences, targets })
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    /// Shared sequence length `N_l` (0 for an empty dataset).
    pub fn seq_len(&self) -> usize {
        self.sequences.first().map_or(0, |s| s.len())
    }

    pub fn seq_tokens(&self, k: usize) -> usize {
        if k == 0 {
            0
        } else {
            self.seq_len() / k
        }
    }

    pub fn sequences(&self) -> &[PreprocessedSequence] {
        &self.sequences
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.sequences.iter().map(|s| s.id())
    }

    pub fn targets(&self) -> &Targets {
        &self.targets
    }

    pub fn kind(&self) -> TaskKind {
        match self.targets {
            Targets::Classes { .. } => TaskKind::Classification,
            Targets::Values(_) => TaskKind::Regression,
        }
    }

    pub fn task(&self) -> Task {
        match &self.targets {
            Targets::Classes { names, .. } => Task::Classification { classes: names.len() },
            Targets::Values(_) => Task::Regression,
        }
    }

    pub fn class_names(&self) -> Option<&[String]> {
        match &self.targets {
            Targets::Classes { names, .. } => Some(names),
            Targets::Values(_) => None,
        }
    }

    /// Samples at `idx`, in that order. The label map is kept whole.
    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            sequences: idx.iter().map(|&i| self.sequences[i].clone()).collect(),
            targets: self.targets.subset(idx),
        }
    }

    pub fn tokenize(&self, k: usize) -> Result<Vec<TokenIds>> {
        self.sequences.iter().map(|s| kmer_tokenize(s, k)).collect()
    }
}

/// Order label strings: numerically if every label is an integer, else lexically.
pub fn sorted_label_names<'a>(values: impl IntoIterator<Item = &'a str>) -> Vec<String> {
    let mut names: Vec<String> = values
        .into_iter()
        .collect::<HashSet<_>>()
        .into_iter()
        .map(str::to_string)
        .collect();
    if names.iter().all(|n| n.parse::<i64>().is_ok()) {
        names.sort_by_key(|n| n.parse::<i64>().expect("checked"));
    } else {
        names.sort();
    }
    names
}

struct PhenotypeRow {
    line: usize,
    value: String,
}

fn read_phenotypes(path: &Path, trait_name: &str) -> Result<HashMap<String, PhenotypeRow>> {
    let wrap = |line: usize, e: Error| Error::in_file(path, line, e);
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let header = reader.headers()?.clone();
    if header.iter().collect::<Vec<_>>() != ["sample_id", "trait", "value"] {
        return Err(wrap(
            1,
            Error::Value {
                line: 1,
                message: format!("expected header sample_id,trait,value, found {:?}", header.as_slice()),
            },
        ));
    }
    let mut rows = HashMap::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() != 3 {
            let err = Error::Value {
                line,
                message: format!("expected 3 fields, found {}", record.len()),
            };
            return Err(wrap(line, err));
        }
        if &record[1] != trait_name {
            continue;
        }
        let id = record[0].to_string();
        if let Some(prev) = rows.get(&id) {
            let PhenotypeRow { line: first, .. } = prev;
            let err = Error::Value {
                line,
                message: format!("duplicate value for sample {id:?} (first on line {first})"),
            };
            return Err(wrap(line, err));
        }
        rows.insert(
            id,
            PhenotypeRow {
                line,
                value: record[2].to_string(),
            },
        );
    }
    Ok(rows)
}

/// Join parsed sequences with phenotype rows for one trait.
pub fn join_phenotypes(
    sequences: &[SnpSequence],
    pheno_path: &Path,
    trait_name: &str,
    kind: TaskKind,
) -> Result<Dataset> {
    let rows = read_phenotypes(pheno_path, trait_name)?;
    let mut matched = Vec::with_capacity(sequences.len());
    for seq in sequences {
        let row = rows
            .get(seq.id())
            .ok_or_else(|| Error::Join(seq.id().to_string()))?;
        matched.push(row);
    }
    let bad_value = |row: &PhenotypeRow, message: String| {
        Error::in_file(pheno_path, row.line, Error::Value { line: row.line, message })
    };
    let targets = match kind {
        TaskKind::Regression => {
            let mut values = Vec::with_capacity(matched.len());
            for row in &matched {
                let v: f64 = row
                    .value
                    .parse()
                    .map_err(|_| bad_value(row, format!("{:?} is not a number", row.value)))?;
                if !v.is_finite() {
                    return Err(bad_value(row, format!("{:?} is not finite", row.value)));
                }
                values.push(v);
            }
            Targets::Values(values)
        }
        TaskKind::Classification => {
            if let Some(row) = matched.iter().find(|r| r.value.is_empty()) {
                return Err(bad_value(row, "empty class label".into()));
            }
            let names = sorted_label_names(matched.iter().map(|r| r.value.as_str()));
            let index: HashMap<&str, usize> = names.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
            let labels = matched.iter().map(|r| index[r.value.as_str()]).collect();
            Targets::Classes { labels, names }
        }
    };
    Dataset::new(sequences.iter().map(preprocess).collect(), targets)
}

pub fn load_dataset(
    seq_path: impl AsRef<Path>,
    pheno_path: impl AsRef<Path>,
    trait_name: &str,
    kind: TaskKind,
) -> Result<Dataset> {
    let sequences = read_sequence_file(seq_path)?;
    join_phenotypes(&sequences, pheno_path.as_ref(), trait_name, kind)
}
