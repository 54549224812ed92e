use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid base {0:?}: expected one of A, T, C, G, N")]
    InvalidBase(char),

    #[error("invalid SNP letter {symbol:?} at offset {offset}")]
    Parse { offset: usize, symbol: char },

    #[error("empty sequence")]
    EmptySequence,

    #[error("tokenize: {0}")]
    Tokenize(String),

    #[error("sequence of length {len} is shorter than k = {k}")]
    SequenceTooShort { len: usize, k: usize },

    #[error("token id {id} is the mask id and cannot be inverted")]
    NotInvertible { id: u32 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("backward requires a scalar loss, got shape {0:?}")]
    Rank(Vec<usize>),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("token id {id} outside vocabulary of size {vocab}")]
    Vocab { id: u32, vocab: usize },

    #[error("label {label} out of range for {classes} classes")]
    Label { label: usize, classes: usize },

    #[error("sample {0:?} has no phenotype row for the selected trait")]
    Join(String),

    #[error("sequence {id:?} has length {actual}, expected {expected}")]
    Length {
        id: String,
        expected: usize,
        actual: usize,
    },

    #[error("line {line}: {message}")]
    Value { line: usize, message: String },

    #[error("degenerate input: {0}")]
    DegenerateInput(&'static str),

    #[error("checkpoint format: {0}")]
    Format(String),

    #[error("checkpoint corrupted: {0}")]
    Corruption(String),

    #[error("{path}:{line}: {source}")]
    InFile {
        path: PathBuf,
        line: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Shape {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    pub(crate) fn in_file(path: impl Into<PathBuf>, line: usize, source: Error) -> Self {
        Error::InFile {
            path: path.into(),
            line,
            source: Box::new(source),
        }
    }

    /// True for failures caused by non-finite values during training or
    /// optimization, as opposed to bad input or configuration.
    pub fn is_numeric(&self) -> bool {
        match self {
            Error::Numeric(_) => true,
            Error::InFile { source, .. } => source.is_numeric(),
            _ => false,
        }
    }
}
