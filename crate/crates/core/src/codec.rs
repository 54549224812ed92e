//! SNP letter alphabet, genotype-pair coding and the many-to-one
//! preprocessing that collapses every non-ACGT letter to `X`.
//!
//! Pair coding follows the IUPAC-style convention: homozygous pairs keep
//! their base letter, each heterozygous pair has its own letter, and any
//! pair containing an unsequenced `N` is `N`.
//!
//! | pair | letter |
//! |------|--------|
//! | AA TT CC GG | A T C G |
//! | TC | Y |
//! | TG | K |
//! | AT | W |
//! | AG | R |
//! | CG | S |
//! | AC | M |

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

/// A single nucleotide call on one allele.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Base {
    A,
    T,
    C,
    G,
    N,
}

impl Base {
    pub const ALL: [Base; 5] = [Base::A, Base::T, Base::C, Base::G, Base::N];

    pub fn as_char(self) -> char {
        match self {
            Base::A => 'A',
            Base::T => 'T',
            Base::C => 'C',
            Base::G => 'G',
            Base::N => 'N',
        }
    }
}

impl TryFrom<char> for Base {
    type Error = Error;

    fn try_from(c: char) -> Result<Self> {
        match c.to_ascii_uppercase() {
            'A' => Ok(Base::A),
            'T' => Ok(Base::T),
            'C' => Ok(Base::C),
            'G' => Ok(Base::G),
            'N' => Ok(Base::N),
            _ => Err(Error::InvalidBase(c)),
        }
    }
}

/// One position of a raw SNP sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SnpLetter {
    A,
    T,
    C,
    G,
    N,
    Y,
    K,
    W,
    R,
    S,
    M,
}

impl SnpLetter {
    pub const ALL: [SnpLetter; 11] = [
        SnpLetter::A,
        SnpLetter::T,
        SnpLetter::C,
        SnpLetter::G,
        SnpLetter::N,
        SnpLetter::Y,
        SnpLetter::K,
        SnpLetter::W,
        SnpLetter::R,
        SnpLetter::S,
        SnpLetter::M,
    ];

    /// Letter for an unordered pair of allele calls.
    pub fn from_bases(a: Base, b: Base) -> SnpLetter {
        use Base as B;
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        match (lo, hi) {
            (_, B::N) => SnpLetter::N,
            (B::A, B::A) => SnpLetter::A,
            (B::T, B::T) => SnpLetter::T,
            (B::C, B::C) => SnpLetter::C,
            (B::G, B::G) => SnpLetter::G,
            (B::T, B::C) => SnpLetter::Y,
            (B::T, B::G) => SnpLetter::K,
            (B::A, B::T) => SnpLetter::W,
            (B::A, B::G) => SnpLetter::R,
            (B::C, B::G) => SnpLetter::S,
            (B::A, B::C) => SnpLetter::M,
            // `lo <= hi` under the A < T < C < G < N ordering covers every case above.
            _ => unreachable!("unordered pair {lo:?}/{hi:?}"),
        }
    }

    /// The two allele calls a letter stands for, or `None` for `N`.
    pub fn bases(self) -> Option<(Base, Base)> {
        use Base as B;
        Some(match self {
            SnpLetter::A => (B::A, B::A),
            SnpLetter::T => (B::T, B::T),
            SnpLetter::C => (B::C, B::C),
            SnpLetter::G => (B::G, B::G),
            SnpLetter::Y => (B::T, B::C),
            SnpLetter::K => (B::T, B::G),
            SnpLetter::W => (B::A, B::T),
            SnpLetter::R => (B::A, B::G),
            SnpLetter::S => (B::C, B::G),
            SnpLetter::M => (B::A, B::C),
            SnpLetter::N => return None,
        })
    }

    pub fn is_heterozygous(self) -> bool {
        matches!(
            self,
            SnpLetter::Y | SnpLetter::K | SnpLetter::W | SnpLetter::R | SnpLetter::S | SnpLetter::M
        )
    }

    pub fn as_char(self) -> char {
        match self {
            SnpLetter::A => 'A',
            SnpLetter::T => 'T',
            SnpLetter::C => 'C',
            SnpLetter::G => 'G',
            SnpLetter::N => 'N',
            SnpLetter::Y => 'Y',
            SnpLetter::K => 'K',
            SnpLetter::W => 'W',
            SnpLetter::R => 'R',
            SnpLetter::S => 'S',
            SnpLetter::M => 'M',
        }
    }

    pub fn from_char(c: char) -> Option<SnpLetter> {
        Some(match c.to_ascii_uppercase() {
            'A' => SnpLetter::A,
            'T' => SnpLetter::T,
            'C' => SnpLetter::C,
            'G' => SnpLetter::G,
            'N' => SnpLetter::N,
            'Y' => SnpLetter::Y,
            'K' => SnpLetter::K,
            'W' => SnpLetter::W,
            'R' => SnpLetter::R,
            'S' => SnpLetter::S,
            'M' => SnpLetter::M,
            _ => return None,
        })
    }

    /// Collapse to the five-symbol preprocessed alphabet.
    pub fn preprocess(self) -> Symbol {
        match self {
            SnpLetter::A => Symbol::A,
            SnpLetter::T => Symbol::T,
            SnpLetter::C => Symbol::C,
            SnpLetter::G => Symbol::G,
            _ => Symbol::X,
        }
    }
}

impl fmt::Display for SnpLetter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_char())
    }
}

/// Letter of a preprocessed sequence. The discriminant is the base-5 digit
/// used by the k-mer tokenizer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum Symbol {
    A = 0,
    T = 1,
    C = 2,
    G = 3,
    X = 4,
}

impl Symbol {
    pub const ALL: [Symbol; 5] = [Symbol::A, Symbol::T, Symbol::C, Symbol::G, Symbol::X];

    pub fn digit(self) -> u32 {
        self as u32
    }

    pub fn from_digit(d: u32) -> Option<Symbol> {
        Symbol::ALL.get(d as usize).copied()
    }

    pub fn as_char(self) -> char {
        match self {
            Symbol::A => 'A',
            Symbol::T => 'T',
            Symbol::C => 'C',
            Symbol::G => 'G',
            Symbol::X => 'X',
        }
    }

    pub fn from_char(c: char) -> Option<Symbol> {
        Some(match c.to_ascii_uppercase() {
            'A' => Symbol::A,
            'T' => Symbol::T,
            'C' => Symbol::C,
            'G' => Symbol::G,
            'X' => Symbol::X,
            _ => return None,
        })
    }
}

/// A validated raw SNP sequence for one sample.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SnpSequence {
    id: String,
    letters: Vec<SnpLetter>,
}

impl SnpSequence {
    pub fn new(id: impl Into<String>, letters: Vec<SnpLetter>) -> Result<Self> {
        if letters.is_empty() {
            return Err(Error::EmptySequence);
        }
        Ok(SnpSequence {
            id: id.into(),
            letters,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn letters(&self) -> &[SnpLetter] {
        &self.letters
    }

    pub fn len(&self) -> usize {
        self.letters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.letters.is_empty()
    }

    pub fn to_text(&self) -> String {
        self.letters.iter().map(|l| l.as_char()).collect()
    }
}

/// A sequence over `{A, T, C, G, X}` with the same length as its source.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PreprocessedSequence {
    id: String,
    letters: Vec<Symbol>,
}

impl PreprocessedSequence {
    pub fn new(id: impl Into<String>, letters: Vec<Symbol>) -> Self {
        PreprocessedSequence {
            id: id.into(),
            letters,
        }
    }

    /// Parse text that is already in the preprocessed alphabet.
    pub fn parse(id: impl Into<String>, text: &str) -> Result<Self> {
        if text.is_empty() {
            return Err(Error::EmptySequence);
        }
        let letters = text
            .chars()
            .enumerate()
            .map(|(offset, c)| Symbol::from_char(c).ok_or(Error::Parse { offset, symbol: c }))
            .collect::<Result<Vec<_>>>()?;
        Ok(PreprocessedSequence::new(id, letters))
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn letters(&self) -> &[Symbol] {
        &self.letters
    }

    pub fn len(&self) -> usize {
        self.letters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.letters.is_empty()
    }

    pub fn to_text(&self) -> String {
        self.letters.iter().map(|s| s.as_char()).collect()
    }

    /// Map back into the raw alphabet, `X` becoming `N`.
    pub fn lift(&self) -> SnpSequence {
        let letters = self
            .letters
            .iter()
            .map(|s| match s {
                Symbol::A => SnpLetter::A,
                Symbol::T => SnpLetter::T,
                Symbol::C => SnpLetter::C,
                Symbol::G => SnpLetter::G,
                Symbol::X => SnpLetter::N,
            })
            .collect();
        SnpSequence {
            id: self.id.clone(),
            letters,
        }
    }
}

/// Code a (reference, sample) base pair as a single SNP letter.
pub fn encode_genotype_pair(ref_base: char, sample_base: char) -> Result<SnpLetter> {
    let a = Base::try_from(ref_base)?;
    let b = Base::try_from(sample_base)?;
    Ok(SnpLetter::from_bases(a, b))
}

/// Parse a letter string, case-insensitively. Whitespace is an error.
pub fn parse_sequence(id: &str, text: &str) -> Result<SnpSequence> {
    if text.is_empty() {
        return Err(Error::EmptySequence);
    }
    let letters = text
        .chars()
        .enumerate()
        .map(|(offset, c)| SnpLetter::from_char(c).ok_or(Error::Parse { offset, symbol: c }))
        .collect::<Result<Vec<_>>>()?;
    SnpSequence::new(id, letters)
}

pub fn preprocess(seq: &SnpSequence) -> PreprocessedSequence {
    PreprocessedSequence {
        id: seq.id.clone(),
        letters: seq.letters.iter().map(|l| l.preprocess()).collect(),
    }
}

/// Split one `sample_id<TAB>sequence` record.
fn split_record(line: &str) -> Result<(&str, &str)> {
    let (id, seq) = line
        .split_once('\t')
        .ok_or_else(|| Error::Config("expected `sample_id<TAB>sequence`".into()))?;
    if id.is_empty() {
        return Err(Error::Config("empty sample id".into()));
    }
    Ok((id, seq))
}

/// Parse a sequence file from memory. `origin` is only used in error messages.
pub fn parse_sequence_file(origin: &Path, contents: &str) -> Result<Vec<SnpSequence>> {
    let mut out: Vec<SnpSequence> = Vec::new();
    for (idx, line) in contents.lines().enumerate() {
        let line_no = idx + 1;
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let seq = split_record(line)
            .and_then(|(id, text)| parse_sequence(id, text))
            .map_err(|e| Error::in_file(origin, line_no, e))?;
        if let Some(first) = out.first() {
            if first.len() != seq.len() {
                let err = Error::Length {
                    id: seq.id.clone(),
                    expected: first.len(),
                    actual: seq.len(),
                };
                return Err(Error::in_file(origin, line_no, err));
            }
        }
        if out.iter().any(|s| s.id == seq.id) {
            let err = Error::Config(format!("duplicate sample id {:?}", seq.id));
            return Err(Error::in_file(origin, line_no, err));
        }
        out.push(seq);
    }
    if out.is_empty() {
        return Err(Error::in_file(origin, 0, Error::EmptySequence));
    }
    Ok(out)
}

pub fn read_sequence_file(path: impl AsRef<Path>) -> Result<Vec<SnpSequence>> {
    let path = path.as_ref();
    let contents = fs::read_to_string(path)?;
    parse_sequence_file(path, &contents)
}

pub fn write_sequence_file<'a>(
    path: impl AsRef<Path>,
    sequences: impl IntoIterator<Item = &'a SnpSequence>,
) -> Result<()> {
    let mut out = std::io::BufWriter::new(fs::File::create(path)?);
    for seq in sequences {
        writeln!(out, "{}\t{}", seq.id, seq.to_text())?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    use proptest::prelude::*;

    #[test]
    fn pair_examples() {
        assert_eq!(encode_genotype_pair('A', 'A').unwrap(), SnpLetter::A);
        assert_eq!(encode_genotype_pair('A', 'T').unwrap(), SnpLetter::W);
        assert_eq!(encode_genotype_pair('T', 'A').unwrap(), SnpLetter::W);
        assert_eq!(encode_genotype_pair('C', 'N').unwrap(), SnpLetter::N);
        assert_eq!(encode_genotype_pair('g', 'c').unwrap(), SnpLetter::S);
    }

    #[test]
    fn pair_rejects_invalid_base() {
        match encode_genotype_pair('A', 'Z') {
            Err(Error::InvalidBase('Z')) => {}
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(encode_genotype_pair('Y', 'A'), Err(Error::InvalidBase('Y'))));
    }

    #[test]
    fn bases_inverts_from_bases() {
        for letter in SnpLetter::ALL {
            if let Some((a, b)) = letter.bases() {
                assert_eq!(SnpLetter::from_bases(a, b), letter);
                assert_eq!(SnpLetter::from_bases(b, a), letter);
            }
        }
    }

    #[test]
    fn parse_examples() {
        let s = parse_sequence("s1", "ATCG").unwrap();
        assert_eq!(s.letters(), &[SnpLetter::A, SnpLetter::T, SnpLetter::C, SnpLetter::G]);
        assert_eq!(s.len(), 4);

        let s = parse_sequence("s2", "atYk").unwrap();
        assert_eq!(s.letters(), &[SnpLetter::A, SnpLetter::T, SnpLetter::Y, SnpLetter::K]);

        match parse_sequence("s3", "AB") {
            Err(Error::Parse { offset: 1, symbol: 'B' }) => {}
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(parse_sequence("s4", ""), Err(Error::EmptySequence)));
    }

    #[test]
    fn whitespace_is_rejected() {
        assert!(matches!(parse_sequence("s", "AT CG"), Err(Error::Parse { offset: 2, .. })));
        assert!(matches!(parse_sequence("s", "ATCG\n"), Err(Error::Parse { offset: 4, .. })));
    }

    #[test]
    fn preprocess_examples() {
        let text = |s: &str| preprocess(&parse_sequence("x", s).unwrap()).to_text();
        assert_eq!(text("ATCG"), "ATCG");
        assert_eq!(text("NYKWRSM"), "XXXXXXX");
        assert_eq!(text("ANTY"), "AXTX");
    }

    #[test]
    fn file_parsing() {
        let origin = Path::new("mem.tsv");
        let seqs = parse_sequence_file(origin, "# header\ns1\tATCG\r\ns2\tNNYK\n").unwrap();
        assert_eq!(seqs.len(), 2);
        assert_eq!(seqs[1].id(), "s2");

        let err = parse_sequence_file(origin, "s1\tATCG\ns2\tATC\n").unwrap_err();
        match err {
            Error::InFile { line: 2, source, .. } => {
                assert!(matches!(*source, Error::Length { expected: 4, actual: 3, .. }))
            }
            other => panic!("unexpected {other:?}"),
        }

        let err = parse_sequence_file(origin, "s1\tATCG\ns2\tATQG\n").unwrap_err();
        match err {
            Error::InFile { line: 2, source, .. } => {
                assert!(matches!(*source, Error::Parse { offset: 2, symbol: 'Q' }))
            }
            other => panic!("unexpected {other:?}"),
        }

        assert!(parse_sequence_file(origin, "s1 ATCG\n").is_err());
        assert!(parse_sequence_file(origin, "s1\tAT\ns1\tCG\n").is_err());
    }

    fn letter() -> impl Strategy<Value = SnpLetter> {
        prop::sample::select(SnpLetter::ALL.to_vec())
    }

    proptest! {
        #[test]
        fn preprocess_is_idempotent(letters in prop::collection::vec(letter(), 1..200)) {
            let seq = SnpSequence::new("p", letters).unwrap();
            let once = preprocess(&seq);
            let twice = preprocess(&once.lift());
            prop_assert_eq!(&once, &twice);
            prop_assert_eq!(once.len(), seq.len());
        }

        #[test]
        fn rendered_text_round_trips(letters in prop::collection::vec(letter(), 1..200)) {
            let seq = SnpSequence::new("p", letters).unwrap();
            let again = parse_sequence("p", &seq.to_text()).unwrap();
            prop_assert_eq!(&again, &seq);

            let pre = preprocess(&seq);
            let parsed = PreprocessedSequence::parse("p", &pre.to_text()).unwrap();
            prop_assert_eq!(parsed, pre);
        }
    }
}
