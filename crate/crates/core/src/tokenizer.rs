//! Non-overlapping k-mer tokenization and random token masking.
//!
//! A k-mer over `{A, T, C, G, X}` is read as a big-endian base-5 number with
//! digits `A=0, T=1, C=2, G=3, X=4`, so ids cover `0..5^k` without a stored
//! vocabulary. The id `5^k` is reserved for masked (and unknown) tokens.

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::codec::{PreprocessedSequence, Symbol};
use crate::error::{Error, Result};

pub const MAX_K: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TokenizerConfig {
    pub k: usize,
    pub mask_prob: f64,
    pub seed: u64,
}

impl Default for TokenizerConfig {
    fn default() -> Self {
        TokenizerConfig {
            k: 6,
            mask_prob: 0.15,
            seed: 0,
        }
    }
}

impl TokenizerConfig {
    pub fn new(k: usize, mask_prob: f64, seed: u64) -> Result<Self> {
        let cfg = TokenizerConfig { k, mask_prob, seed };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        check_k(self.k)?;
        if !(0.0..=1.0).contains(&self.mask_prob) {
            return Err(Error::Config(format!(
                "masking probability {} outside [0, 1]",
                self.mask_prob
            )));
        }
        Ok(())
    }

    pub fn mask_id(&self) -> u32 {
        mask_id(self.k)
    }
}

fn check_k(k: usize) -> Result<()> {
    if (1..=MAX_K).contains(&k) {
        Ok(())
    } else {
        Err(Error::Config(format!("k = {k} outside 1..={MAX_K}")))
    }
}

/// Number of embedding rows needed for width `k`: every k-mer plus the mask id.
pub fn vocab_size(k: usize) -> Result<usize> {
    check_k(k)?;
    Ok(5usize.pow(k as u32) + 1)
}

/// The reserved id `5^k`. Caller guarantees `k` is in range.
pub fn mask_id(k: usize) -> u32 {
    5u32.pow(k as u32)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenIds {
    ids: Vec<u32>,
    k: usize,
}

impl TokenIds {
    pub fn new(ids: Vec<u32>, k: usize) -> Result<Self> {
        check_k(k)?;
        let limit = mask_id(k);
        if let Some(&bad) = ids.iter().find(|&&id| id > limit) {
            return Err(Error::Vocab {
                id: bad,
                vocab: limit as usize + 1,
            });
        }
        Ok(TokenIds { ids, k })
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskedTokenIds {
    pub ids: Vec<u32>,
    pub mask_id: u32,
    /// Ascending indices replaced by `mask_id`.
    pub mask_positions: Vec<usize>,
}

impl MaskedTokenIds {
    /// Unmasked view of a token sequence.
    pub fn unmasked(tokens: &TokenIds) -> Self {
        MaskedTokenIds {
            ids: tokens.ids.clone(),
            mask_id: mask_id(tokens.k),
            mask_positions: Vec::new(),
        }
    }
}

pub fn token_id(kmer: &[Symbol], k: usize) -> Result<u32> {
    check_k(k)?;
    if kmer.len() != k {
        return Err(Error::Tokenize(format!(
            "k-mer has {} letters, expected {k}",
            kmer.len()
        )));
    }
    Ok(kmer.iter().fold(0u32, |acc, s| acc * 5 + s.digit()))
}

/// Token id of a k-mer written as text, e.g. `"ACGT"`.
pub fn token_id_str(kmer: &str, k: usize) -> Result<u32> {
    let symbols = kmer
        .chars()
        .map(|c| Symbol::from_char(c).ok_or_else(|| Error::Tokenize(format!("invalid letter {c:?}"))))
        .collect::<Result<Vec<_>>>()?;
    token_id(&symbols, k)
}

/// Base-5 digit expansion of an id, most significant first.
pub fn kmer_of(id: u32, k: usize) -> Result<Vec<Symbol>> {
    check_k(k)?;
    let limit = mask_id(k);
    if id == limit {
        return Err(Error::NotInvertible { id });
    }
    if id > limit {
        return Err(Error::Vocab {
            id,
            vocab: limit as usize + 1,
        });
    }
    let mut out = vec![Symbol::A; k];
    let mut rest = id;
    for slot in out.iter_mut().rev() {
        *slot = Symbol::from_digit(rest % 5).expect("digit < 5");
        rest /= 5;
    }
    Ok(out)
}

/// Split into `floor(len / k)` consecutive windows; a short tail is dropped.
pub fn kmer_tokenize(seq: &PreprocessedSequence, k: usize) -> Result<TokenIds> {
    check_k(k)?;
    if seq.len() < k {
        return Err(Error::SequenceTooShort { len: seq.len(), k });
    }
    let ids = seq
        .letters()
        .chunks_exact(k)
        .map(|w| w.iter().fold(0u32, |acc, s| acc * 5 + s.digit()))
        .collect();
    Ok(TokenIds { ids, k })
}

pub fn detokenize(tokens: &TokenIds) -> Result<PreprocessedSequence> {
    let mut letters = Vec::with_capacity(tokens.len() * tokens.k);
    for &id in &tokens.ids {
        letters.extend(kmer_of(id, tokens.k)?);
    }
    Ok(PreprocessedSequence::new("", letters))
}

/// Deterministic masking stream for one sample in one epoch.
pub fn mask_rng(seed: u64, sample: u64, epoch: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Distinct (sample, epoch) pairs get disjoint ChaCha streams.
    rng.set_stream(sample.wrapping_mul(1 << 20).wrapping_add(epoch));
    rng
}

/// Replace each position by the mask id with probability `p`.
pub fn random_mask<R: Rng + ?Sized>(tokens: &TokenIds, p: f64, rng: &mut R) -> MaskedTokenIds {
    let mask = mask_id(tokens.k);
    let mut ids = tokens.ids.clone();
    let mut mask_positions = Vec::new();
    for (i, id) in ids.iter_mut().enumerate() {
        // random::<f64>() is in [0, 1): p = 0 never masks, p = 1 always does.
        if rng.random::<f64>() < p {
            *id = mask;
            mask_positions.push(i);
        }
    }
    MaskedTokenIds {
        ids,
        mask_id: mask,
        mask_positions,
    }
}

/// Mask one sample for one epoch using the configured probability and seed.
pub fn mask_sample(tokens: &TokenIds, cfg: &TokenizerConfig, sample: u64, epoch: u64) -> MaskedTokenIds {
    if cfg.mask_prob <= 0.0 {
        return MaskedTokenIds::unmasked(tokens);
    }
    let mut rng = mask_rng(cfg.seed, sample, epoch);
    random_mask(tokens, cfg.mask_prob, &mut rng)
}

/// Write the token dump: `sample_id<TAB>space-separated ids` per line.
pub fn write_token_dump<'a>(
    path: impl AsRef<Path>,
    rows: impl IntoIterator<Item = (&'a str, &'a TokenIds)>,
) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for (id, tokens) in rows {
        write!(out, "{id}\t")?;
        for (i, t) in tokens.ids.iter().enumerate() {
            if i > 0 {
                write!(out, " ")?;
            }
            write!(out, "{t}")?;
        }
        writeln!(out)?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    use proptest::prelude::*;

    fn pre(text: &str) -> PreprocessedSequence {
        PreprocessedSequence::parse("t", text).unwrap()
    }

    /// Independent base-5 evaluation: sum of digit * 5^(k-1-i).
    fn oracle_id(text: &str) -> u32 {
        let digits: Vec<u32> = text
            .chars()
            .map(|c| "ATCGX".find(c).unwrap() as u32)
            .collect();
        let k = digits.len() as u32;
        digits
            .iter()
            .enumerate()
            .map(|(i, d)| d * 5u32.pow(k - 1 - i as u32))
            .sum()
    }

    #[test]
    fn oracle_values() {
        assert_eq!(oracle_id("AAAA"), 0);
        assert_eq!(oracle_id("XXXX"), 624);
        assert_eq!(oracle_id("ACGT"), 66);
        assert_eq!(oracle_id("XAAC"), 502);
    }

    #[test]
    fn token_id_examples() {
        assert_eq!(token_id_str("AAAA", 4).unwrap(), 0);
        assert_eq!(token_id_str("XXXX", 4).unwrap(), 624);
        assert_eq!(token_id_str("ACGT", 4).unwrap(), 66);
        assert!(matches!(token_id_str("ACG", 4), Err(Error::Tokenize(_))));
        assert!(matches!(token_id_str("ACGN", 4), Err(Error::Tokenize(_))));
    }

    #[test]
    fn tokenize_examples() {
        let t = kmer_tokenize(&pre("ACGTXAACGT"), 4).unwrap();
        assert_eq!(t.len(), 2);
        let t = kmer_tokenize(&pre("ACGTXAAC"), 4).unwrap();
        assert_eq!(t.ids(), &[oracle_id("ACGT"), oracle_id("XAAC")]);
        assert_eq!(t.ids(), &[66, 502]);

        let t = kmer_tokenize(&pre("ATCGX"), 1).unwrap();
        assert_eq!(t.ids(), &[0, 1, 2, 3, 4]);

        assert!(matches!(
            kmer_tokenize(&pre("ACG"), 4),
            Err(Error::SequenceTooShort { len: 3, k: 4 })
        ));
        assert!(matches!(kmer_tokenize(&pre("ACG"), 0), Err(Error::Config(_))));
    }

    #[test]
    fn vocab_examples() {
        assert_eq!(vocab_size(6).unwrap(), 15626);
        assert_eq!(vocab_size(1).unwrap(), 6);
        assert_eq!(vocab_size(4).unwrap(), 626);
        assert!(vocab_size(0).is_err());
        assert!(vocab_size(13).is_err());
        assert!(vocab_size(12).is_ok());
    }

    #[test]
    fn detokenize_examples() {
        let t = TokenIds::new(vec![0], 4).unwrap();
        assert_eq!(detokenize(&t).unwrap().to_text(), "AAAA");
        let t = TokenIds::new(vec![66], 4).unwrap();
        assert_eq!(detokenize(&t).unwrap().to_text(), "ACGT");
        let t = TokenIds::new(vec![1, 625], 4).unwrap();
        assert!(matches!(detokenize(&t), Err(Error::NotInvertible { id: 625 })));
        assert!(TokenIds::new(vec![626], 4).is_err());
    }

    #[test]
    fn exhaustive_bijection_small_k() {
        for k in 1..=4 {
            for id in 0..mask_id(k) {
                let kmer = kmer_of(id, k).unwrap();
                assert_eq!(token_id(&kmer, k).unwrap(), id);
            }
        }
    }

    #[test]
    fn masking_extremes() {
        let tokens = TokenIds::new((0..100).collect(), 4).unwrap();
        let mut rng = mask_rng(1, 0, 0);
        let m = random_mask(&tokens, 0.0, &mut rng);
        assert_eq!(m.ids, tokens.ids());
        assert!(m.mask_positions.is_empty());
        let m = random_mask(&tokens, 1.0, &mut rng);
        assert!(m.ids.iter().all(|&id| id == 625));
        assert_eq!(m.mask_positions.len(), 100);
    }

    #[test]
    fn masking_rate_within_envelope() {
        let n = 10_000usize;
        let tokens = TokenIds::new(vec![7; n], 6).unwrap();
        let m = random_mask(&tokens, 0.15, &mut mask_rng(42, 3, 1));
        let frac = m.mask_positions.len() as f64 / n as f64;
        let bound = 4.0 * (0.15f64 * 0.85 / n as f64).sqrt();
        assert!((frac - 0.15).abs() <= bound, "fraction {frac}");
    }

    #[test]
    fn mask_streams_differ_by_sample_and_epoch() {
        let tokens = TokenIds::new(vec![3; 400], 6).unwrap();
        let cfg = TokenizerConfig::new(6, 0.3, 9).unwrap();
        let a = mask_sample(&tokens, &cfg, 0, 0);
        assert_eq!(a, mask_sample(&tokens, &cfg, 0, 0));
        assert_ne!(a.mask_positions, mask_sample(&tokens, &cfg, 1, 0).mask_positions);
        assert_ne!(a.mask_positions, mask_sample(&tokens, &cfg, 0, 1).mask_positions);
    }

    fn symbol() -> impl Strategy<Value = Symbol> {
        prop::sample::select(Symbol::ALL.to_vec())
    }

    proptest! {
        #[test]
        fn length_law(letters in prop::collection::vec(symbol(), 1..300), k in 1usize..=8) {
            let seq = PreprocessedSequence::new("p", letters);
            match kmer_tokenize(&seq, k) {
                Ok(t) => prop_assert_eq!(t.len(), seq.len() / k),
                Err(Error::SequenceTooShort { .. }) => prop_assert!(seq.len() < k),
                Err(e) => return Err(TestCaseError::fail(e.to_string())),
            }
        }

        #[test]
        fn detokenize_round_trip(ids in prop::collection::vec(0u32..15625, 1..50)) {
            let tokens = TokenIds::new(ids, 6).unwrap();
            let seq = detokenize(&tokens).unwrap();
            prop_assert_eq!(kmer_tokenize(&seq, 6).unwrap(), tokens);
        }

        #[test]
        fn masked_ids_match_positions(ids in prop::collection::vec(0u32..625, 1..200), p in 0.0f64..=1.0, seed: u64) {
            let tokens = TokenIds::new(ids, 4).unwrap();
            let m = random_mask(&tokens, p, &mut mask_rng(seed, 0, 0));
            for (i, (&orig, &got)) in tokens.ids().iter().zip(&m.ids).enumerate() {
                if m.mask_positions.binary_search(&i).is_ok() {
                    prop_assert_eq!(got, 625);
                } else {
                    prop_assert_eq!(got, orig);
                }
            }
        }
    }
}
