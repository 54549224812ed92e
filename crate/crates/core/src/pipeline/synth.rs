//! Synthetic genotype/phenotype sets with planted causal k-mers.
//!
//! Founder haplotypes are drawn letter-wise over A, T, C, G. Each sample
//! copies one founder per block of `block_tokens` tokens, then a fraction
//! `het_rate` of its letters become heterozygous codes; causal letters stay
//! homozygous. With `founders == 0` every sample is drawn letter-wise on its
//! own.

use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use super::dataset::{Dataset, Targets};
use super::metrics::pcc;
use crate::codec::{preprocess, write_sequence_file, Base, SnpLetter, SnpSequence, Symbol};
use crate::error::{Error, Result};

pub const TRAIT_NAME: &str = "synthetic";

const BASES: [Base; 4] = [Base::A, Base::T, Base::C, Base::G];

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SynthTask {
    Regression,
    Classification { classes: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Noise {
    /// Gaussian noise with this standard deviation.
    Sd(f64),
    /// Noise scaled so the latent/target correlation is about `r`.
    LatentPcc(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Signal {
    pub n_causal: usize,
    /// One effect per additive locus, or per pair in epistatic mode.
    /// Empty draws them from N(0, 1).
    pub effect_sizes: Vec<f64>,
    pub noise: Noise,
    /// Latent = sum of effects times products of indicator pairs
    /// (loci 0 and 1, 2 and 3, ...).
    pub epistatic: bool,
}

impl Signal {
    pub fn additive(n_causal: usize, noise: Noise) -> Self {
        Signal {
            n_causal,
            effect_sizes: Vec::new(),
            noise,
            epistatic: false,
        }
    }

    pub fn epistatic(n_causal: usize, noise: Noise) -> Self {
        Signal {
            epistatic: true,
            ..Signal::additive(n_causal, noise)
        }
    }

    fn terms(&self) -> usize {
        if self.epistatic {
            self.n_causal / 2
        } else {
            self.n_causal
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_samples: usize,
    pub seq_len: usize,
    pub task: SynthTask,
    pub signal: Signal,
    /// Width of the causal patterns; loci start on multiples of `k`.
    pub k: usize,
    pub founders: usize,
    pub block_tokens: usize,
    pub het_rate: f64,
    /// Chance that a founder (or a sample, without founders) carries a
    /// given causal pattern.
    pub carrier_freq: f64,
    pub seed: u64,
}

impl SynthConfig {
    pub fn new(n_samples: usize, seq_len: usize, task: SynthTask, signal: Signal, seed: u64) -> Self {
        SynthConfig {
            n_samples,
            seq_len,
            task,
            signal,
            k: 6,
            founders: 8,
            block_tokens: 16,
            het_rate: 0.05,
            carrier_freq: 0.5,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        let s = &self.signal;
        if self.n_samples == 0 {
            return fail("synthetic set needs at least one sample".into());
        }
        if self.k == 0 || self.block_tokens == 0 {
            return fail("k and block_tokens must be positive".into());
        }
        if self.seq_len < self.k.max(self.k * s.n_causal) {
            return fail(format!(
                "seq_len {} cannot hold {} causal {}-mers",
                self.seq_len, s.n_causal, self.k
            ));
        }
        if s.epistatic && s.n_causal % 2 == 1 {
            return fail(format!("epistatic mode pairs loci; n_causal {} is odd", s.n_causal));
        }
        if !s.effect_sizes.is_empty() && s.effect_sizes.len() != s.terms() {
            return fail(format!("expected {} effect sizes, got {}", s.terms(), s.effect_sizes.len()));
        }
        if s.effect_sizes.iter().any(|e| !e.is_finite()) {
            return fail("effect sizes must be finite".into());
        }
        match s.noise {
            Noise::Sd(sd) if !(sd >= 0.0 && sd.is_finite()) => return fail(format!("noise sd {sd} is invalid")),
            Noise::LatentPcc(r) if !(r > 0.0 && r <= 1.0) => {
                return fail(format!("latent correlation {r} must lie in (0, 1]"))
            }
            _ => {}
        }
        if !(0.0..1.0).contains(&self.het_rate) {
            return fail(format!("het_rate {} must lie in [0, 1)", self.het_rate));
        }
        if !(self.carrier_freq > 0.0 && self.carrier_freq < 1.0) {
            return fail(format!("carrier_freq {} must lie in (0, 1)", self.carrier_freq));
        }
        if self.founders == 1 {
            return fail("one founder leaves nothing to segregate; use 0 or at least 2".into());
        }
        if let SynthTask::Classification { classes } = self.task {
            if classes < 2 || classes > self.n_samples {
                return fail(format!("{classes} classes for {} samples", self.n_samples));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CausalLocus {
    /// Letter offset, a multiple of `k`.
    pub start: usize,
    pub pattern: Vec<Symbol>,
}

/// Generated samples together with the generating truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Synthetic {
    pub raw: Vec<SnpSequence>,
    pub dataset: Dataset,
    pub loci: Vec<CausalLocus>,
    pub effects: Vec<f64>,
    /// Noise-free genetic score per sample.
    pub latent: Vec<f64>,
    /// Latent plus noise; regression targets, or the score ranked into classes.
    pub score: Vec<f64>,
}

fn draw_kmer(rng: &mut ChaCha8Rng, k: usize) -> Vec<usize> {
    (0..k).map(|_| rng.random_range(0..4)).collect()
}

/// Overwrite `k` letters at `start`, either with the pattern or with a
/// random k-mer that differs from it.
fn plant(hap: &mut [usize], start: usize, pattern: &[usize], carrier: bool, rng: &mut ChaCha8Rng) {
    let slot = &mut hap[start..start + pattern.len()];
    if carrier {
        slot.copy_from_slice(pattern);
    } else {
        let other = draw_kmer(rng, pattern.len());
        slot.copy_from_slice(&other);
        if slot == pattern {
            slot[0] = (slot[0] + 1) % 4;
        }
    }
}

/// Carrier flags with at least one carrier and one non-carrier.
fn carriers(n: usize, freq: f64, rng: &mut ChaCha8Rng) -> Vec<bool> {
    let mut flags: Vec<bool> = (0..n).map(|_| rng.random_bool(freq)).collect();
    if n >= 2 {
        let all = flags[0];
        if flags.iter().all(|&f| f == all) {
            let j = rng.random_range(0..n);
            flags[j] = !all;
        }
    }
    flags
}

pub fn synth_generate(cfg: &SynthConfig) -> Result<Synthetic> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (n, len, k) = (cfg.n_samples, cfg.seq_len, cfg.k);
    let sig = &cfg.signal;

    let mut starts: Vec<usize> = sample(&mut rng, len / k, sig.n_causal)
        .into_iter()
        .map(|t| t * k)
        .collect();
    starts.sort_unstable();
    let patterns: Vec<Vec<usize>> = starts.iter().map(|_| draw_kmer(&mut rng, k)).collect();
    let effects: Vec<f64> = if sig.effect_sizes.is_empty() {
        (0..sig.terms()).map(|_| StandardNormal.sample(&mut rng)).collect()
    } else {
        sig.effect_sizes.clone()
    };

    let mut haps: Vec<Vec<usize>> = if cfg.founders == 0 {
        (0..n).map(|_| draw_kmer(&mut rng, len)).collect()
    } else {
        let mut founders: Vec<Vec<usize>> = (0..cfg.founders).map(|_| draw_kmer(&mut rng, len)).collect();
        for (start, pattern) in starts.iter().zip(&patterns) {
            for (hap, carrier) in founders.iter_mut().zip(carriers(cfg.founders, cfg.carrier_freq, &mut rng)) {
                plant(hap, *start, pattern, carrier, &mut rng);
            }
        }
        let block = cfg.block_tokens * k;
        (0..n)
            .map(|_| {
                let mut hap = Vec::with_capacity(len);
                while hap.len() < len {
                    let f = &founders[rng.random_range(0..cfg.founders)];
                    let end = (hap.len() + block).min(len);
                    hap.extend_from_slice(&f[hap.len()..end]);
                }
                hap
            })
            .collect()
    };
    if cfg.founders == 0 {
        for (start, pattern) in starts.iter().zip(&patterns) {
            for (hap, carrier) in haps.iter_mut().zip(carriers(n, cfg.carrier_freq, &mut rng)) {
                plant(hap, *start, pattern, carrier, &mut rng);
            }
        }
    }

    let mut causal = vec![false; len];
    for &s in &starts {
        causal[s..s + k].fill(true);
    }
    let mut raw = Vec::with_capacity(n);
    for (i, hap) in haps.iter_mut().enumerate() {
        let letters = hap
            .iter()
            .zip(&causal)
            .map(|(&b, &locked)| {
                if !locked && rng.random_bool(cfg.het_rate) {
                    let other = (b + rng.random_range(1..4)) % 4;
                    SnpLetter::from_bases(BASES[b], BASES[other])
                } else {
                    SnpLetter::from_bases(BASES[b], BASES[b])
                }
            })
            .collect();
        raw.push(SnpSequence::new(format!("s{i:05}"), letters)?);
    }
    let sequences: Vec<_> = raw.iter().map(preprocess).collect();

    let loci: Vec<CausalLocus> = starts
        .iter()
        .zip(&patterns)
        .map(|(&start, p)| CausalLocus {
            start,
            pattern: p.iter().map(|&d| Symbol::from_digit(d as u32).expect("base digit")).collect(),
        })
        .collect();
    let latent: Vec<f64> = sequences
        .iter()
        .map(|s| {
            let hit: Vec<f64> = loci
                .iter()
                .map(|l| f64::from(u8::from(s.letters()[l.start..l.start + k] == l.pattern[..])))
                .collect();
            if sig.epistatic {
                effects.iter().zip(hit.chunks(2)).map(|(e, h)| e * h[0] * h[1]).sum()
            } else {
                effects.iter().zip(&hit).map(|(e, h)| e * h).sum()
            }
        })
        .collect();

    let sd = match sig.noise {
        Noise::Sd(sd) => sd,
        Noise::LatentPcc(r) => {
            let m = latent.iter().sum::<f64>() / n as f64;
            let spread = (latent.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n as f64).sqrt();
            if spread == 0.0 && r < 1.0 {
                return Err(Error::Config(
                    "latent score is constant; give the noise as an absolute sd".into(),
                ));
            }
            spread * (1.0 / (r * r) - 1.0).sqrt()
        }
    };
    let score: Vec<f64> = if sd == 0.0 {
        latent.clone()
    } else {
        let normal = Normal::new(0.0, sd).map_err(|e| Error::Config(e.to_string()))?;
        latent.iter().map(|x| x + normal.sample(&mut rng)).collect()
    };

    let targets = match cfg.task {
        SynthTask::Regression => Targets::Values(score.clone()),
        SynthTask::Classification { classes } => Targets::Classes {
            labels: rank_classes(&score, classes),
            names: (0..classes).map(|c| c.to_string()).collect(),
        },
    };
    Ok(Synthetic {
        dataset: Dataset::new(sequences, targets)?,
        raw,
        loci,
        effects,
        latent,
        score,
    })
}

/// Splits samples into `classes` groups of near-equal size by score rank.
fn rank_classes(score: &[f64], classes: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..score.len()).collect();
    order.sort_by(|&a, &b| score[a].total_cmp(&score[b]).then(a.cmp(&b)));
    let mut labels = vec![0; score.len()];
    for (rank, &i) in order.iter().enumerate() {
        labels[i] = rank * classes / score.len();
    }
    labels
}

/// Paths written by [`Synthetic::write_files`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynthPaths {
    pub sequences: PathBuf,
    pub phenotypes: PathBuf,
    pub oracle: PathBuf,
}

impl SynthPaths {
    pub fn for_prefix(prefix: impl AsRef<Path>) -> Self {
        let p = prefix.as_ref().as_os_str().to_owned();
        let with = |ext: &str| {
            let mut s = p.clone();
            s.push(ext);
            PathBuf::from(s)
        };
        SynthPaths {
            sequences: with(".seq.tsv"),
            phenotypes: with(".pheno.csv"),
            oracle: with(".oracle.csv"),
        }
    }
}

impl Synthetic {
    /// Correlation between latent score and target; 1 without noise.
    pub fn latent_pcc(&self) -> Result<f64> {
        pcc(&self.latent, &self.score)
    }

    pub fn write_files(&self, prefix: impl AsRef<Path>) -> Result<SynthPaths> {
        let paths = SynthPaths::for_prefix(prefix);
        write_sequence_file(&paths.sequences, &self.raw)?;

        let mut pheno = String::from("sample_id,trait,value\n");
        let mut oracle = String::from("sample_id,latent,target\n");
        for (i, seq) in self.raw.iter().enumerate() {
            let value = match self.dataset.targets() {
                Targets::Values(v) => v[i].to_string(),
                Targets::Classes { labels, names } => names[labels[i]].clone(),
            };
            writeln!(pheno, "{},{TRAIT_NAME},{value}", seq.id()).expect("string write");
            writeln!(oracle, "{},{},{}", seq.id(), self.latent[i], self.score[i]).expect("string write");
        }
        for (path, text) in [(&paths.phenotypes, pheno), (&paths.oracle, oracle)] {
            let mut f = std::fs::File::create(path)?;
            f.write_all(text.as_bytes())?;
        }
        Ok(paths)
    }
}
