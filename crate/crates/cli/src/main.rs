mod manifest;

use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use snpformer::codec::{preprocess, read_sequence_file};
use snpformer::model::{ModelConfig, PhenotypePrediction};
use snpformer::numeric::AdamConfig;
use snpformer::pipeline::synth::SynthPaths;
use snpformer::pipeline::train::write_history_csv;
use snpformer::pipeline::{
    ablate, cross_validate, load_checkpoint, load_dataset, save_checkpoint, synth_generate, write_ablation_csv, Grid,
    Noise, Signal, SynthConfig, SynthTask, TaskKind, TrainConfig,
};
use snpformer::tokenizer::{kmer_tokenize, vocab_size, write_token_dump};
use snpformer::Error;

use manifest::Manifest;

const THREADS_VAR: &str = "SNPFORMER_THREADS";

#[derive(Parser)]
#[command(name = "snpformer", version, about = "SNP sequence to phenotype prediction with a k-mer transformer")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write non-overlapping k-mer token ids for every sequence.
    Tokenize {
        #[arg(long)]
        sequences: PathBuf,
        #[arg(long)]
        k: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Five-fold cross-validation of the transformer.
    Cv {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Cross-validation over a grid of tokenizer settings.
    Ablate {
        /// k, mask, component, or a list such as k:1..8 or mask:0,0.15
        #[arg(long)]
        grid: String,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Predict phenotypes from a checkpoint, without masking.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        sequences: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a synthetic data set with planted causal k-mers.
    Synth(SynthArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum TaskArg {
    Classification,
    Regression,
}

impl From<TaskArg> for TaskKind {
    fn from(t: TaskArg) -> Self {
        match t {
            TaskArg::Classification => TaskKind::Classification,
            TaskArg::Regression => TaskKind::Regression,
        }
    }
}

impl fmt::Display for TaskArg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TaskArg::Classification => "classification",
            TaskArg::Regression => "regression",
        })
    }
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    sequences: PathBuf,
    #[arg(long)]
    phenotypes: PathBuf,
    #[arg(long)]
    r#trait: String,
    #[arg(long, value_enum)]
    task: TaskArg,
    #[arg(long, default_value_t = 6)]
    k: usize,
    #[arg(long, default_value_t = 0.15)]
    mask_prob: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 80)]
    epochs: usize,
    #[arg(long, default_value_t = 10)]
    patience: usize,
    #[arg(long, default_value_t = 16)]
    batch_size: usize,
    #[arg(long, default_value_t = 1e-4)]
    lr: f64,
    #[arg(long, default_value_t = 0.01)]
    weight_decay: f64,
    #[arg(long, default_value_t = 32)]
    d_model: usize,
    #[arg(long, default_value_t = 3)]
    layers: usize,
    #[arg(long, default_value_t = 4)]
    heads: usize,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    n: usize,
    #[arg(long)]
    len: usize,
    #[arg(long, value_enum)]
    task: TaskArg,
    /// Number of classes for classification.
    #[arg(long, default_value_t = 2)]
    classes: usize,
    #[arg(long)]
    causal: usize,
    /// Noise standard deviation added to the latent score.
    #[arg(long, conflicts_with = "latent_pcc")]
    noise: Option<f64>,
    /// Scale the noise so the latent/target correlation is about this value.
    #[arg(long)]
    latent_pcc: Option<f64>,
    #[arg(long)]
    epistatic: bool,
    #[arg(long, default_value_t = 6)]
    k: usize,
    /// Founder haplotypes; 0 draws every sample independently.
    #[arg(long, default_value_t = 8)]
    founders: usize,
    #[arg(long, default_value_t = 0.05)]
    het_rate: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out_prefix: PathBuf,
}

#[derive(Debug)]
enum CliError {
    Lib(Error),
    Io(std::io::Error),
    Usage(String),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Lib(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e)
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Lib(Error::Numeric(_)) => 3,
            CliError::Lib(Error::InFile { source, .. }) if matches!(**source, Error::Numeric(_)) => 3,
            _ => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Lib(e) => write!(f, "{e}"),
            CliError::Io(e) => write!(f, "{e}"),
            CliError::Usage(m) => f.write_str(m),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn threads() -> CliResult<usize> {
    match std::env::var(THREADS_VAR) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(CliError::Usage(format!("{THREADS_VAR}={v:?} is not a positive integer"))),
        },
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn tokenize(sequences: &Path, k: usize, out: &Path) -> CliResult<()> {
    let mut manifest = Manifest::new("tokenize");
    vocab_size(k)?;
    manifest.input("sequences", sequences)?;
    manifest.set("k", k);
    let seqs = read_sequence_file(sequences)?;
    let tokens = seqs
        .iter()
        .map(|s| kmer_tokenize(&preprocess(s), k))
        .collect::<snpformer::Result<Vec<_>>>()?;
    write_token_dump(out, seqs.iter().map(|s| s.id()).zip(&tokens))?;
    manifest.set("samples", seqs.len());
    manifest.write(&with_suffix(out, ".manifest"))?;
    Ok(())
}

impl RunArgs {
    fn configs(&self, seq_tokens: usize, task: snpformer::model::Task) -> (ModelConfig, TrainConfig) {
        let model = ModelConfig {
            d_model: self.d_model,
            n_layers: self.layers,
            n_heads: self.heads,
            ..ModelConfig::new(self.k, seq_tokens, task)
        };
        let train = TrainConfig {
            epochs: self.epochs,
            patience: self.patience,
            batch_size: self.batch_size,
            adam: AdamConfig {
                lr: self.lr,
                weight_decay: self.weight_decay,
                ..AdamConfig::default()
            },
            mask_prob: self.mask_prob,
            seed: self.seed,
        };
        (model, train)
    }

    fn record(&self, m: &mut Manifest, model: &ModelConfig, train: &TrainConfig, threads: usize) -> CliResult<()> {
        m.input("sequences", &self.sequences)?;
        m.input("phenotypes", &self.phenotypes)?;
        m.set("trait", &self.r#trait);
        m.set("task", self.task);
        for (k, v) in model.to_kv() {
            m.set(&k, v);
        }
        m.set("train.epochs", train.epochs);
        m.set("train.patience", train.patience);
        m.set("train.batch_size", train.batch_size);
        m.set("train.lr", train.adam.lr);
        m.set("train.beta1", train.adam.beta1);
        m.set("train.beta2", train.adam.beta2);
        m.set("train.eps", train.adam.eps);
        m.set("train.weight_decay", train.adam.weight_decay);
        m.set("train.mask_prob", train.mask_prob);
        m.set("seed", train.seed);
        m.set("threads", threads);
        Ok(())
    }
}

fn cv(run: &RunArgs) -> CliResult<()> {
    let threads = threads()?;
    let ds = load_dataset(&run.sequences, &run.phenotypes, &run.r#trait, run.task.into())?;
    let (model, train) = run.configs(ds.seq_tokens(run.k), ds.task());
    let mut manifest = Manifest::new("cv");
    run.record(&mut manifest, &model, &train, threads)?;
    let outcome = cross_validate(&ds, &model, &train, threads)?;
    std::fs::create_dir_all(&run.out_dir)?;
    for f in &outcome.folds {
        let i = f.fold.index;
        manifest.set(&format!("fold{i}.seed"), f.training.checkpoint.tokenizer.seed);
        save_checkpoint(&f.training.checkpoint, run.out_dir.join(format!("fold{i}.ckpt")))?;
        let mut hist = std::fs::File::create(run.out_dir.join(format!("fold{i}.history.csv")))?;
        write_history_csv(&mut hist, &f.training.history)?;
    }
    outcome.report.save_csv(run.out_dir.join("metrics.csv"))?;
    let r = &outcome.report;
    println!("{} {:.4} ± {:.4} over {} folds", r.kind, r.mean, r.std, r.folds.len());
    manifest.write(&run.out_dir.join("manifest.txt"))?;
    Ok(())
}

fn run_ablate(grid: &str, run: &RunArgs) -> CliResult<()> {
    let threads = threads()?;
    let grid: Grid = grid.parse()?;
    let ds = load_dataset(&run.sequences, &run.phenotypes, &run.r#trait, run.task.into())?;
    let (model, train) = run.configs(ds.seq_tokens(run.k), ds.task());
    let mut manifest = Manifest::new("ablate");
    manifest.set("grid", grid.name());
    run.record(&mut manifest, &model, &train, threads)?;
    let cells = ablate(&ds, &model, &train, &grid, threads)?;
    std::fs::create_dir_all(&run.out_dir)?;
    let mut out = std::io::BufWriter::new(std::fs::File::create(run.out_dir.join("ablation.csv"))?);
    write_ablation_csv(&mut out, &grid, &cells)?;
    out.flush()?;
    for c in &cells {
        println!("{:<14} {} {:.4} ± {:.4}", c.label, c.report.kind, c.report.mean, c.report.std);
        manifest.set(&format!("cell.{}", c.label), format!("k={} mask_prob={}", c.k, c.mask_prob));
    }
    manifest.write(&run.out_dir.join("manifest.txt"))?;
    Ok(())
}

fn predict(checkpoint: &Path, sequences: &Path, out: &Path) -> CliResult<()> {
    let mut manifest = Manifest::new("predict");
    manifest.input("checkpoint", checkpoint)?;
    manifest.input("sequences", sequences)?;
    let ckpt = load_checkpoint(checkpoint)?;
    let (k, want) = (ckpt.model.k, ckpt.model.seq_tokens);
    let seqs = read_sequence_file(sequences)?;
    let mut tokens = Vec::with_capacity(seqs.len());
    for s in &seqs {
        if s.len() / k != want {
            return Err(CliError::Usage(format!(
                "sequence {:?}: expected {} letters ({want} tokens of k = {k}), got {} letters ({} tokens)",
                s.id(),
                want * k,
                s.len(),
                s.len() / k
            )));
        }
        tokens.push(kmer_tokenize(&preprocess(s), k)?);
    }
    let preds = ckpt.predict(&tokens)?;
    let mut w = std::io::BufWriter::new(std::fs::File::create(out)?);
    write!(w, "sample_id,prediction")?;
    for name in &ckpt.labels {
        write!(w, ",p_{name}")?;
    }
    writeln!(w)?;
    for (s, p) in seqs.iter().zip(&preds) {
        match p {
            PhenotypePrediction::Value(v) => writeln!(w, "{},{v}", s.id())?,
            PhenotypePrediction::Class { probabilities } => {
                let best = p.class().expect("class prediction");
                write!(w, "{},{}", s.id(), ckpt.labels[best])?;
                for q in probabilities {
                    write!(w, ",{q}")?;
                }
                writeln!(w)?;
            }
        }
    }
    w.flush()?;
    manifest.set("samples", seqs.len());
    manifest.write(&with_suffix(out, ".manifest"))?;
    Ok(())
}

fn synth(a: &SynthArgs) -> CliResult<()> {
    let mut manifest = Manifest::new("synth");
    let noise = match (a.noise, a.latent_pcc) {
        (_, Some(r)) => Noise::LatentPcc(r),
        (sd, None) => Noise::Sd(sd.unwrap_or(0.0)),
    };
    let signal = if a.epistatic {
        Signal::epistatic(a.causal, noise)
    } else {
        Signal::additive(a.causal, noise)
    };
    let task = match a.task {
        TaskArg::Regression => SynthTask::Regression,
        TaskArg::Classification => SynthTask::Classification { classes: a.classes },
    };
    let cfg = SynthConfig {
        k: a.k,
        founders: a.founders,
        het_rate: a.het_rate,
        ..SynthConfig::new(a.n, a.len, task, signal, a.seed)
    };
    let data = synth_generate(&cfg)?;
    if let Some(parent) = a.out_prefix.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    let SynthPaths { sequences, phenotypes, oracle } = data.write_files(&a.out_prefix)?;
    for (key, value) in [
        ("n", a.n.to_string()),
        ("len", a.len.to_string()),
        ("task", a.task.to_string()),
        ("classes", a.classes.to_string()),
        ("causal", a.causal.to_string()),
        ("noise", format!("{noise:?}")),
        ("epistatic", a.epistatic.to_string()),
        ("k", a.k.to_string()),
        ("founders", a.founders.to_string()),
        ("block_tokens", cfg.block_tokens.to_string()),
        ("het_rate", a.het_rate.to_string()),
        ("carrier_freq", cfg.carrier_freq.to_string()),
        ("seed", a.seed.to_string()),
    ] {
        manifest.set(key, value);
    }
    manifest.set("output.sequences", sequences.display());
    manifest.set("output.phenotypes", phenotypes.display());
    manifest.set("output.oracle", oracle.display());
    manifest.write(&with_suffix(&a.out_prefix, ".manifest"))?;
    Ok(())
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Tokenize { sequences, k, out } => tokenize(&sequences, k, &out),
        Command::Cv { run } => cv(&run),
        Command::Ablate { grid, run } => run_ablate(&grid, &run),
        Command::Predict {
            checkpoint,
            sequences,
            out,
        } => predict(&checkpoint, &sequences, &out),
        Command::Synth(a) => synth(&a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
