use std::path::Path;
use std::process::{Command, Output};

use snpformer::pipeline::{load_checkpoint, load_dataset, TaskKind};

fn run(args: &[&str], threads: &str) -> Output {
    Command::new(env!("CARGO_BIN_EXE_snpformer"))
        .args(args)
        .env("SNPFORMER_THREADS", threads)
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = run(args, "1");
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn fails(args: &[&str], code: i32) -> String {
    let out = run(args, "1");
    assert_eq!(out.status.code(), Some(code), "{args:?}");
    String::from_utf8(out.stderr).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn synth(dir: &Path, name: &str, extra: &[&str]) -> String {
    let prefix = dir.join(name);
    let mut args = vec!["synth", "--out-prefix", p(&prefix)];
    args.extend_from_slice(extra);
    ok(&args);
    p(&prefix).to_string()
}

const SMALL: &[&str] = &["--n", "60", "--len", "72", "--task", "regression", "--causal", "4", "--noise", "0.2"];

fn train_args<'a>(seq: &'a str, pheno: &'a str, out: &'a str, task: &'a str) -> Vec<&'a str> {
    vec![
        "--sequences", seq, "--phenotypes", pheno, "--trait", "synthetic", "--task", task, "--epochs", "3",
        "--patience", "1", "--out-dir", out,
    ]
}

#[test]
fn tokenize_writes_one_line_per_sample() {
    let dir = tempfile::tempdir().unwrap();
    let seq = dir.path().join("in.tsv");
    std::fs::write(&seq, "# two samples\ns1\tACGTNAACGG\ns2\tYKWRSMACGT\n").unwrap();
    let out = dir.path().join("tokens.txt");
    ok(&["tokenize", "--sequences", p(&seq), "--k", "4", "--out", p(&out)]);
    let text = std::fs::read_to_string(&out).unwrap();
    assert_eq!(text, "s1\t66 502\ns2\t624 602\n");
    let manifest = std::fs::read_to_string(dir.path().join("tokens.txt.manifest")).unwrap();
    assert!(manifest.contains("command=tokenize"));
    assert!(manifest.contains("input.sequences.sha256="));
}

#[test]
fn tokenize_rejects_bad_input() {
    let dir = tempfile::tempdir().unwrap();
    let seq = dir.path().join("in.tsv");
    std::fs::write(&seq, "s1\tACGZ\n").unwrap();
    let out = dir.path().join("t.txt");
    let err = fails(&["tokenize", "--sequences", p(&seq), "--k", "2", "--out", p(&out)], 2);
    assert!(err.contains("'Z'"), "{err}");
    std::fs::write(&seq, "s1\tACGT\n").unwrap();
    fails(&["tokenize", "--sequences", p(&seq), "--k", "0", "--out", p(&out)], 2);
    fails(&["tokenize", "--sequences", "/nonexistent/x.tsv", "--k", "2", "--out", p(&out)], 2);
    fails(&["tokenize", "--k", "2"], 2);
}

#[test]
fn synth_is_seeded_and_noise_free_targets_match_the_oracle() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["--n", "100", "--len", "60", "--task", "regression", "--causal", "3", "--noise", "0", "--seed", "5"];
    let a = synth(dir.path(), "a", &args);
    let b = synth(dir.path(), "b", &args);
    for ext in ["seq.tsv", "pheno.csv", "oracle.csv"] {
        let read = |pre: &str| std::fs::read(format!("{pre}.{ext}")).unwrap();
        assert_eq!(read(&a), read(&b), "{ext}");
    }
    let pheno = std::fs::read_to_string(format!("{a}.pheno.csv")).unwrap();
    let oracle = std::fs::read_to_string(format!("{a}.oracle.csv")).unwrap();
    assert_eq!(pheno.lines().count(), 101);
    assert_eq!(std::fs::read_to_string(format!("{a}.seq.tsv")).unwrap().lines().count(), 100);
    for (ph, or) in pheno.lines().zip(oracle.lines()).skip(1) {
        let ph: Vec<&str> = ph.split(',').collect();
        let or: Vec<&str> = or.split(',').collect();
        assert_eq!(ph[0], or[0]);
        assert_eq!(ph[2], or[2]);
        assert_eq!(or[1], or[2]);
    }
    fails(&["synth", "--n", "10", "--len", "60", "--task", "regression", "--causal", "1", "--noise", "1",
        "--latent-pcc", "0.9", "--out-prefix", p(&dir.path().join("c"))], 2);
    fails(&["synth", "--n", "10", "--len", "60", "--task", "regression", "--causal", "3", "--epistatic",
        "--out-prefix", p(&dir.path().join("d"))], 2);
}

#[test]
fn cv_writes_fold_artifacts_and_is_repeatable() {
    let dir = tempfile::tempdir().unwrap();
    let pre = synth(dir.path(), "toy", SMALL);
    let (seq, pheno) = (format!("{pre}.seq.tsv"), format!("{pre}.pheno.csv"));
    let metrics = |name: &str, threads: &str| {
        let out = dir.path().join(name);
        let mut args = vec!["cv"];
        args.extend(train_args(&seq, &pheno, p(&out), "regression"));
        let o = run(&args, threads);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        for i in 0..5 {
            assert!(out.join(format!("fold{i}.ckpt")).is_file());
            let hist = std::fs::read_to_string(out.join(format!("fold{i}.history.csv"))).unwrap();
            assert!(hist.lines().count() >= 2);
        }
        let manifest = std::fs::read_to_string(out.join("manifest.txt")).unwrap();
        assert!(manifest.contains("fold4.seed="));
        std::fs::read_to_string(out.join("metrics.csv")).unwrap()
    };
    let first = metrics("a", "1");
    assert_eq!(first.lines().count(), 8);
    assert!(first.starts_with("fold,metric,value\n0,pcc,"));
    assert_eq!(first, metrics("b", "1"));
    assert_eq!(first, metrics("c", "2"));
}

#[test]
fn cv_accepts_named_classes_and_predict_prints_them() {
    let dir = tempfile::tempdir().unwrap();
    let pre = synth(dir.path(), "cls", &["--n", "50", "--len", "60", "--task", "classification", "--classes", "2",
        "--causal", "2", "--noise", "0.1"]);
    let pheno = dir.path().join("named.csv");
    let text = std::fs::read_to_string(format!("{pre}.pheno.csv")).unwrap();
    std::fs::write(&pheno, text.replace(",synthetic,0", ",synthetic,short").replace(",synthetic,1", ",synthetic,tall"))
        .unwrap();
    let seq = format!("{pre}.seq.tsv");
    let out = dir.path().join("cv");
    let mut args = vec!["cv"];
    args.extend(train_args(&seq, p(&pheno), p(&out), "classification"));
    let summary = ok(&args);
    assert!(summary.starts_with("acc "), "{summary}");

    let preds = dir.path().join("pred.csv");
    ok(&["predict", "--checkpoint", p(&out.join("fold0.ckpt")), "--sequences", &seq, "--out", p(&preds)]);
    let text = std::fs::read_to_string(&preds).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("sample_id,prediction,p_short,p_tall"));
    for line in lines {
        let f: Vec<&str> = line.split(',').collect();
        assert!(f[1] == "short" || f[1] == "tall", "{line}");
        let sum: f64 = f[2..].iter().map(|v| v.parse::<f64>().unwrap()).sum();
        assert!((sum - 1.0).abs() < 1e-5);
    }
}

#[test]
fn predict_matches_the_library_and_checks_lengths() {
    let dir = tempfile::tempdir().unwrap();
    let pre = synth(dir.path(), "toy", SMALL);
    let (seq, pheno) = (format!("{pre}.seq.tsv"), format!("{pre}.pheno.csv"));
    let out = dir.path().join("cv");
    let mut args = vec!["cv"];
    args.extend(train_args(&seq, &pheno, p(&out), "regression"));
    ok(&args);

    let ckpt_path = out.join("fold2.ckpt");
    let preds = dir.path().join("pred.csv");
    ok(&["predict", "--checkpoint", p(&ckpt_path), "--sequences", &seq, "--out", p(&preds)]);
    let ds = load_dataset(&seq, &pheno, "synthetic", TaskKind::Regression).unwrap();
    let ckpt = load_checkpoint(&ckpt_path).unwrap();
    let want = ckpt.predict(&ds.tokenize(6).unwrap()).unwrap();
    let text = std::fs::read_to_string(&preds).unwrap();
    let got: Vec<f64> = text.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert_eq!(got.len(), want.len());
    for (g, w) in got.iter().zip(&want) {
        assert_eq!(g.to_bits(), w.value().unwrap().to_bits());
    }

    let short = dir.path().join("short.tsv");
    std::fs::write(&short, "x\tACGTACGTACGT\n").unwrap();
    let err = fails(&["predict", "--checkpoint", p(&ckpt_path), "--sequences", p(&short), "--out", p(&preds)], 2);
    assert!(err.contains("expected 72 letters (12 tokens"), "{err}");
    fails(&["predict", "--checkpoint", p(&dir.path().join("none.ckpt")), "--sequences", &seq, "--out", p(&preds)], 2);
}

#[test]
fn ablate_k_grid_writes_one_row_per_width() {
    let dir = tempfile::tempdir().unwrap();
    let pre = synth(dir.path(), "toy", SMALL);
    let (seq, pheno) = (format!("{pre}.seq.tsv"), format!("{pre}.pheno.csv"));
    let out = dir.path().join("abl");
    let mut args = vec!["ablate", "--grid", "k:2,3"];
    args.extend(train_args(&seq, &pheno, p(&out), "regression"));
    ok(&args);
    let text = std::fs::read_to_string(out.join("ablation.csv")).unwrap();
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), 2);
    assert!(rows[0].starts_with("k,k=2,2,0.15,pcc,"), "{}", rows[0]);
    assert!(rows[1].starts_with("k,k=3,3,0.15,pcc,"), "{}", rows[1]);
    fails(&["ablate", "--grid", "depth", "--sequences", &seq, "--phenotypes", &pheno, "--trait", "synthetic",
        "--task", "regression", "--out-dir", p(&out)], 2);
}

#[test]
fn thread_count_must_be_a_positive_integer() {
    let dir = tempfile::tempdir().unwrap();
    let pre = synth(dir.path(), "toy", SMALL);
    let (seq, pheno) = (format!("{pre}.seq.tsv"), format!("{pre}.pheno.csv"));
    let mut args = vec!["cv"];
    let out = dir.path().join("o");
    args.extend(train_args(&seq, &pheno, p(&out), "regression"));
    for bad in ["0", "many"] {
        assert_eq!(run(&args, bad).status.code(), Some(2));
    }
}
