//! Browser bindings for the demo page. Every export returns a JSON string;
//! the `*_json` functions hold the logic and run natively in tests.

use serde_json::{json, Value};
use snpformer::codec::{parse_sequence, preprocess};
use snpformer::model::positional_encoding;
use snpformer::pipeline::{ridge_baseline, synth_generate, Noise, Signal, SynthConfig, SynthTask};
use snpformer::tokenizer::{kmer_of, kmer_tokenize, mask_sample, vocab_size, TokenizerConfig};
use wasm_bindgen::prelude::*;

fn to_js(r: Result<Value, String>) -> Result<String, JsValue> {
    r.map(|v| v.to_string()).map_err(|e| JsValue::from_str(&e))
}

fn err(e: snpformer::Error) -> String {
    e.to_string()
}

/// Preprocess, tokenize and mask one raw SNP letter string.
pub fn tokenize_json(text: &str, k: usize, mask_prob: f64, seed: u64, epoch: u64) -> Result<Value, String> {
    let cfg = TokenizerConfig::new(k, mask_prob, seed).map_err(err)?;
    let pre = preprocess(&parse_sequence("input", text.trim()).map_err(err)?);
    let tokens = kmer_tokenize(&pre, k).map_err(err)?;
    let masked = mask_sample(&tokens, &cfg, 0, epoch);
    let kmers = tokens
        .ids()
        .iter()
        .map(|&id| kmer_of(id, k).map(|s| s.iter().map(|c| c.as_char()).collect::<String>()))
        .collect::<snpformer::Result<Vec<_>>>()
        .map_err(err)?;
    Ok(json!({
        "preprocessed": pre.to_text(),
        "kmers": kmers,
        "ids": tokens.ids(),
        "masked": masked.ids,
        "mask_positions": masked.mask_positions,
        "mask_id": cfg.mask_id(),
        "vocab_size": vocab_size(k).map_err(err)?,
        "dropped": pre.len() % k,
    }))
}

/// Sinusoidal encoding as a row-major `length x width` grid.
pub fn positional_encoding_json(length: usize, width: usize) -> Result<Value, String> {
    if length > 4096 || width > 512 {
        return Err(format!("{length} x {width} is too large to draw"));
    }
    let pe = positional_encoding(length, width).map_err(err)?;
    Ok(json!({ "length": length, "width": width, "values": pe.data() }))
}

/// Five-fold ridge on a freshly generated synthetic regression set.
pub fn ridge_json(n: usize, len: usize, causal: usize, epistatic: bool, l2: f64, seed: u64) -> Result<Value, String> {
    if n > 1000 || len > 6000 {
        return Err("keep n <= 1000 and len <= 6000 in the browser".into());
    }
    let noise = Noise::LatentPcc(0.95);
    let signal = if epistatic {
        Signal::epistatic(causal, noise)
    } else {
        Signal::additive(causal, noise)
    };
    let data = synth_generate(&SynthConfig::new(n, len, SynthTask::Regression, signal, seed)).map_err(err)?;
    let report = ridge_baseline(&data.dataset, l2, seed, 1).map_err(err)?;
    Ok(json!({
        "metric": report.kind.name(),
        "folds": report.values(),
        "mean": report.mean,
        "std": report.std,
        "latent_pcc": data.latent_pcc().map_err(err)?,
    }))
}

#[wasm_bindgen]
pub fn tokenize(text: &str, k: usize, mask_prob: f64, seed: u64, epoch: u64) -> Result<String, JsValue> {
    to_js(tokenize_json(text, k, mask_prob, seed, epoch))
}

#[wasm_bindgen]
pub fn positional_encoding_grid(length: usize, width: usize) -> Result<String, JsValue> {
    to_js(positional_encoding_json(length, width))
}

#[wasm_bindgen]
pub fn ridge_cv(n: usize, len: usize, causal: usize, epistatic: bool, l2: f64, seed: u64) -> Result<String, JsValue> {
    to_js(ridge_json(n, len, causal, epistatic, l2, seed))
}
