//! Binary checkpoints.
//!
//! Layout, little-endian throughout:
//!
//! ```text
//! "GSCK" | u32 version | u32 len | config (UTF-8 key=value lines)
//! per tensor: u32 len | name | u32 rank | u64 dims[rank] | f32 data[prod(dims)]
//! ```

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{ModelConfig, PhenotypePrediction, Task, Transformer};
use crate::numeric::{ParamStore, Tensor};
use crate::tokenizer::{TokenIds, TokenizerConfig};

pub const MAGIC: &[u8; 4] = b"GSCK";
pub const VERSION: u32 = 1;

/// Samples per forward pass when predicting.
pub const PREDICT_BATCH: usize = 16;

/// Mean and standard deviation used to standardize regression targets.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetScale {
    pub mean: f64,
    pub std: f64,
}

impl TargetScale {
    pub const IDENTITY: TargetScale = TargetScale { mean: 0.0, std: 1.0 };

    pub fn fit(values: &[f64]) -> TargetScale {
        let n = values.len().max(1) as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let std = var.sqrt();
        TargetScale {
            mean,
            std: if std > 0.0 && std.is_finite() { std } else { 1.0 },
        }
    }

    pub fn forward(&self, v: f64) -> f64 {
        (v - self.mean) / self.std
    }

    pub fn inverse(&self, v: f64) -> f64 {
        v * self.std + self.mean
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: ModelConfig,
    pub tokenizer: TokenizerConfig,
    pub params: ParamStore<f32>,
    /// Class names by dense label (classification only).
    pub labels: Vec<String>,
    pub target_scale: TargetScale,
    pub epoch: usize,
    pub best_metric: f64,
}

impl Checkpoint {
    pub fn transformer(&self) -> Result<Transformer<f32>> {
        Transformer::from_params(self.model.clone(), self.params.clone())
    }

    /// Unmasked predictions, regression values mapped back to the original scale.
    pub fn predict(&self, tokens: &[TokenIds]) -> Result<Vec<PhenotypePrediction>> {
        let model = self.transformer()?;
        self.predict_with(&model, tokens)
    }

    pub(crate) fn predict_with(&self, model: &Transformer<f32>, tokens: &[TokenIds]) -> Result<Vec<PhenotypePrediction>> {
        let mut out = Vec::with_capacity(tokens.len());
        for chunk in tokens.chunks(PREDICT_BATCH) {
            let batch: Vec<&[u32]> = chunk.iter().map(|t| t.ids()).collect();
            for p in model.predict(&batch)? {
                out.push(match p {
                    PhenotypePrediction::Value(v) => PhenotypePrediction::Value(self.target_scale.inverse(v)),
                    class => class,
                });
            }
        }
        Ok(out)
    }

    fn config_blob(&self) -> Result<String> {
        let mut kv = self.model.to_kv();
        kv.push(("tokenizer.k".into(), self.tokenizer.k.to_string()));
        kv.push(("tokenizer.mask_prob".into(), self.tokenizer.mask_prob.to_string()));
        kv.push(("tokenizer.seed".into(), self.tokenizer.seed.to_string()));
        kv.push(("labels".into(), self.labels.len().to_string()));
        for (i, name) in self.labels.iter().enumerate() {
            if name.contains(['\n', '\r']) {
                return Err(Error::Config(format!("class label {name:?} contains a line break")));
            }
            kv.push((format!("label.{i}"), name.clone()));
        }
        kv.push(("target.mean".into(), self.target_scale.mean.to_string()));
        kv.push(("target.std".into(), self.target_scale.std.to_string()));
        kv.push(("train.epoch".into(), self.epoch.to_string()));
        kv.push(("train.best_metric".into(), self.best_metric.to_string()));
        kv.push(("tensors".into(), self.params.len().to_string()));
        Ok(kv.into_iter().map(|(k, v)| format!("{k}={v}\n")).collect())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let blob = self.config_blob()?;
        let mut out = Vec::with_capacity(16 + blob.len() + self.params.num_scalars() * 4);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        put_len(&mut out, blob.len())?;
        out.extend_from_slice(blob.as_bytes());
        for (name, t) in self.params.iter() {
            put_len(&mut out, name.len())?;
            out.extend_from_slice(name.as_bytes());
            put_len(&mut out, t.shape().len())?;
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(4, "magic")?;
        if magic != MAGIC {
            return Err(Error::Format(format!("bad magic {magic:?}, expected {MAGIC:?}")));
        }
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(Error::Format(format!(
                "unsupported version {version}, this build reads version {VERSION}"
            )));
        }
        let len = r.u32("config length")? as usize;
        let blob = std::str::from_utf8(r.take(len, "config")?)
            .map_err(|_| Error::Format("config is not UTF-8".into()))?;
        let mut kv = BTreeMap::new();
        for line in blob.lines() {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("config line {line:?} has no '='")))?;
            kv.insert(k.to_string(), v.to_string());
        }
        let get = |key: &str| -> Result<&str> {
            kv.get(key)
                .map(String::as_str)
                .ok_or_else(|| Error::Format(format!("missing config key {key}")))
        };
        fn parse<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse().map_err(|_| Error::Format(format!("bad value {v:?} for {key}")))
        }
        let model = ModelConfig::from_kv(&kv)?;
        let tokenizer = TokenizerConfig {
            k: parse("tokenizer.k", get("tokenizer.k")?)?,
            mask_prob: parse("tokenizer.mask_prob", get("tokenizer.mask_prob")?)?,
            seed: parse("tokenizer.seed", get("tokenizer.seed")?)?,
        };
        let n_labels: usize = parse("labels", get("labels")?)?;
        let labels = (0..n_labels)
            .map(|i| get(&format!("label.{i}")).map(str::to_string))
            .collect::<Result<Vec<_>>>()?;
        if let Task::Classification { classes } = model.task {
            if classes != labels.len() {
                return Err(Error::Format(format!("{classes} classes but {} labels", labels.len())));
            }
        }
        let target_scale = TargetScale {
            mean: parse("target.mean", get("target.mean")?)?,
            std: parse("target.std", get("target.std")?)?,
        };
        let epoch = parse("train.epoch", get("train.epoch")?)?;
        let best_metric = parse("train.best_metric", get("train.best_metric")?)?;
        let n_tensors: usize = parse("tensors", get("tensors")?)?;

        let mut params = ParamStore::new();
        for _ in 0..n_tensors {
            let len = r.u32("tensor name length")? as usize;
            let name = std::str::from_utf8(r.take(len, "tensor name")?)
                .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?
                .to_string();
            let rank = r.u32("tensor rank")? as usize;
            if rank > 8 {
                return Err(Error::Format(format!("tensor {name} has rank {rank}")));
            }
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u64("tensor dims")? as usize);
            }
            let numel = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .filter(|&n| n <= r.remaining() / 4)
                .ok_or_else(|| Error::Corruption(format!("tensor {name} extends past end of file")))?;
            let data: Vec<f32> = r
                .take(numel * 4, "tensor data")?
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
                .collect();
            if params.find(&name).is_some() {
                return Err(Error::Format(format!("duplicate tensor {name}")));
            }
            params.add(name, Tensor::from_vec(&shape, data)?);
        }
        if r.remaining() != 0 {
            return Err(Error::Corruption(format!("{} trailing bytes", r.remaining())));
        }
        let ckpt = Checkpoint {
            model,
            tokenizer,
            params,
            labels,
            target_scale,
            epoch,
            best_metric,
        };
        // layout check: names and shapes must match the config
        ckpt.transformer().map_err(|e| Error::Format(e.to_string()))?;
        Ok(ckpt)
    }
}

fn put_len(out: &mut Vec<u8>, len: usize) -> Result<()> {
    let len = u32::try_from(len).map_err(|_| Error::Config(format!("length {len} exceeds u32")))?;
    out.extend_from_slice(&len.to_le_bytes());
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if n > self.remaining() {
            return Err(Error::Corruption(format!(
                "truncated {what} at byte {}: need {n}, have {}",
                self.pos,
                self.remaining()
            )));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let bytes = ckpt.to_bytes()?;
    let mut f = std::fs::File::create(path)?;
    f.write_all(&bytes)?;
    f.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    Checkpoint::from_bytes(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    use crate::model::ModelConfig;

    fn sample(task: Task) -> Checkpoint {
        let model = ModelConfig {
            d_model: 8,
            n_layers: 1,
            n_heads: 2,
            mlp_ratio: 2,
            proj_dim: 2,
            head_hidden: 4,
            ..ModelConfig::new(2, 3, task)
        };
        let labels = match task {
            Task::Classification { classes } => (0..classes).map(|i| format!("class={i}")).collect(),
            Task::Regression => Vec::new(),
        };
        Checkpoint {
            params: Transformer::<f32>::new(model.clone(), 11).unwrap().into_params(),
            model,
            tokenizer: TokenizerConfig::new(2, 0.15, 99).unwrap(),
            labels,
            target_scale: TargetScale { mean: 1.25, std: 0.1 },
            epoch: 7,
            best_metric: 0.1 + 0.2,
        }
    }

    #[test]
    fn round_trip_is_exact() {
        for task in [Task::Regression, Task::Classification { classes: 3 }] {
            let ckpt = sample(task);
            let bytes = ckpt.to_bytes().unwrap();
            assert_eq!(&bytes[..4], b"GSCK");
            assert_eq!(&bytes[4..8], &[1, 0, 0, 0]);
            let back = Checkpoint::from_bytes(&bytes).unwrap();
            assert_eq!(back, ckpt);
            let tokens = vec![TokenIds::new(vec![0, 24, 25], 2).unwrap()];
            assert_eq!(back.predict(&tokens).unwrap(), ckpt.predict(&tokens).unwrap());
        }
    }

    #[test]
    fn header_damage_is_a_format_error() {
        let bytes = sample(Task::Regression).to_bytes().unwrap();
        let mut bad = bytes.clone();
        bad[1] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(Error::Format(_))));

        let mut future = bytes.clone();
        future[4..8].copy_from_slice(&2u32.to_le_bytes());
        match Checkpoint::from_bytes(&future) {
            Err(Error::Format(msg)) => assert!(msg.contains('2') && msg.contains('1'), "{msg}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn truncation_is_corruption() {
        let bytes = sample(Task::Regression).to_bytes().unwrap();
        for cut in [2, 6, 10, 40, bytes.len() / 2, bytes.len() - 1] {
            let err = Checkpoint::from_bytes(&bytes[..cut]).unwrap_err();
            if cut < 4 {
                assert!(matches!(err, Error::Corruption(_) | Error::Format(_)));
            } else {
                assert!(matches!(err, Error::Corruption(_)), "cut {cut}: {err:?}");
            }
        }
        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(Checkpoint::from_bytes(&long), Err(Error::Corruption(_))));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.gsck");
        let ckpt = sample(Task::Classification { classes: 2 });
        save_checkpoint(&ckpt, &path).unwrap();
        assert_eq!(load_checkpoint(&path).unwrap(), ckpt);
        assert!(matches!(load_checkpoint(dir.path().join("missing")), Err(Error::Io(_))));
    }

    #[test]
    fn target_scale() {
        let s = TargetScale::fit(&[1.0, 3.0]);
        assert_eq!((s.mean, s.std), (2.0, 1.0));
        assert_eq!(s.inverse(s.forward(7.5)), 7.5);
        assert_eq!(TargetScale::fit(&[4.0, 4.0]).std, 1.0);
    }
}
