//! Token embedding with sinusoidal positions, pre-norm encoder blocks, a
//! linear projector and a flatten + two-layer MLP head.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numeric::{ParamId, ParamStore, Real, Tape, Tensor, Var};
use crate::tokenizer::vocab_size;

pub const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    Classification { classes: usize },
    Regression,
}

impl Task {
    pub fn output_dim(&self) -> usize {
        match self {
            Task::Classification { classes } => *classes,
            Task::Regression => 1,
        }
    }

    pub fn is_classification(&self) -> bool {
        matches!(self, Task::Classification { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Gelu,
    Relu,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub k: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub mlp_ratio: usize,
    pub proj_dim: usize,
    pub head_hidden: usize,
    pub task: Task,
    pub seq_tokens: usize,
    pub activation: Activation,
    pub init_std: f64,
}

impl ModelConfig {
    pub fn new(k: usize, seq_tokens: usize, task: Task) -> Self {
        ModelConfig {
            k,
            d_model: 32,
            n_layers: 3,
            n_heads: 4,
            mlp_ratio: 4,
            proj_dim: 4,
            head_hidden: 256,
            task,
            seq_tokens,
            activation: Activation::Gelu,
            init_std: 0.02,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        vocab_size(self.k)?;
        if self.d_model == 0 || self.d_model % 2 != 0 {
            return fail(format!("embedding width {} must be even and positive", self.d_model));
        }
        if self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return fail(format!(
                "embedding width {} not divisible by {} heads",
                self.d_model, self.n_heads
            ));
        }
        if self.proj_dim == 0 || self.proj_dim > self.d_model {
            return fail(format!("projector width {} outside 1..={}", self.proj_dim, self.d_model));
        }
        if self.mlp_ratio == 0 || self.head_hidden == 0 || self.seq_tokens == 0 {
            return fail("mlp ratio, head width and sequence length must be positive".into());
        }
        if let Task::Classification { classes } = self.task {
            if classes < 2 {
                return fail(format!("classification needs at least 2 classes, got {classes}"));
            }
        }
        if !(self.init_std >= 0.0 && self.init_std.is_finite()) {
            return fail(format!("init std {} must be finite and non-negative", self.init_std));
        }
        Ok(())
    }

    pub fn vocab(&self) -> usize {
        vocab_size(self.k).expect("validated k")
    }

    pub fn to_kv(&self) -> Vec<(String, String)> {
        let (task, classes) = match self.task {
            Task::Classification { classes } => ("classification", classes),
            Task::Regression => ("regression", 0),
        };
        let activation = match self.activation {
            Activation::Gelu => "gelu",
            Activation::Relu => "relu",
        };
        [
            ("model.k", self.k.to_string()),
            ("model.d_model", self.d_model.to_string()),
            ("model.n_layers", self.n_layers.to_string()),
            ("model.n_heads", self.n_heads.to_string()),
            ("model.mlp_ratio", self.mlp_ratio.to_string()),
            ("model.proj_dim", self.proj_dim.to_string()),
            ("model.head_hidden", self.head_hidden.to_string()),
            ("model.task", task.to_string()),
            ("model.classes", classes.to_string()),
            ("model.seq_tokens", self.seq_tokens.to_string()),
            ("model.activation", activation.to_string()),
            ("model.init_std", self.init_std.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }

    pub fn from_kv(kv: &BTreeMap<String, String>) -> Result<Self> {
        let get = |key: &str| {
            kv.get(key)
                .ok_or_else(|| Error::Format(format!("missing config key {key}")))
        };
        let num = |key: &str| -> Result<usize> {
            get(key)?
                .parse()
                .map_err(|_| Error::Format(format!("bad value for {key}")))
        };
        let task = match get("model.task")?.as_str() {
            "classification" => Task::Classification {
                classes: num("model.classes")?,
            },
            "regression" => Task::Regression,
            other => return Err(Error::Format(format!("unknown task {other:?}"))),
        };
        let activation = match get("model.activation")?.as_str() {
            "gelu" => Activation::Gelu,
            "relu" => Activation::Relu,
            other => return Err(Error::Format(format!("unknown activation {other:?}"))),
        };
        let cfg = ModelConfig {
            k: num("model.k")?,
            d_model: num("model.d_model")?,
            n_layers: num("model.n_layers")?,
            n_heads: num("model.n_heads")?,
            mlp_ratio: num("model.mlp_ratio")?,
            proj_dim: num("model.proj_dim")?,
            head_hidden: num("model.head_hidden")?,
            task,
            seq_tokens: num("model.seq_tokens")?,
            activation,
            init_std: get("model.init_std")?
                .parse()
                .map_err(|_| Error::Format("bad value for model.init_std".into()))?,
        };
        cfg.validate().map_err(|e| Error::Format(e.to_string()))?;
        Ok(cfg)
    }
}

/// `PE[pos, 2i] = sin(pos / 10000^(2i/width))`, `PE[pos, 2i+1] = cos(...)`.
pub fn positional_encoding(length: usize, width: usize) -> Result<Tensor<f64>> {
    if width == 0 || width % 2 != 0 {
        return Err(Error::Config(format!("positional encoding width {width} must be even")));
    }
    if length == 0 {
        return Err(Error::Config("positional encoding length must be positive".into()));
    }
    let mut data = vec![0.0; length * width];
    for pos in 0..length {
        for i in 0..width / 2 {
            let angle = pos as f64 / 10000f64.powf(2.0 * i as f64 / width as f64);
            data[pos * width + 2 * i] = angle.sin();
            data[pos * width + 2 * i + 1] = angle.cos();
        }
    }
    Tensor::from_vec(&[length, width], data)
}

/// Model output for one sample.
#[derive(Debug, Clone, PartialEq)]
pub enum PhenotypePrediction {
    Class { probabilities: Vec<f64> },
    Value(f64),
}

impl PhenotypePrediction {
    /// Most probable class (first on ties), or `None` for regression.
    pub fn class(&self) -> Option<usize> {
        match self {
            PhenotypePrediction::Class { probabilities } => Some(argmax(probabilities)),
            PhenotypePrediction::Value(_) => None,
        }
    }

    pub fn value(&self) -> Option<f64> {
        match self {
            PhenotypePrediction::Value(v) => Some(*v),
            PhenotypePrediction::Class { .. } => None,
        }
    }
}

pub(crate) fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Supervision for one mini-batch.
#[derive(Debug, Clone, Copy)]
pub enum BatchTargets<'a> {
    Classes(&'a [usize]),
    Values(&'a [f64]),
}

#[derive(Debug, Clone)]
struct BlockParams {
    ln1_gain: ParamId,
    ln1_bias: ParamId,
    qkv_weight: ParamId,
    qkv_bias: ParamId,
    out_weight: ParamId,
    out_bias: ParamId,
    ln2_gain: ParamId,
    ln2_bias: ParamId,
    fc1_weight: ParamId,
    fc1_bias: ParamId,
    fc2_weight: ParamId,
    fc2_bias: ParamId,
}

#[derive(Debug, Clone)]
struct Layout {
    embed: ParamId,
    blocks: Vec<BlockParams>,
    proj_weight: ParamId,
    proj_bias: ParamId,
    head1_weight: ParamId,
    head1_bias: ParamId,
    head2_weight: ParamId,
    head2_bias: ParamId,
}

/// Parameter names and shapes in registration order.
fn param_specs(cfg: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let d = cfg.d_model;
    let hidden = cfg.mlp_ratio * d;
    let mut specs = vec![("embed.table".to_string(), vec![cfg.vocab(), d])];
    for l in 0..cfg.n_layers {
        let p = |s: &str| format!("block{l}.{s}");
        specs.extend([
            (p("ln1.gain"), vec![d]),
            (p("ln1.bias"), vec![d]),
            (p("attn.qkv.weight"), vec![d, 3 * d]),
            (p("attn.qkv.bias"), vec![3 * d]),
            (p("attn.out.weight"), vec![d, d]),
            (p("attn.out.bias"), vec![d]),
            (p("ln2.gain"), vec![d]),
            (p("ln2.bias"), vec![d]),
            (p("mlp.fc1.weight"), vec![d, hidden]),
            (p("mlp.fc1.bias"), vec![hidden]),
            (p("mlp.fc2.weight"), vec![hidden, d]),
            (p("mlp.fc2.bias"), vec![d]),
        ]);
    }
    let flat = cfg.seq_tokens * cfg.proj_dim;
    specs.extend([
        ("proj.weight".to_string(), vec![d, cfg.proj_dim]),
        ("proj.bias".to_string(), vec![cfg.proj_dim]),
        ("head.fc1.weight".to_string(), vec![flat, cfg.head_hidden]),
        ("head.fc1.bias".to_string(), vec![cfg.head_hidden]),
        ("head.fc2.weight".to_string(), vec![cfg.head_hidden, cfg.task.output_dim()]),
        ("head.fc2.bias".to_string(), vec![cfg.task.output_dim()]),
    ]);
    specs
}

fn resolve<T: Real>(cfg: &ModelConfig, params: &ParamStore<T>) -> Result<Layout> {
    let specs = param_specs(cfg);
    if specs.len() != params.len() {
        return Err(Error::Format(format!(
            "expected {} parameter tensors, found {}",
            specs.len(),
            params.len()
        )));
    }
    for (name, shape) in &specs {
        let id = params
            .find(name)
            .ok_or_else(|| Error::Format(format!("missing parameter {name}")))?;
        if params.get(id).shape() != &shape[..] {
            return Err(Error::shape("parameter layout", params.get(id).shape(), shape));
        }
    }
    let id = |name: String| params.find(&name).expect("checked above");
    let blocks = (0..cfg.n_layers)
        .map(|l| {
            let p = |s: &str| id(format!("block{l}.{s}"));
            BlockParams {
                ln1_gain: p("ln1.gain"),
                ln1_bias: p("ln1.bias"),
                qkv_weight: p("attn.qkv.weight"),
                qkv_bias: p("attn.qkv.bias"),
                out_weight: p("attn.out.weight"),
                out_bias: p("attn.out.bias"),
                ln2_gain: p("ln2.gain"),
                ln2_bias: p("ln2.bias"),
                fc1_weight: p("mlp.fc1.weight"),
                fc1_bias: p("mlp.fc1.bias"),
                fc2_weight: p("mlp.fc2.weight"),
                fc2_bias: p("mlp.fc2.bias"),
            }
        })
        .collect();
    Ok(Layout {
        embed: id("embed.table".into()),
        blocks,
        proj_weight: id("proj.weight".into()),
        proj_bias: id("proj.bias".into()),
        head1_weight: id("head.fc1.weight".into()),
        head1_bias: id("head.fc1.bias".into()),
        head2_weight: id("head.fc2.weight".into()),
        head2_bias: id("head.fc2.bias".into()),
    })
}

#[derive(Debug, Clone)]
pub struct Transformer<T: Real> {
    config: ModelConfig,
    params: ParamStore<T>,
    layout: Layout,
    positions: Tensor<T>,
}

impl<T: Real> Transformer<T> {
    /// Fresh model: weights ~ N(0, init_std), biases 0, layer-norm gains 1.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        for (name, shape) in param_specs(&config) {
            if name.ends_with(".gain") {
                params.add(name, Tensor::full(&shape, T::one()));
            } else if name.ends_with(".bias") {
                params.add(name, Tensor::zeros(&shape));
            } else {
                params.add_normal(name, &shape, config.init_std, &mut rng);
            }
        }
        Self::from_params(config, params)
    }

    pub fn from_params(config: ModelConfig, params: ParamStore<T>) -> Result<Self> {
        config.validate()?;
        let layout = resolve(&config, &params)?;
        let positions = positional_encoding(config.seq_tokens, config.d_model)?.cast();
        Ok(Transformer {
            config,
            params,
            layout,
            positions,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn into_params(self) -> ParamStore<T> {
        self.params
    }

    /// Same architecture and weights in another float type.
    pub fn cast<U: Real>(&self) -> Transformer<U> {
        Transformer::from_params(self.config.clone(), self.params.cast()).expect("same layout")
    }

    fn check_batch(&self, batch: &[&[u32]]) -> Result<()> {
        if batch.is_empty() {
            return Err(Error::Config("empty batch".into()));
        }
        let n = self.config.seq_tokens;
        for tokens in batch {
            if tokens.len() != n {
                return Err(Error::shape("model input", &[tokens.len()], &[n]));
            }
        }
        Ok(())
    }

    /// Token embeddings plus positional encoding, `[batch*seq x width]`.
    pub fn embed(&self, tape: &mut Tape<'_, T>, batch: &[&[u32]]) -> Result<Var> {
        self.check_batch(batch)?;
        let ids: Vec<u32> = batch.iter().flat_map(|t| t.iter().copied()).collect();
        let table = tape.param(self.layout.embed);
        let tokens = tape.embedding(table, &ids)?;
        let mut tiled = Vec::with_capacity(ids.len() * self.config.d_model);
        for _ in 0..batch.len() {
            tiled.extend_from_slice(self.positions.data());
        }
        let pe = tape.constant(Tensor::from_vec(&[ids.len(), self.config.d_model], tiled)?);
        tape.add(tokens, pe)
    }

    fn linear(tape: &mut Tape<'_, T>, x: Var, weight: ParamId, bias: ParamId) -> Result<Var> {
        let w = tape.param(weight);
        let b = tape.param(bias);
        let y = tape.matmul(x, w)?;
        tape.add_bias(y, b)
    }

    fn activate(&self, tape: &mut Tape<'_, T>, x: Var) -> Result<Var> {
        match self.config.activation {
            Activation::Gelu => tape.gelu(x),
            Activation::Relu => tape.relu(x),
        }
    }

    /// Multi-head self-attention sublayer (QKV projection, attention, output projection).
    pub fn mha(&self, tape: &mut Tape<'_, T>, x: Var, block: usize, batch: usize) -> Result<Var> {
        let p = &self.layout.blocks[block];
        let qkv = Self::linear(tape, x, p.qkv_weight, p.qkv_bias)?;
        let heads = tape.attention(qkv, batch, self.config.seq_tokens, self.config.n_heads)?;
        Self::linear(tape, heads, p.out_weight, p.out_bias)
    }

    /// `x' = MSA(LN(x)) + x`, then `MLP(LN(x')) + x'`.
    pub fn encoder_block(&self, tape: &mut Tape<'_, T>, x: Var, block: usize, batch: usize) -> Result<Var> {
        let p = &self.layout.blocks[block];
        let (g1, b1) = (tape.param(p.ln1_gain), tape.param(p.ln1_bias));
        let normed = tape.layer_norm(x, g1, b1, LN_EPS)?;
        let attended = self.mha(tape, normed, block, batch)?;
        let x = tape.add(x, attended)?;

        let (g2, b2) = (tape.param(p.ln2_gain), tape.param(p.ln2_bias));
        let normed = tape.layer_norm(x, g2, b2, LN_EPS)?;
        let hidden = Self::linear(tape, normed, p.fc1_weight, p.fc1_bias)?;
        let hidden = self.activate(tape, hidden)?;
        let out = Self::linear(tape, hidden, p.fc2_weight, p.fc2_bias)?;
        tape.add(x, out)
    }

    /// Project to `proj_dim`, flatten each sample row-major, and apply the
    /// head MLP. Returns `[batch x outputs]` logits or values.
    pub fn project_and_predict(&self, tape: &mut Tape<'_, T>, encoded: Var, batch: usize) -> Result<Var> {
        let n = self.config.seq_tokens;
        let rows = tape.shape(encoded).first().copied().unwrap_or(0);
        if rows != batch * n {
            return Err(Error::shape("projector input", tape.shape(encoded), &[batch * n]));
        }
        let l = &self.layout;
        let projected = Self::linear(tape, encoded, l.proj_weight, l.proj_bias)?;
        let flat = tape.reshape(projected, &[batch, n * self.config.proj_dim])?;
        let hidden = Self::linear(tape, flat, l.head1_weight, l.head1_bias)?;
        let hidden = self.activate(tape, hidden)?;
        Self::linear(tape, hidden, l.head2_weight, l.head2_bias)
    }

    /// Full forward pass over a batch of equal-length token sequences.
    pub fn forward(&self, tape: &mut Tape<'_, T>, batch: &[&[u32]]) -> Result<Var> {
        let mut x = self.embed(tape, batch)?;
        for block in 0..self.config.n_layers {
            x = self.encoder_block(tape, x, block, batch.len())?;
        }
        self.project_and_predict(tape, x, batch.len())
    }

    /// Cross-entropy for classification, mean squared error for regression.
    pub fn loss(&self, tape: &mut Tape<'_, T>, outputs: Var, targets: BatchTargets<'_>) -> Result<Var> {
        match (self.config.task, targets) {
            (Task::Classification { .. }, BatchTargets::Classes(labels)) => tape.cross_entropy(outputs, labels),
            (Task::Regression, BatchTargets::Values(values)) => tape.mse(outputs, values),
            _ => Err(Error::Config("targets do not match the model task".into())),
        }
    }

    pub fn predict(&self, batch: &[&[u32]]) -> Result<Vec<PhenotypePrediction>> {
        let mut tape = Tape::inference(&self.params);
        let out = self.forward(&mut tape, batch)?;
        let dim = self.config.task.output_dim();
        let values: Vec<f64> = tape.data(out).iter().map(|v| v.to_f64_lossy()).collect();
        Ok(values
            .chunks_exact(dim)
            .map(|row| match self.config.task {
                Task::Regression => PhenotypePrediction::Value(row[0]),
                Task::Classification { .. } => PhenotypePrediction::Class {
                    probabilities: softmax_f64(row),
                },
            })
            .collect())
    }
}

fn softmax_f64(row: &[f64]) -> Vec<f64> {
    let t = Tensor::from_vec(&[row.len()], row.to_vec()).expect("1-d");
    crate::numeric::softmax(&t).into_data()
}

#[cfg(test)]
mod tests {
    use super::*;

    use approx::assert_abs_diff_eq;

    use crate::numeric::Gradients;

    fn tiny(task: Task) -> ModelConfig {
        ModelConfig {
            d_model: 8,
            n_layers: 2,
            n_heads: 2,
            mlp_ratio: 2,
            proj_dim: 2,
            head_hidden: 6,
            ..ModelConfig::new(2, 3, task)
        }
    }

    #[test]
    fn positional_encoding_values() {
        let pe = positional_encoding(4, 6).unwrap();
        for i in 0..3 {
            assert_eq!(pe.data()[2 * i], 0.0);
            assert_eq!(pe.data()[2 * i + 1], 1.0);
        }
        assert_abs_diff_eq!(pe.data()[6], 0.841471, epsilon = 1e-6);
        let big = positional_encoding(300, 32).unwrap();
        assert!(big.data().iter().all(|v| (-1.0..=1.0).contains(v)));
        assert!(matches!(positional_encoding(4, 5), Err(Error::Config(_))));
    }

    #[test]
    fn config_validation() {
        let mut cfg = tiny(Task::Regression);
        assert!(cfg.validate().is_ok());
        cfg.n_heads = 3;
        assert!(cfg.validate().is_err());
        let mut cfg = tiny(Task::Classification { classes: 1 });
        assert!(cfg.validate().is_err());
        cfg.task = Task::Regression;
        cfg.proj_dim = 9;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn config_round_trips_through_kv() {
        let cfg = tiny(Task::Classification { classes: 3 });
        let kv: BTreeMap<_, _> = cfg.to_kv().into_iter().collect();
        assert_eq!(ModelConfig::from_kv(&kv).unwrap(), cfg);
    }

    #[test]
    fn embedding_is_lookup_plus_positions() {
        let cfg = ModelConfig {
            k: 1,
            ..tiny(Task::Regression)
        };
        let mut model = Transformer::<f64>::new(cfg, 0).unwrap();
        let table = model.params().find("embed.table").unwrap();
        // row i = one-hot(i), truncated to the width
        let t = model.params_mut().get_mut(table);
        t.data_mut().fill(0.0);
        for i in 0..6 {
            t.data_mut()[i * 8 + i] = 1.0;
        }
        let pe = positional_encoding(3, 8).unwrap();
        let tokens = [2u32, 5, 0];
        let mut tape = Tape::inference(model.params());
        let e = model.embed(&mut tape, &[&tokens, &tokens]).unwrap();
        let out = tape.data(e);
        for s in 0..2 {
            for (j, &tok) in tokens.iter().enumerate() {
                for c in 0..8 {
                    let want = if c == tok as usize { 1.0 } else { 0.0 } + pe.data()[j * 8 + c];
                    assert_eq!(out[(s * 3 + j) * 8 + c], want);
                }
            }
        }
        let mut tape = Tape::inference(model.params());
        assert!(matches!(model.embed(&mut tape, &[&[0, 1, 6]]), Err(Error::Vocab { id: 6, .. })));
    }

    #[test]
    fn mask_row_receives_gradient() {
        let model = Transformer::<f64>::new(tiny(Task::Regression), 3).unwrap();
        let mask = crate::tokenizer::mask_id(2);
        let tokens = [mask, 7, mask];
        let mut tape = Tape::new(model.params());
        let out = model.forward(&mut tape, &[&tokens]).unwrap();
        let loss = model.loss(&mut tape, out, BatchTargets::Values(&[1.5])).unwrap();
        let mut grads = Gradients::zeros_like(model.params());
        tape.backward(loss, &mut grads).unwrap();
        let g = grads.get(model.params().find("embed.table").unwrap());
        let row = |r: usize| &g.data()[r * 8..(r + 1) * 8];
        assert!(row(mask as usize).iter().any(|&v| v != 0.0));
        assert!(row(7).iter().any(|&v| v != 0.0));
        assert!(row(8).iter().all(|&v| v == 0.0));
    }

    fn tiny_loss(model: &Transformer<f64>, batch: &[&[u32]], targets: BatchTargets<'_>) -> f64 {
        let mut tape = Tape::new(model.params());
        let out = model.forward(&mut tape, batch).unwrap();
        let loss = model.loss(&mut tape, out, targets).unwrap();
        tape.data(loss)[0]
    }

    #[test]
    fn full_model_gradients_match_central_differences() {
        let batch: [&[u32]; 2] = [&[0, 24, 25], &[13, 25, 7]];
        for (task, targets) in [
            (Task::Regression, BatchTargets::Values(&[0.4, -1.1])),
            (Task::Classification { classes: 3 }, BatchTargets::Classes(&[2, 0])),
        ] {
            let mut model = Transformer::<f64>::new(tiny(task), 8).unwrap();
            let mut grads = Gradients::zeros_like(model.params());
            let mut tape = Tape::new(model.params());
            let out = model.forward(&mut tape, &batch).unwrap();
            let loss = model.loss(&mut tape, out, targets).unwrap();
            tape.backward(loss, &mut grads).unwrap();
            drop(tape);
            let ids: Vec<_> = model.params().ids().collect();
            for id in ids {
                for i in 0..model.params().get(id).data().len() {
                    let h = 1e-6;
                    let orig = model.params().get(id).data()[i];
                    model.params_mut().get_mut(id).data_mut()[i] = orig + h;
                    let up = tiny_loss(&model, &batch, targets);
                    model.params_mut().get_mut(id).data_mut()[i] = orig - h;
                    let down = tiny_loss(&model, &batch, targets);
                    model.params_mut().get_mut(id).data_mut()[i] = orig;
                    let numeric = (up - down) / (2.0 * h);
                    let analytic = grads.get(id).data()[i];
                    let name = model.params().name(id);
                    assert!(
                        (numeric - analytic).abs() <= 1e-6 * (1.0 + numeric.abs()),
                        "{name}[{i}]: {analytic} vs {numeric}"
                    );
                }
            }
        }
    }

    fn zero_sublayers(model: &mut Transformer<f64>, block: usize) {
        for suffix in [
            "attn.qkv.weight",
            "attn.qkv.bias",
            "attn.out.weight",
            "attn.out.bias",
            "mlp.fc1.weight",
            "mlp.fc1.bias",
            "mlp.fc2.weight",
            "mlp.fc2.bias",
        ] {
            let id = model.params().find(&format!("block{block}.{suffix}")).unwrap();
            model.params_mut().get_mut(id).data_mut().fill(0.0);
        }
    }

    #[test]
    fn zeroed_block_is_identity() {
        let mut model = Transformer::<f64>::new(tiny(Task::Regression), 4).unwrap();
        zero_sublayers(&mut model, 0);
        let mut tape = Tape::inference(model.params());
        let x = model.embed(&mut tape, &[&[1, 2, 3], &[24, 0, 11]]).unwrap();
        let y = model.encoder_block(&mut tape, x, 0, 2).unwrap();
        assert_eq!(tape.data(x), tape.data(y));
        assert_eq!(tape.shape(x), tape.shape(y));
    }

    #[test]
    fn single_token_attention_is_projected_value() {
        let cfg = ModelConfig {
            seq_tokens: 1,
            ..tiny(Task::Regression)
        };
        let model = Transformer::<f64>::new(cfg, 5).unwrap();
        let p = model.params();
        let mut tape = Tape::inference(p);
        let x = model.embed(&mut tape, &[&[9]]).unwrap();
        let out = model.mha(&mut tape, x, 0, 1).unwrap();

        let xt = tape.to_tensor(x);
        let w = p.get(p.find("block0.attn.qkv.weight").unwrap());
        let qkv = xt.matmul(w).unwrap();
        let v = Tensor::from_vec(&[1, 8], qkv.data()[16..24].to_vec()).unwrap();
        let o = v.matmul(p.get(p.find("block0.attn.out.weight").unwrap())).unwrap();
        for (a, b) in tape.data(out).iter().zip(o.data()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn zero_query_weights_average_values() {
        let mut model = Transformer::<f64>::new(tiny(Task::Regression), 6).unwrap();
        let id = model.params().find("block0.attn.qkv.weight").unwrap();
        {
            let w = model.params_mut().get_mut(id);
            for row in w.data_mut().chunks_exact_mut(24) {
                row[..8].fill(0.0);
            }
        }
        let p = model.params();
        let mut tape = Tape::inference(p);
        let x = model.embed(&mut tape, &[&[3, 1, 4]]).unwrap();
        let qkv_w = tape.param(id);
        let qkv = tape.matmul(x, qkv_w).unwrap();
        let att = tape.attention(qkv, 1, 3, 2).unwrap();
        let qkv_v = tape.data(qkv).to_vec();
        for c in 0..8 {
            let mean = (0..3).map(|r| qkv_v[r * 24 + 16 + c]).sum::<f64>() / 3.0;
            for r in 0..3 {
                assert_abs_diff_eq!(tape.data(att)[r * 8 + c], mean, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn head_edge_cases() {
        let mut model = Transformer::<f64>::new(tiny(Task::Regression), 7).unwrap();
        for name in ["head.fc1.weight", "head.fc1.bias", "head.fc2.weight", "head.fc2.bias"] {
            let id = model.params().find(name).unwrap();
            model.params_mut().get_mut(id).data_mut().fill(0.0);
        }
        let preds = model.predict(&[&[1, 2, 3]]).unwrap();
        assert_eq!(preds, vec![PhenotypePrediction::Value(0.0)]);

        let mut model = Transformer::<f64>::new(tiny(Task::Classification { classes: 4 }), 8).unwrap();
        for name in ["head.fc2.weight", "head.fc2.bias"] {
            let id = model.params().find(name).unwrap();
            model.params_mut().get_mut(id).data_mut().fill(0.0);
        }
        let preds = model.predict(&[&[1, 2, 3]]).unwrap();
        match &preds[0] {
            PhenotypePrediction::Class { probabilities } => {
                assert!(probabilities.iter().all(|&p| (p - 0.25).abs() < 1e-15))
            }
            other => panic!("unexpected {other:?}"),
        }

        assert!(matches!(model.predict(&[&[1, 2]]), Err(Error::Shape { .. })));
    }

    #[test]
    fn flatten_is_position_ordered() {
        // Two tokens, projector width 1: swapping rows permutes the flattened vector.
        let cfg = ModelConfig {
            seq_tokens: 2,
            proj_dim: 1,
            n_layers: 0,
            ..tiny(Task::Regression)
        };
        let model = Transformer::<f64>::new(cfg, 9).unwrap();
        let mut tape = Tape::inference(model.params());
        let e = tape.constant(Tensor::from_rows(&[&[1.0; 8], &[-2.0; 8]]).unwrap());
        let swapped = tape.constant(Tensor::from_rows(&[&[-2.0; 8], &[1.0; 8]]).unwrap());
        let a = model.project_and_predict(&mut tape, e, 1).unwrap();
        let b = model.project_and_predict(&mut tape, swapped, 1).unwrap();
        assert_ne!(tape.data(a), tape.data(b));
    }

    #[test]
    fn output_shapes() {
        for (task, dim) in [(Task::Regression, 1), (Task::Classification { classes: 5 }, 5)] {
            let model = Transformer::<f32>::new(tiny(task), 1).unwrap();
            let mut tape = Tape::inference(model.params());
            let out = model.forward(&mut tape, &[&[0, 1, 2], &[3, 4, 5], &[6, 7, 8]]).unwrap();
            assert_eq!(tape.shape(out), &[3, dim]);
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(32))]
            #[test]
            fn class_probabilities_sum_to_one(
                tokens in prop::collection::vec(0u32..=25, 3),
                classes in 2usize..6,
                seed: u64,
            ) {
                let model = Transformer::<f32>::new(tiny(Task::Classification { classes }), seed).unwrap();
                match &model.predict(&[&tokens]).unwrap()[0] {
                    PhenotypePrediction::Class { probabilities } => {
                        prop_assert_eq!(probabilities.len(), classes);
                        prop_assert!(probabilities.iter().all(|&p| p >= 0.0));
                        prop_assert!((probabilities.iter().sum::<f64>() - 1.0).abs() < 1e-6);
                    }
                    other => prop_assert!(false, "unexpected {:?}", other),
                }
            }
        }
    }
}
