//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Nodes are appended in evaluation order, so the reverse of insertion order
//! is a valid reverse topological order. All activations are rank-2
//! `[rows x features]`; a batch of sequences is stacked along the rows.

use super::params::{Gradients, ParamId, ParamStore};
use super::tensor::{gemm, softmax_rows_in_place, MatRef, Real, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op<T> {
    Constant,
    Param(ParamId),
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Sum(Var),
    Reshape(Var),
    Gelu(Var),
    Relu(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    Embedding {
        table: Var,
        ids: Vec<u32>,
    },
    Attention {
        qkv: Var,
        batch: usize,
        seq: usize,
        heads: usize,
        probs: Vec<T>,
    },
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<T>,
    },
    Mse {
        pred: Var,
        targets: Vec<T>,
    },
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Constant => "constant",
            Op::Param(_) => "param",
            Op::MatMul(..) => "matmul",
            Op::AddBias(..) => "add_bias",
            Op::Add(..) => "add",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Sum(_) => "sum",
            Op::Reshape(_) => "reshape",
            Op::Gelu(_) => "gelu",
            Op::Relu(_) => "relu",
            Op::Softmax(_) => "softmax",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Embedding { .. } => "embedding",
            Op::Attention { .. } => "attention",
            Op::CrossEntropy { .. } => "cross_entropy",
            Op::Mse { .. } => "mse",
        }
    }
}

struct Node<T> {
    shape: Vec<usize>,
    /// Empty for parameter leaves, whose values live in the store.
    value: Vec<T>,
    op: Op<T>,
    requires_grad: bool,
}

pub struct Tape<'p, T: Real> {
    params: &'p ParamStore<T>,
    nodes: Vec<Node<T>>,
    grad_enabled: bool,
    checked: bool,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;

fn gelu<T: Real>(x: T) -> T {
    let c = T::from_f64_lossy(GELU_C);
    let a = T::from_f64_lossy(GELU_A);
    let half = T::from_f64_lossy(0.5);
    half * x * (T::one() + (c * (x + a * x * x * x)).fast_tanh())
}

fn gelu_grad<T: Real>(x: T) -> T {
    let c = T::from_f64_lossy(GELU_C);
    let a = T::from_f64_lossy(GELU_A);
    let half = T::from_f64_lossy(0.5);
    let three = T::from_f64_lossy(3.0);
    let t = (c * (x + a * x * x * x)).fast_tanh();
    half * (T::one() + t) + half * x * (T::one() - t * t) * c * (T::one() + three * a * x * x)
}

fn dims2(shape: &[usize], op: &'static str) -> Result<(usize, usize)> {
    match shape {
        [r, c] => Ok((*r, *c)),
        _ => Err(Error::shape(op, shape, &[])),
    }
}

impl<'p, T: Real> Tape<'p, T> {
    /// A tape that records everything needed for `backward`.
    pub fn new(params: &'p ParamStore<T>) -> Self {
        Tape {
            params,
            nodes: Vec::new(),
            grad_enabled: true,
            checked: false,
        }
    }

    /// Forward-only tape: nothing requires gradients and attention
    /// probabilities are not retained.
    pub fn inference(params: &'p ParamStore<T>) -> Self {
        Tape {
            grad_enabled: false,
            ..Tape::new(params)
        }
    }

    /// Fail any op whose output contains NaN or infinity.
    pub fn with_checks(mut self) -> Self {
        self.checked = true;
        self
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn data(&self, v: Var) -> &[T] {
        let node = &self.nodes[v.0];
        match node.op {
            Op::Param(id) => self.params.get(id).data(),
            _ => &node.value,
        }
    }

    pub fn to_tensor(&self, v: Var) -> Tensor<T> {
        Tensor::from_vec(self.shape(v), self.data(v).to_vec()).expect("node shape is consistent")
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn requires(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<T>, op: Op<T>, requires_grad: bool) -> Result<Var> {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        if self.checked && value.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numeric(format!("non-finite output from {}", op.name())));
        }
        self.nodes.push(Node {
            shape,
            value,
            op,
            requires_grad: requires_grad && self.grad_enabled,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        let shape = t.shape().to_vec();
        self.nodes.push(Node {
            shape,
            value: t.into_data(),
            op: Op::Constant,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        let shape = self.params.get(id).shape().to_vec();
        self.nodes.push(Node {
            shape,
            value: Vec::new(),
            op: Op::Param(id),
            requires_grad: self.grad_enabled,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, n) = dims2(self.shape(a), "matmul")?;
        let (n2, p) = dims2(self.shape(b), "matmul")?;
        if n != n2 {
            return Err(Error::shape("matmul", self.shape(a), self.shape(b)));
        }
        let mut out = vec![T::zero(); m * p];
        gemm(
            T::one(),
            MatRef::dense(self.data(a), m, n),
            MatRef::dense(self.data(b), n, p),
            T::zero(),
            &mut out,
            p,
            1,
        );
        let rg = self.requires(a) || self.requires(b);
        self.push(vec![m, p], out, Op::MatMul(a, b), rg)
    }

    /// `x [m x n] + bias [n]`, broadcast over rows.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (m, n) = dims2(self.shape(x), "add_bias")?;
        if self.data(bias).len() != n {
            return Err(Error::shape("add_bias", self.shape(x), self.shape(bias)));
        }
        let b = self.data(bias);
        let mut out = self.data(x).to_vec();
        for row in out.chunks_exact_mut(n) {
            for (o, &bj) in row.iter_mut().zip(b) {
                *o = *o + bj;
            }
        }
        let rg = self.requires(x) || self.requires(bias);
        self.push(vec![m, n], out, Op::AddBias(x, bias), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape("add", self.shape(a), self.shape(b)));
        }
        let out = self.data(a).iter().zip(self.data(b)).map(|(&x, &y)| x + y).collect();
        let rg = self.requires(a) || self.requires(b);
        self.push(self.shape(a).to_vec(), out, Op::Add(a, b), rg)
    }

    /// Element-wise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape("mul", self.shape(a), self.shape(b)));
        }
        let out = self.data(a).iter().zip(self.data(b)).map(|(&x, &y)| x * y).collect();
        let rg = self.requires(a) || self.requires(b);
        self.push(self.shape(a).to_vec(), out, Op::Mul(a, b), rg)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        let c = T::from_f64_lossy(c);
        let out = self.data(x).iter().map(|&v| v * c).collect();
        let rg = self.requires(x);
        self.push(self.shape(x).to_vec(), out, Op::Scale(x, c), rg)
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.data(x).iter().copied().sum();
        let rg = self.requires(x);
        self.push(Vec::new(), vec![s], Op::Sum(x), rg)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        if shape.iter().product::<usize>() != self.data(x).len() {
            return Err(Error::shape("reshape", self.shape(x), shape));
        }
        let out = self.data(x).to_vec();
        let rg = self.requires(x);
        self.push(shape.to_vec(), out, Op::Reshape(x), rg)
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        let out = self.data(x).iter().map(|&v| gelu(v)).collect();
        let rg = self.requires(x);
        self.push(self.shape(x).to_vec(), out, Op::Gelu(x), rg)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let out = self.data(x).iter().map(|&v| v.max(T::zero())).collect();
        let rg = self.requires(x);
        self.push(self.shape(x).to_vec(), out, Op::Relu(x), rg)
    }

    /// Softmax along the last axis.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let cols = self.shape(x).last().copied().unwrap_or(1);
        let mut out = self.data(x).to_vec();
        softmax_rows_in_place(&mut out, cols);
        let rg = self.requires(x);
        self.push(self.shape(x).to_vec(), out, Op::Softmax(x), rg)
    }

    /// Normalize each row to zero mean and unit variance, then apply `gain` and `bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let (m, n) = dims2(self.shape(x), "layer_norm")?;
        if n == 0 || self.data(gain).len() != n || self.data(bias).len() != n {
            return Err(Error::shape("layer_norm", self.shape(x), self.shape(gain)));
        }
        let eps = T::from_f64_lossy(eps);
        let inv_n = T::from_f64_lossy(1.0 / n as f64);
        let (g, b) = (self.data(gain), self.data(bias));
        let mut xhat = self.data(x).to_vec();
        let mut rstd = Vec::with_capacity(m);
        let mut out = vec![T::zero(); m * n];
        for (row, orow) in xhat.chunks_exact_mut(n).zip(out.chunks_exact_mut(n)) {
            let mean = row.iter().copied().sum::<T>() * inv_n;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_n;
            let r = (var + eps).sqrt().recip();
            for ((v, o), (&gj, &bj)) in row.iter_mut().zip(orow.iter_mut()).zip(g.iter().zip(b)) {
                *v = (*v - mean) * r;
                *o = *v * gj + bj;
            }
            rstd.push(r);
        }
        let rg = self.requires(x) || self.requires(gain) || self.requires(bias);
        let (xhat, rstd) = if rg { (xhat, rstd) } else { (Vec::new(), Vec::new()) };
        self.push(
            vec![m, n],
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
            rg,
        )
    }

    /// Gather rows of `table [vocab x width]`.
    pub fn embedding(&mut self, table: Var, ids: &[u32]) -> Result<Var> {
        let (vocab, width) = dims2(self.shape(table), "embedding")?;
        let t = self.data(table);
        let mut out = Vec::with_capacity(ids.len() * width);
        for &id in ids {
            if id as usize >= vocab {
                return Err(Error::Vocab { id, vocab });
            }
            let start = id as usize * width;
            out.extend_from_slice(&t[start..start + width]);
        }
        let rg = self.requires(table);
        self.push(
            vec![ids.len(), width],
            out,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
            rg,
        )
    }

    /// Multi-head scaled dot-product self-attention.
    ///
    /// `qkv` is `[batch*seq x 3*width]` holding the projected queries, keys
    /// and values side by side; head `h` uses columns `h*d..(h+1)*d` of each
    /// part, `d = width / heads`. Output is `[batch*seq x width]` with heads
    /// concatenated (before the output projection).
    pub fn attention(&mut self, qkv: Var, batch: usize, seq: usize, heads: usize) -> Result<Var> {
        let (rows, cols3) = dims2(self.shape(qkv), "attention")?;
        if rows != batch * seq || cols3 % 3 != 0 || heads == 0 || (cols3 / 3) % heads != 0 {
            return Err(Error::shape("attention", self.shape(qkv), &[batch, seq, heads]));
        }
        let width = cols3 / 3;
        let d = width / heads;
        let scale = T::from_f64_lossy(1.0 / (d as f64).sqrt());
        let rg = self.requires(qkv);
        let data = self.data(qkv);
        let mut out = vec![T::zero(); rows * width];
        let mut probs = if rg {
            vec![T::zero(); batch * heads * seq * seq]
        } else {
            Vec::new()
        };
        let mut scratch = if rg { Vec::new() } else { vec![T::zero(); seq * seq] };
        for b in 0..batch {
            let base = b * seq;
            for h in 0..heads {
                let view = |offset: usize| MatRef {
                    data: &data[base * cols3 + offset..],
                    rows: seq,
                    cols: d,
                    rs: cols3,
                    cs: 1,
                };
                let q = view(h * d);
                let k = view(width + h * d);
                let v = view(2 * width + h * d);
                let p = if rg {
                    let start = (b * heads + h) * seq * seq;
                    &mut probs[start..start + seq * seq]
                } else {
                    &mut scratch[..]
                };
                gemm(scale, q, k.t(), T::zero(), p, seq, 1);
                softmax_rows_in_place(p, seq);
                gemm(
                    T::one(),
                    MatRef::dense(p, seq, seq),
                    v,
                    T::zero(),
                    &mut out[base * width + h * d..],
                    width,
                    1,
                );
            }
        }
        self.push(
            vec![rows, width],
            out,
            Op::Attention {
                qkv,
                batch,
                seq,
                heads,
                probs,
            },
            rg,
        )
    }

    /// Mean cross-entropy of `logits [batch x classes]` against integer labels.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (batch, classes) = dims2(self.shape(logits), "cross_entropy")?;
        if labels.len() != batch || batch == 0 {
            return Err(Error::shape("cross_entropy", self.shape(logits), &[labels.len()]));
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::Label { label, classes });
        }
        let z = self.data(logits);
        let mut probs = z.to_vec();
        let mut total = T::zero();
        for (row, &label) in z.chunks_exact(classes).zip(labels) {
            let max = row.iter().fold(T::neg_infinity(), |m, &x| m.max(x));
            let lse = max + row.iter().map(|&x| (x - max).exp()).sum::<T>().ln();
            total = total + (lse - row[label]);
        }
        softmax_rows_in_place(&mut probs, classes);
        let loss = total / T::from_f64_lossy(batch as f64);
        let rg = self.requires(logits);
        self.push(
            Vec::new(),
            vec![loss],
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            rg,
        )
    }

    /// Mean squared error between every element of `pred` and `targets`.
    pub fn mse(&mut self, pred: Var, targets: &[f64]) -> Result<Var> {
        let p = self.data(pred);
        if p.len() != targets.len() || p.is_empty() {
            return Err(Error::shape("mse", self.shape(pred), &[targets.len()]));
        }
        let targets: Vec<T> = targets.iter().map(|&t| T::from_f64_lossy(t)).collect();
        let total: T = p.iter().zip(&targets).map(|(&a, &b)| (a - b) * (a - b)).sum();
        let loss = total / T::from_f64_lossy(p.len() as f64);
        let rg = self.requires(pred);
        self.push(Vec::new(), vec![loss], Op::Mse { pred, targets }, rg)
    }

    /// Accumulate d(loss)/d(param) into `grads` for every parameter reachable from `loss`.
    pub fn backward(&self, loss: Var, grads: &mut Gradients<T>) -> Result<()> {
        if self.data(loss).len() != 1 {
            return Err(Error::Rank(self.shape(loss).to_vec()));
        }
        if !self.requires(loss) {
            return Ok(());
        }
        let mut g: Vec<Option<Vec<T>>> = Vec::with_capacity(loss.0 + 1);
        g.resize_with(loss.0 + 1, || None);
        g[loss.0] = Some(vec![T::one()]);

        for i in (0..=loss.0).rev() {
            let Some(gi) = g[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Constant => {}
                Op::Param(id) => {
                    for (dst, &src) in grads.get_mut(*id).data_mut().iter_mut().zip(&gi) {
                        *dst = *dst + src;
                    }
                }
                &Op::MatMul(a, b) => {
                    let (m, n) = dims2(self.shape(a), "matmul")?;
                    let p = node.shape[1];
                    let gm = MatRef::dense(&gi, m, p);
                    if let Some(da) = self.grad_slot(&mut g, a) {
                        let bt = MatRef::dense(self.data(b), n, p).t();
                        gemm(T::one(), gm, bt, T::one(), da, n, 1);
                    }
                    if let Some(db) = self.grad_slot(&mut g, b) {
                        let at = MatRef::dense(self.data(a), m, n).t();
                        gemm(T::one(), at, gm, T::one(), db, p, 1);
                    }
                }
                &Op::AddBias(x, bias) => {
                    let n = node.shape[1];
                    if let Some(dx) = self.grad_slot(&mut g, x) {
                        axpy(dx, &gi, T::one());
                    }
                    if let Some(db) = self.grad_slot(&mut g, bias) {
                        for row in gi.chunks_exact(n) {
                            axpy(db, row, T::one());
                        }
                    }
                }
                &Op::Add(a, b) => {
                    if let Some(da) = self.grad_slot(&mut g, a) {
                        axpy(da, &gi, T::one());
                    }
                    if let Some(db) = self.grad_slot(&mut g, b) {
                        axpy(db, &gi, T::one());
                    }
                }
                &Op::Mul(a, b) => {
                    if let Some(da) = self.grad_slot(&mut g, a) {
                        for ((d, &gv), &bv) in da.iter_mut().zip(&gi).zip(self.data(b)) {
                            *d = *d + gv * bv;
                        }
                    }
                    if let Some(db) = self.grad_slot(&mut g, b) {
                        for ((d, &gv), &av) in db.iter_mut().zip(&gi).zip(self.data(a)) {
                            *d = *d + gv * av;
                        }
                    }
                }
                &Op::Scale(x, c) => {
                    if let Some(dx) = self.grad_slot(&mut g, x) {
                        axpy(dx, &gi, c);
                    }
                }
                &Op::Sum(x) => {
                    if let Some(dx) = self.grad_slot(&mut g, x) {
                        for d in dx.iter_mut() {
                            *d = *d + gi[0];
                        }
                    }
                }
                &Op::Reshape(x) => {
                    if let Some(dx) = self.grad_slot(&mut g, x) {
                        axpy(dx, &gi, T::one());
                    }
                }
                &Op::Gelu(x) => {
                    if let Some(dx) = self.grad_slot(&mut g, x) {
                        for ((d, &gv), &xv) in dx.iter_mut().zip(&gi).zip(self.data(x)) {
                            *d = *d + gv * gelu_grad(xv);
                        }
                    }
                }
                &Op::Relu(x) => {
                    if let Some(dx) = self.grad_slot(&mut g, x) {
                        for ((d, &gv), &xv) in dx.iter_mut().zip(&gi).zip(self.data(x)) {
                            if xv > T::zero() {
                                *d = *d + gv;
                            }
                        }
                    }
                }
                &Op::Softmax(x) => {
                    let cols = node.shape.last().copied().unwrap_or(1);
                    if let Some(dx) = self.grad_slot(&mut g, x) {
                        for ((drow, grow), yrow) in dx
                            .chunks_exact_mut(cols)
                            .zip(gi.chunks_exact(cols))
                            .zip(node.value.chunks_exact(cols))
                        {
                            let dot: T = grow.iter().zip(yrow).map(|(&a, &b)| a * b).sum();
                            for ((d, &gv), &y) in drow.iter_mut().zip(grow).zip(yrow) {
                                *d = *d + y * (gv - dot);
                            }
                        }
                    }
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    xhat,
                    rstd,
                } => {
                    let n = node.shape[1];
                    let inv_n = T::from_f64_lossy(1.0 / n as f64);
                    if let Some(dgain) = self.grad_slot(&mut g, *gain) {
                        for (grow, xrow) in gi.chunks_exact(n).zip(xhat.chunks_exact(n)) {
                            for ((d, &gv), &xv) in dgain.iter_mut().zip(grow).zip(xrow) {
                                *d = *d + gv * xv;
                            }
                        }
                    }
                    if let Some(dbias) = self.grad_slot(&mut g, *bias) {
                        for grow in gi.chunks_exact(n) {
                            axpy(dbias, grow, T::one());
                        }
                    }
                    let gain_v = self.data(*gain);
                    if let Some(dx) = self.grad_slot(&mut g, *x) {
                        let mut dxhat = vec![T::zero(); n];
                        for (((drow, grow), xrow), &r) in dx
                            .chunks_exact_mut(n)
                            .zip(gi.chunks_exact(n))
                            .zip(xhat.chunks_exact(n))
                            .zip(rstd)
                        {
                            for ((dh, &gv), &gj) in dxhat.iter_mut().zip(grow).zip(gain_v) {
                                *dh = gv * gj;
                            }
                            let mean_d = dxhat.iter().copied().sum::<T>() * inv_n;
                            let mean_dx =
                                dxhat.iter().zip(xrow).map(|(&a, &b)| a * b).sum::<T>() * inv_n;
                            for ((d, &dh), &xv) in drow.iter_mut().zip(&dxhat).zip(xrow) {
                                *d = *d + r * (dh - mean_d - xv * mean_dx);
                            }
                        }
                    }
                }
                Op::Embedding { table, ids } => {
                    let width = node.shape[1];
                    if let Some(dt) = self.grad_slot(&mut g, *table) {
                        for (&id, grow) in ids.iter().zip(gi.chunks_exact(width)) {
                            let start = id as usize * width;
                            axpy(&mut dt[start..start + width], grow, T::one());
                        }
                    }
                }
                &Op::Attention {
                    qkv,
                    batch,
                    seq,
                    heads,
                    ref probs,
                } => {
                    let width = node.shape[1];
                    let cols3 = 3 * width;
                    let d = width / heads;
                    let scale = T::from_f64_lossy(1.0 / (d as f64).sqrt());
                    let data = self.data(qkv);
                    let Some(dqkv) = self.grad_slot(&mut g, qkv) else {
                        continue;
                    };
                    let mut dp = vec![T::zero(); seq * seq];
                    for b in 0..batch {
                        let base = b * seq;
                        for h in 0..heads {
                            let view = |offset: usize| MatRef {
                                data: &data[base * cols3 + offset..],
                                rows: seq,
                                cols: d,
                                rs: cols3,
                                cs: 1,
                            };
                            let (qo, ko, vo) = (h * d, width + h * d, 2 * width + h * d);
                            let start = (b * heads + h) * seq * seq;
                            let p = &probs[start..start + seq * seq];
                            let pm = MatRef::dense(p, seq, seq);
                            let d_out = MatRef {
                                data: &gi[base * width + h * d..],
                                rows: seq,
                                cols: d,
                                rs: width,
                                cs: 1,
                            };
                            // dV += P^T dO
                            gemm(T::one(), pm.t(), d_out, T::one(), &mut dqkv[base * cols3 + vo..], cols3, 1);
                            // dP = dO V^T
                            gemm(T::one(), d_out, view(vo).t(), T::zero(), &mut dp, seq, 1);
                            // dS = P * (dP - rowsum(dP * P)), folded with the logit scale
                            for (drow, prow) in dp.chunks_exact_mut(seq).zip(p.chunks_exact(seq)) {
                                let dot: T = drow.iter().zip(prow).map(|(&a, &b)| a * b).sum();
                                for (dv, &pv) in drow.iter_mut().zip(prow) {
                                    *dv = pv * (*dv - dot) * scale;
                                }
                            }
                            let ds = MatRef::dense(&dp[..], seq, seq);
                            gemm(T::one(), ds, view(ko), T::one(), &mut dqkv[base * cols3 + qo..], cols3, 1);
                            gemm(T::one(), ds.t(), view(qo), T::one(), &mut dqkv[base * cols3 + ko..], cols3, 1);
                        }
                    }
                }
                Op::CrossEntropy {
                    logits,
                    labels,
                    probs,
                } => {
                    let classes = self.shape(*logits)[1];
                    let c = gi[0] / T::from_f64_lossy(labels.len() as f64);
                    if let Some(dz) = self.grad_slot(&mut g, *logits) {
                        for ((drow, prow), &label) in dz
                            .chunks_exact_mut(classes)
                            .zip(probs.chunks_exact(classes))
                            .zip(labels)
                        {
                            for (j, (d, &pv)) in drow.iter_mut().zip(prow).enumerate() {
                                let y = if j == label { T::one() } else { T::zero() };
                                *d = *d + c * (pv - y);
                            }
                        }
                    }
                }
                Op::Mse { pred, targets } => {
                    let c = gi[0] * T::from_f64_lossy(2.0 / targets.len() as f64);
                    let p = self.data(*pred);
                    if let Some(dp) = self.grad_slot(&mut g, *pred) {
                        for ((d, &pv), &t) in dp.iter_mut().zip(p).zip(targets) {
                            *d = *d + c * (pv - t);
                        }
                    }
                }
            }
        }
        Ok(())
    }

    fn grad_slot<'g>(&self, g: &'g mut [Option<Vec<T>>], v: Var) -> Option<&'g mut Vec<T>> {
        if !self.requires(v) {
            return None;
        }
        let numel = self.data(v).len();
        Some(g[v.0].get_or_insert_with(|| vec![T::zero(); numel]))
    }
}

fn axpy<T: Real>(dst: &mut [T], src: &[T], alpha: T) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d = *d + alpha * s;
    }
}
