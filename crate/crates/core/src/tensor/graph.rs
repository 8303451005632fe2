use super::{gemm, Tensor};
use crate::error::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::rc::Rc;

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Broadcast {
    Same,
    /// Right operand repeats with this period (bias-style: shape is a suffix).
    Suffix(usize),
    /// Right operand has a trailing 1 where the left has this many entries.
    RowScalar(usize),
}

#[derive(Clone, Copy, Debug)]
enum Unary {
    Neg,
    Exp,
    Sigmoid,
    Softplus,
    Silu,
    Scale(f64),
}

enum Op {
    Leaf,
    Add(Var, Var, Broadcast),
    Sub(Var, Var, Broadcast),
    Mul(Var, Var, Broadcast),
    Unary(Var, Unary),
    MatMul(Var, Var),
    BatchMatMul(Var, Var),
    TransposeLast2(Var),
    Permute0213(Var),
    Reshape(Var),
    Gather(Var, Rc<[usize]>),
    Stack(Vec<Var>),
    Concat(Vec<Var>),
    MeanAxis1(Var),
    Sum(Var),
    Mean(Var),
    Softmax {
        x: Var,
        outer: usize,
        len: usize,
        inner: usize,
    },
    // masked entries have probability zero, so the plain softmax backward applies
    MaskedSoftmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Dropout(Var, Vec<f64>),
    DecayScan {
        keys: Var,
        amp: Var,
        rate: Var,
        steps: usize,
    },
    SoftmaxCrossEntropy {
        logits: Var,
        labels: Rc<[usize]>,
        probs: Vec<f64>,
    },
}

struct Node {
    value: Tensor,
    grad: Option<Vec<f64>>,
    requires_grad: bool,
    op: Op,
}

/// Record-on-forward computation tape.
///
/// Nodes are appended in evaluation order, so inputs always precede their
/// consumers. [`Graph::backward`] walks the record in reverse and accumulates
/// gradients additively into every leaf that requires them.
pub struct Graph {
    nodes: Vec<Node>,
    training: bool,
    rng: ChaCha8Rng,
}

impl Graph {
    /// Evaluation-mode tape: dropout is the identity.
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            training: false,
            rng: ChaCha8Rng::seed_from_u64(0),
        }
    }

    /// Training-mode tape whose dropout masks are drawn from `seed`.
    pub fn training(seed: u64) -> Self {
        Self {
            nodes: Vec::new(),
            training: true,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn is_training(&self) -> bool {
        self.training
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var], what: &str) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::Numeric(format!("non-finite output from {what}")));
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn broadcast(&self, a: Var, b: Var) -> Result<Broadcast> {
        let sa = self.shape(a);
        let sb = self.shape(b);
        if sa == sb {
            return Ok(Broadcast::Same);
        }
        if sb.len() < sa.len() && sa.ends_with(sb) {
            return Ok(Broadcast::Suffix(self.value(b).len()));
        }
        if sa.len() == sb.len()
            && sb.last() == Some(&1)
            && sa[..sa.len() - 1] == sb[..sb.len() - 1]
        {
            return Ok(Broadcast::RowScalar(*sa.last().unwrap()));
        }
        Err(Error::dim(format!("cannot broadcast {sb:?} onto {sa:?}")))
    }

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        f: fn(f64, f64) -> f64,
    ) -> Result<(Tensor, Broadcast)> {
        let bc = self.broadcast(a, b)?;
        let av = self.value(a);
        let bv = self.value(b).data();
        let data: Vec<f64> = match bc {
            Broadcast::Same => av.data().iter().zip(bv).map(|(&x, &y)| f(x, y)).collect(),
            Broadcast::Suffix(p) => av
                .data()
                .iter()
                .enumerate()
                .map(|(i, &x)| f(x, bv[i % p]))
                .collect(),
            Broadcast::RowScalar(c) => av
                .data()
                .iter()
                .enumerate()
                .map(|(i, &x)| f(x, bv[i / c]))
                .collect(),
        };
        Ok((Tensor::new(av.shape().to_vec(), data)?, bc))
    }

    /// `a + b`; `b` may broadcast as a shape suffix or a trailing-1 column.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, bc) = self.binary(a, b, |x, y| x + y)?;
        self.push(t, Op::Add(a, b, bc), &[a, b], "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, bc) = self.binary(a, b, |x, y| x - y)?;
        self.push(t, Op::Sub(a, b, bc), &[a, b], "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, bc) = self.binary(a, b, |x, y| x * y)?;
        self.push(t, Op::Mul(a, b, bc), &[a, b], "mul")
    }

    fn unary(&mut self, a: Var, u: Unary, name: &str) -> Result<Var> {
        let av = self.value(a);
        let data = av.data().iter().map(|&x| unary_value(u, x)).collect();
        let t = Tensor::new(av.shape().to_vec(), data)?;
        self.push(t, Op::Unary(a, u), &[a], name)
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Unary::Neg, "neg")
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Unary::Exp, "exp")
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Unary::Sigmoid, "sigmoid")
    }

    pub fn softplus(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Unary::Softplus, "softplus")
    }

    /// `x · sigmoid(x)`, the smooth rectifier used by the feed-forward blocks.
    pub fn silu(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Unary::Silu, "silu")
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        self.unary(a, Unary::Scale(factor), "scale")
    }

    /// 2-D matrix product `[m×k] · [k×n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::dim(format!("matmul {sa:?} x {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.value(a).data(), false, self.value(b).data(), false, &mut out, 0.0);
        self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), &[a, b], "matmul")
    }

    /// Batched product `[N×m×k] · [N×k×n]`.
    pub fn batch_matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] || sa[2] != sb[1] {
            return Err(Error::dim(format!("batch_matmul {sa:?} x {sb:?}")));
        }
        let (bn, m, k, n) = (sa[0], sa[1], sa[2], sb[2]);
        let mut out = vec![0.0; bn * m * n];
        let (ad, bd) = (self.value(a).data(), self.value(b).data());
        for i in 0..bn {
            gemm(
                m,
                k,
                n,
                &ad[i * m * k..(i + 1) * m * k],
                false,
                &bd[i * k * n..(i + 1) * k * n],
                false,
                &mut out[i * m * n..(i + 1) * m * n],
                0.0,
            );
        }
        let t = Tensor::new(vec![bn, m, n], out)?;
        self.push(t, Op::BatchMatMul(a, b), &[a, b], "batch_matmul")
    }

    pub fn transpose_last2(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if s.len() < 2 {
            return Err(Error::dim("transpose needs rank >= 2"));
        }
        let (r, c) = (s[s.len() - 2], s[s.len() - 1]);
        let src = self.value(a).data();
        let mut out = vec![0.0; src.len()];
        for (blk, chunk) in src.chunks(r * c).enumerate() {
            let o = &mut out[blk * r * c..(blk + 1) * r * c];
            for i in 0..r {
                for j in 0..c {
                    o[j * r + i] = chunk[i * c + j];
                }
            }
        }
        let mut shape = s;
        let n = shape.len();
        shape.swap(n - 1, n - 2);
        self.push(Tensor::new(shape, out)?, Op::TransposeLast2(a), &[a], "transpose")
    }

    /// `[a,b,c,d] -> [a,c,b,d]`; splits or merges attention heads.
    pub fn permute_0213(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 4 {
            return Err(Error::dim(format!("permute_0213 needs rank 4, got {s:?}")));
        }
        let out = permute_0213(self.value(x).data(), s[0], s[1], s[2], s[3]);
        let t = Tensor::new(vec![s[0], s[2], s[1], s[3]], out)?;
        self.push(t, Op::Permute0213(x), &[x], "permute")
    }

    pub fn reshape(&mut self, x: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let t = self.value(x).clone().reshaped(shape)?;
        self.push(t, Op::Reshape(x), &[x], "reshape")
    }

    /// Selects rows of a 2-D tensor (embedding lookup).
    pub fn gather_rows(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let s = self.shape(table);
        if s.len() != 2 {
            return Err(Error::dim("gather_rows needs a 2-D table"));
        }
        let (rows, cols) = (s[0], s[1]);
        if indices.is_empty() {
            return Err(Error::dim("gather_rows with no indices"));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= rows) {
            return Err(Error::contract(format!("index {bad} out of range for {rows} rows")));
        }
        let src = self.value(table).data();
        let mut out = Vec::with_capacity(indices.len() * cols);
        for &i in indices {
            out.extend_from_slice(&src[i * cols..(i + 1) * cols]);
        }
        let t = Tensor::new(vec![indices.len(), cols], out)?;
        self.push(t, Op::Gather(table, indices.into()), &[table], "gather")
    }

    /// Stacks `m` tensors of shape `[B×D]` into `[B×m×D]`.
    pub fn stack(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or_else(|| Error::dim("stack of nothing"))?;
        let s = self.shape(*first).to_vec();
        if s.len() != 2 || parts.iter().any(|p| self.shape(*p) != s.as_slice()) {
            return Err(Error::dim("stack needs equal 2-D parts"));
        }
        let (b, d, m) = (s[0], s[1], parts.len());
        let mut out = vec![0.0; b * m * d];
        for (j, p) in parts.iter().enumerate() {
            let src = self.value(*p).data();
            for bi in 0..b {
                out[(bi * m + j) * d..(bi * m + j + 1) * d]
                    .copy_from_slice(&src[bi * d..(bi + 1) * d]);
            }
        }
        let t = Tensor::new(vec![b, m, d], out)?;
        self.push(t, Op::Stack(parts.to_vec()), parts, "stack")
    }

    /// Concatenates 2-D tensors along their last axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or_else(|| Error::dim("concat of nothing"))?;
        let b = self.shape(*first)[0];
        let mut widths = Vec::with_capacity(parts.len());
        for p in parts {
            let s = self.shape(*p);
            if s.len() != 2 || s[0] != b {
                return Err(Error::dim(format!("concat part {s:?} vs {b} rows")));
            }
            widths.push(s[1]);
        }
        let total: usize = widths.iter().sum();
        let mut out = vec![0.0; b * total];
        let mut off = 0;
        for (p, &w) in parts.iter().zip(&widths) {
            let src = self.value(*p).data();
            for r in 0..b {
                out[r * total + off..r * total + off + w].copy_from_slice(&src[r * w..(r + 1) * w]);
            }
            off += w;
        }
        let t = Tensor::new(vec![b, total], out)?;
        self.push(t, Op::Concat(parts.to_vec()), parts, "concat")
    }

    /// Mean over the middle axis of `[B×m×D]`.
    pub fn mean_axis1(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 3 {
            return Err(Error::dim("mean_axis1 needs rank 3"));
        }
        let (b, m, d) = (s[0], s[1], s[2]);
        let src = self.value(x).data();
        let mut out = vec![0.0; b * d];
        for bi in 0..b {
            let o = &mut out[bi * d..(bi + 1) * d];
            for t in 0..m {
                for (acc, v) in o.iter_mut().zip(&src[(bi * m + t) * d..(bi * m + t + 1) * d]) {
                    *acc += v;
                }
            }
            o.iter_mut().for_each(|v| *v /= m as f64);
        }
        let t = Tensor::new(vec![b, d], out)?;
        self.push(t, Op::MeanAxis1(x), &[x], "mean_axis1")
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(x), &[x], "sum")
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        let s = v.data().iter().sum::<f64>() / v.len() as f64;
        self.push(Tensor::scalar(s), Op::Mean(x), &[x], "mean")
    }

    /// Max-stabilized softmax along `axis`.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if axis >= s.len() {
            return Err(Error::dim(format!("softmax axis {axis} for shape {s:?}")));
        }
        let outer: usize = s[..axis].iter().product();
        let len = s[axis];
        let inner: usize = s[axis + 1..].iter().product();
        let src = self.value(x).data();
        let mut out = vec![0.0; src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| o * len * inner + j * inner + i;
                let max = (0..len).map(|j| src[at(j)]).fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for j in 0..len {
                    let e = (src[at(j)] - max).exp();
                    out[at(j)] = e;
                    z += e;
                }
                for j in 0..len {
                    out[at(j)] /= z;
                }
            }
        }
        let t = Tensor::new(s, out)?;
        self.push(t, Op::Softmax { x, outer, len, inner }, &[x], "softmax")
    }

    /// Softmax along the last axis where `mask[i] == false` forces an exact
    /// zero. The mask repeats with period `mask.len()` over the flattened
    /// input and must be a whole number of rows.
    pub fn masked_softmax(&mut self, x: Var, mask: Rc<[bool]>) -> Result<Var> {
        let v = self.value(x);
        let c = v.last_dim();
        if mask.is_empty() || !mask.len().is_multiple_of(c) || !v.len().is_multiple_of(mask.len()) {
            return Err(Error::dim("mask does not tile the input rows"));
        }
        let src = v.data();
        let mut out = vec![0.0; src.len()];
        for (r, row) in src.chunks(c).enumerate() {
            let moff = (r * c) % mask.len();
            let m = &mask[moff..moff + c];
            let max = row
                .iter()
                .zip(m)
                .filter(|(_, &keep)| keep)
                .map(|(&x, _)| x)
                .fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                return Err(Error::contract(format!("softmax row {r} is fully masked")));
            }
            let o = &mut out[r * c..(r + 1) * c];
            let mut z = 0.0;
            for j in 0..c {
                if m[j] {
                    o[j] = (row[j] - max).exp();
                    z += o[j];
                }
            }
            o.iter_mut().for_each(|v| *v /= z);
        }
        let t = Tensor::new(v.shape().to_vec(), out)?;
        self.push(t, Op::MaskedSoftmax(x), &[x], "masked_softmax")
    }

    /// Normalizes over the last axis (population variance), then applies a
    /// per-feature gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        if eps <= 0.0 {
            return Err(Error::contract("layer_norm eps must be positive"));
        }
        let v = self.value(x);
        let d = v.last_dim();
        if self.shape(gain) != [d] || self.shape(bias) != [d] {
            return Err(Error::dim("layer_norm gain/bias must match the last axis"));
        }
        let (g, b) = (self.value(gain).data(), self.value(bias).data());
        let rows = v.len() / d;
        let mut xhat = vec![0.0; v.len()];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; v.len()];
        for (r, row) in v.data().chunks(d).enumerate() {
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[r] = is;
            for j in 0..d {
                let h = (row[j] - mean) * is;
                xhat[r * d + j] = h;
                out[r * d + j] = h * g[j] + b[j];
            }
        }
        let t = Tensor::new(v.shape().to_vec(), out)?;
        let op = Op::LayerNorm {
            x,
            gain,
            bias,
            xhat,
            inv_std,
        };
        self.push(t, op, &[x, gain, bias], "layer_norm")
    }

    /// Inverted dropout: zeroes with probability `p` and rescales survivors
    /// by `1/(1-p)` on training tapes; the identity on evaluation tapes.
    pub fn dropout(&mut self, x: Var, p: f64) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::contract(format!("dropout rate {p} not in [0,1)")));
        }
        if !self.training || p == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 - p;
        let n = self.value(x).len();
        let mask: Vec<f64> = (0..n)
            .map(|_| if self.rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        let v = self.value(x);
        let data = v.data().iter().zip(&mask).map(|(a, m)| a * m).collect();
        let t = Tensor::new(v.shape().to_vec(), data)?;
        self.push(t, Op::Dropout(x, mask), &[x], "dropout")
    }

    /// Causal exponentially decaying sum over the second-to-last axis:
    /// `s_t = rate ⊙ s_{t-1} + amp ⊙ k_t`, i.e. `s_t = Σ_{τ≤t} amp ⊙ rate^{t-τ} ⊙ k_τ`.
    ///
    /// `keys` is `[.., T, D]`; `amp` and `rate` are `[D]`.
    pub fn decay_scan(&mut self, keys: Var, amp: Var, rate: Var) -> Result<Var> {
        let s = self.shape(keys).to_vec();
        if s.len() < 2 {
            return Err(Error::dim("decay_scan needs [.., T, D]"));
        }
        let d = s[s.len() - 1];
        let steps = s[s.len() - 2];
        if self.shape(amp) != [d] || self.shape(rate) != [d] {
            return Err(Error::dim("decay_scan amp/rate must be [D]"));
        }
        let out = decay_scan_values(
            self.value(keys).data(),
            self.value(amp).data(),
            self.value(rate).data(),
            steps,
        );
        let t = Tensor::new(s, out)?;
        let op = Op::DecayScan {
            keys,
            amp,
            rate,
            steps,
        };
        self.push(t, op, &[keys, amp, rate], "decay_scan")
    }

    /// Mean cross-entropy of `[N×C]` logits against class labels, computed
    /// with log-sum-exp stabilization.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let v = self.value(logits);
        if v.rank() != 2 || v.shape()[0] != labels.len() {
            return Err(Error::dim("cross entropy needs [N×C] logits and N labels"));
        }
        let c = v.last_dim();
        if let Some(&bad) = labels.iter().find(|&&y| y >= c) {
            return Err(Error::contract(format!("label {bad} >= class count {c}")));
        }
        let mut probs = vec![0.0; v.len()];
        let mut loss = 0.0;
        for (r, row) in v.data().chunks(c).enumerate() {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|x| (x - max).exp()).sum();
            let lse = max + z.ln();
            for j in 0..c {
                probs[r * c + j] = (row[j] - lse).exp();
            }
            loss += lse - row[labels[r]];
        }
        loss /= labels.len() as f64;
        let op = Op::SoftmaxCrossEntropy {
            logits,
            labels: labels.into(),
            probs,
        };
        self.push(Tensor::scalar(loss), op, &[logits], "cross_entropy")
    }

    /// Propagates d(loss)/d(node) to every reachable leaf that requires a
    /// gradient. Leaf gradients accumulate across calls until
    /// [`Graph::zero_grad`].
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(Error::contract("backward on an empty tape"));
        }
        if self.value(loss).len() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!("non-finite gradient at node {i}")));
            }
            if matches!(self.nodes[i].op, Op::Leaf) {
                match &mut self.nodes[i].grad {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                    slot => *slot = Some(g),
                }
                continue;
            }
            self.propagate(i, &g, &mut grads);
        }
        Ok(())
    }

    fn slot<'a>(&self, grads: &'a mut [Option<Vec<f64>>], v: Var) -> Option<&'a mut Vec<f64>> {
        if !self.nodes[v.0].requires_grad {
            return None;
        }
        let n = self.nodes[v.0].value.len();
        Some(grads[v.0].get_or_insert_with(|| vec![0.0; n]))
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b, bc) | Op::Sub(a, b, bc) => {
                let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
                if let Some(ga) = self.slot(grads, *a) {
                    ga.iter_mut().zip(g).for_each(|(x, y)| *x += y);
                }
                if let Some(gb) = self.slot(grads, *b) {
                    reduce_broadcast(*bc, g, gb, |_, y| sign * y);
                }
            }
            Op::Mul(a, b, bc) => {
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                if let Some(ga) = self.slot(grads, *a) {
                    for (k, x) in ga.iter_mut().enumerate() {
                        let bi = match bc {
                            Broadcast::Same => k,
                            Broadcast::Suffix(p) => k % p,
                            Broadcast::RowScalar(c) => k / c,
                        };
                        *x += g[k] * bv[bi];
                    }
                }
                if let Some(gb) = self.slot(grads, *b) {
                    reduce_broadcast(*bc, g, gb, |k, y| y * av[k]);
                }
            }
            Op::Unary(a, u) => {
                let av = self.value(*a).data();
                let out = node.value.data();
                if let Some(ga) = self.slot(grads, *a) {
                    for k in 0..ga.len() {
                        ga[k] += g[k] * unary_derivative(*u, av[k], out[k]);
                    }
                }
            }
            Op::MatMul(a, b) => {
                let (m, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                let n = self.shape(*b)[1];
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if let Some(ga) = self.slot(grads, *a) {
                    gemm(m, n, k, g, false, bv, true, ga, 1.0);
                }
                if let Some(gb) = self.slot(grads, *b) {
                    gemm(k, m, n, av, true, g, false, gb, 1.0);
                }
            }
            Op::BatchMatMul(a, b) => {
                let sa = self.shape(*a);
                let (bn, m, k) = (sa[0], sa[1], sa[2]);
                let n = self.shape(*b)[2];
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if let Some(ga) = self.slot(grads, *a) {
                    for t in 0..bn {
                        gemm(
                            m,
                            n,
                            k,
                            &g[t * m * n..(t + 1) * m * n],
                            false,
                            &bv[t * k * n..(t + 1) * k * n],
                            true,
                            &mut ga[t * m * k..(t + 1) * m * k],
                            1.0,
                        );
                    }
                }
                if let Some(gb) = self.slot(grads, *b) {
                    for t in 0..bn {
                        gemm(
                            k,
                            m,
                            n,
                            &av[t * m * k..(t + 1) * m * k],
                            true,
                            &g[t * m * n..(t + 1) * m * n],
                            false,
                            &mut gb[t * k * n..(t + 1) * k * n],
                            1.0,
                        );
                    }
                }
            }
            Op::TransposeLast2(a) => {
                let s = node.value.shape();
                let (r, c) = (s[s.len() - 2], s[s.len() - 1]);
                if let Some(ga) = self.slot(grads, *a) {
                    // output is [.., r, c]; input is [.., c, r]
                    for (blk, chunk) in g.chunks(r * c).enumerate() {
                        let o = &mut ga[blk * r * c..(blk + 1) * r * c];
                        for i in 0..r {
                            for j in 0..c {
                                o[j * r + i] += chunk[i * c + j];
                            }
                        }
                    }
                }
            }
            Op::Permute0213(x) => {
                let s = node.value.shape();
                let back = permute_0213(g, s[0], s[1], s[2], s[3]);
                if let Some(gx) = self.slot(grads, *x) {
                    gx.iter_mut().zip(&back).for_each(|(a, b)| *a += b);
                }
            }
            Op::Reshape(x) => {
                if let Some(gx) = self.slot(grads, *x) {
                    gx.iter_mut().zip(g).for_each(|(a, b)| *a += b);
                }
            }
            Op::Gather(table, idx) => {
                let cols = self.shape(*table)[1];
                if let Some(gt) = self.slot(grads, *table) {
                    for (r, &i) in idx.iter().enumerate() {
                        for j in 0..cols {
                            gt[i * cols + j] += g[r * cols + j];
                        }
                    }
                }
            }
            Op::Stack(parts) => {
                let s = node.value.shape();
                let (b, m, d) = (s[0], s[1], s[2]);
                for (j, p) in parts.iter().enumerate() {
                    if let Some(gp) = self.slot(grads, *p) {
                        for bi in 0..b {
                            let src = &g[(bi * m + j) * d..(bi * m + j + 1) * d];
                            for (a, v) in gp[bi * d..(bi + 1) * d].iter_mut().zip(src) {
                                *a += v;
                            }
                        }
                    }
                }
            }
            Op::Concat(parts) => {
                let total = node.value.last_dim();
                let rows = node.value.shape()[0];
                let mut off = 0;
                for p in parts {
                    let w = self.shape(*p)[1];
                    if let Some(gp) = self.slot(grads, *p) {
                        for r in 0..rows {
                            let src = &g[r * total + off..r * total + off + w];
                            for (a, v) in gp[r * w..(r + 1) * w].iter_mut().zip(src) {
                                *a += v;
                            }
                        }
                    }
                    off += w;
                }
            }
            Op::MeanAxis1(x) => {
                let s = self.shape(*x);
                let (b, m, d) = (s[0], s[1], s[2]);
                if let Some(gx) = self.slot(grads, *x) {
                    for bi in 0..b {
                        for t in 0..m {
                            for j in 0..d {
                                gx[(bi * m + t) * d + j] += g[bi * d + j] / m as f64;
                            }
                        }
                    }
                }
            }
            Op::Sum(x) => {
                if let Some(gx) = self.slot(grads, *x) {
                    gx.iter_mut().for_each(|a| *a += g[0]);
                }
            }
            Op::Mean(x) => {
                if let Some(gx) = self.slot(grads, *x) {
                    let n = gx.len() as f64;
                    gx.iter_mut().for_each(|a| *a += g[0] / n);
                }
            }
            Op::Softmax {
                x,
                outer,
                len,
                inner,
            } => {
                let p = node.value.data();
                if let Some(gx) = self.slot(grads, *x) {
                    for o in 0..*outer {
                        for i in 0..*inner {
                            let at = |j: usize| o * len * inner + j * inner + i;
                            let dot: f64 = (0..*len).map(|j| p[at(j)] * g[at(j)]).sum();
                            for j in 0..*len {
                                gx[at(j)] += p[at(j)] * (g[at(j)] - dot);
                            }
                        }
                    }
                }
            }
            Op::MaskedSoftmax(x) => {
                let p = node.value.data();
                let c = node.value.last_dim();
                if let Some(gx) = self.slot(grads, *x) {
                    for r in 0..p.len() / c {
                        let (pr, gr) = (&p[r * c..(r + 1) * c], &g[r * c..(r + 1) * c]);
                        let dot: f64 = pr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for j in 0..c {
                            gx[r * c + j] += pr[j] * (gr[j] - dot);
                        }
                    }
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let d = node.value.last_dim();
                let gv = self.value(*gain).data();
                if let Some(gg) = self.slot(grads, *gain) {
                    for (k, v) in g.iter().enumerate() {
                        gg[k % d] += v * xhat[k];
                    }
                }
                if let Some(gb) = self.slot(grads, *bias) {
                    for (k, v) in g.iter().enumerate() {
                        gb[k % d] += v;
                    }
                }
                if let Some(gx) = self.slot(grads, *x) {
                    let df = d as f64;
                    for (r, is) in inv_std.iter().enumerate() {
                        let rg = &g[r * d..(r + 1) * d];
                        let rh = &xhat[r * d..(r + 1) * d];
                        let mut sum_dh = 0.0;
                        let mut sum_dh_h = 0.0;
                        for j in 0..d {
                            let dh = rg[j] * gv[j];
                            sum_dh += dh;
                            sum_dh_h += dh * rh[j];
                        }
                        for j in 0..d {
                            let dh = rg[j] * gv[j];
                            gx[r * d + j] += is / df * (df * dh - sum_dh - rh[j] * sum_dh_h);
                        }
                    }
                }
            }
            Op::Dropout(x, mask) => {
                if let Some(gx) = self.slot(grads, *x) {
                    for k in 0..gx.len() {
                        gx[k] += g[k] * mask[k];
                    }
                }
            }
            Op::DecayScan {
                keys,
                amp,
                rate,
                steps,
            } => {
                let kv = self.value(*keys).data();
                let av = self.value(*amp).data();
                let rv = self.value(*rate).data();
                let out = node.value.data();
                let d = av.len();
                let t_len = *steps;
                // adjoint of s_t including every later step: G_t = g_t + rate ⊙ G_{t+1}
                let mut adj = vec![0.0; g.len()];
                for blk in 0..g.len() / (t_len * d) {
                    let base = blk * t_len * d;
                    for t in (0..t_len).rev() {
                        for j in 0..d {
                            let at = base + t * d + j;
                            let carry = if t + 1 < t_len { rv[j] * adj[at + d] } else { 0.0 };
                            adj[at] = g[at] + carry;
                        }
                    }
                }
                if let Some(gk) = self.slot(grads, *keys) {
                    for (k, v) in gk.iter_mut().enumerate() {
                        *v += av[k % d] * adj[k];
                    }
                }
                if let Some(ga) = self.slot(grads, *amp) {
                    for (k, a) in adj.iter().enumerate() {
                        ga[k % d] += a * kv[k];
                    }
                }
                if let Some(gr) = self.slot(grads, *rate) {
                    for blk in 0..g.len() / (t_len * d) {
                        let base = blk * t_len * d;
                        for t in 1..t_len {
                            for j in 0..d {
                                let at = base + t * d + j;
                                gr[j] += adj[at] * out[at - d];
                            }
                        }
                    }
                }
            }
            Op::SoftmaxCrossEntropy {
                logits,
                labels,
                probs,
            } => {
                let c = self.value(*logits).last_dim();
                let n = labels.len() as f64;
                if let Some(gl) = self.slot(grads, *logits) {
                    for (r, &y) in labels.iter().enumerate() {
                        for j in 0..c {
                            let onehot = if j == y { 1.0 } else { 0.0 };
                            gl[r * c + j] += g[0] * (probs[r * c + j] - onehot) / n;
                        }
                    }
                }
            }
        }
    }
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

fn reduce_broadcast(bc: Broadcast, g: &[f64], gb: &mut [f64], f: impl Fn(usize, f64) -> f64) {
    match bc {
        Broadcast::Same => {
            for (k, v) in g.iter().enumerate() {
                gb[k] += f(k, *v);
            }
        }
        Broadcast::Suffix(p) => {
            for (k, v) in g.iter().enumerate() {
                gb[k % p] += f(k, *v);
            }
        }
        Broadcast::RowScalar(c) => {
            for (k, v) in g.iter().enumerate() {
                gb[k / c] += f(k, *v);
            }
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    // ln(1 + e^x) without overflow
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn unary_value(u: Unary, x: f64) -> f64 {
    match u {
        Unary::Neg => -x,
        Unary::Exp => x.exp(),
        Unary::Sigmoid => sigmoid(x),
        Unary::Softplus => softplus(x),
        Unary::Silu => x * sigmoid(x),
        Unary::Scale(c) => c * x,
    }
}

fn unary_derivative(u: Unary, x: f64, y: f64) -> f64 {
    match u {
        Unary::Neg => -1.0,
        Unary::Exp => y,
        Unary::Sigmoid => y * (1.0 - y),
        Unary::Softplus => sigmoid(x),
        Unary::Silu => {
            let s = sigmoid(x);
            s * (1.0 + x * (1.0 - s))
        }
        Unary::Scale(c) => c,
    }
}

fn permute_0213(src: &[f64], a: usize, b: usize, c: usize, d: usize) -> Vec<f64> {
    let mut out = vec![0.0; src.len()];
    for i in 0..a {
        for j in 0..b {
            for k in 0..c {
                let from = ((i * b + j) * c + k) * d;
                let to = ((i * c + k) * b + j) * d;
                out[to..to + d].copy_from_slice(&src[from..from + d]);
            }
        }
    }
    out
}

/// Linear-time evaluation of the causal decaying sum used by
/// [`Graph::decay_scan`]. `keys` is a whole number of `[steps × D]` blocks.
pub fn decay_scan_values(keys: &[f64], amp: &[f64], rate: &[f64], steps: usize) -> Vec<f64> {
    let d = amp.len();
    let mut out = vec![0.0; keys.len()];
    for blk in 0..keys.len() / (steps * d) {
        let base = blk * steps * d;
        for t in 0..steps {
            for j in 0..d {
                let at = base + t * d + j;
                let prev = if t > 0 { rate[j] * out[at - d] } else { 0.0 };
                out[at] = prev + amp[j] * keys[at];
            }
        }
    }
    out
}
