//! Classifier built from state-space-kernel attention blocks.
//!
//! Each feature column becomes one token. A block normalizes its input,
//! projects keys and values, convolves the keys causally with the kernel
//! `κ(t) = A·exp(−B·t)` (evaluated as a linear-time recurrence), gates the
//! result with the values, and projects back onto the residual stream.

use super::{init_uniform, restore, Checkpoint, Classifier, ModelKind, ParamStore, CHECKPOINT_VERSION};
use crate::data::{ModelInput, TokenSource};
use crate::error::{Error, Result};
use crate::seed::rng;
use crate::tensor::{Graph, Tensor, Var};
use serde::{Deserialize, Serialize};

/// `κ(t) = A ⊙ exp(−B·t)` per channel, for the effective (positive) decay `B`.
pub fn kernel_eval(a: &[f64], b: &[f64], t: usize) -> Vec<f64> {
    a.iter().zip(b).map(|(a, b)| a * (-b * t as f64).exp()).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MambaConfig {
    pub vocab_sizes: Vec<usize>,
    pub n_continuous: usize,
    /// Token order over the input columns; categorical columns first when empty.
    #[serde(default)]
    pub token_order: Vec<TokenSource>,
    /// Token (residual stream) width.
    pub d_token: usize,
    /// Hidden width of the key/value channels.
    pub d_model: usize,
    /// Channel groups; must divide `d_model`.
    pub heads: usize,
    pub depth: usize,
    pub dropout: f64,
    /// Multiplies the gated value stream by `sigmoid(q)`.
    pub query_gate: bool,
    pub seed: u64,
}

impl MambaConfig {
    pub fn new(vocab_sizes: Vec<usize>, n_continuous: usize) -> Self {
        Self {
            vocab_sizes,
            n_continuous,
            token_order: Vec::new(),
            d_token: 32,
            d_model: 256,
            heads: 8,
            depth: 2,
            dropout: 0.3,
            query_gate: false,
            seed: 42,
        }
    }

    fn tokens(&self) -> Vec<TokenSource> {
        if !self.token_order.is_empty() {
            return self.token_order.clone();
        }
        let cat = (0..self.vocab_sizes.len()).map(TokenSource::Categorical);
        cat.chain((0..self.n_continuous).map(TokenSource::Continuous)).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_token == 0 || self.d_model == 0 || self.depth == 0 || self.heads == 0 {
            return Err(Error::config("mamba widths, depth and heads must be positive"));
        }
        if !self.d_model.is_multiple_of(self.heads) {
            return Err(Error::config(format!(
                "d_model {} is not divisible by {} heads",
                self.d_model, self.heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config("dropout must lie in [0,1)"));
        }
        let tokens = self.tokens();
        if tokens.is_empty() {
            return Err(Error::config("model needs at least one input column"));
        }
        let mut seen_cat = vec![false; self.vocab_sizes.len()];
        let mut seen_cont = vec![false; self.n_continuous];
        for t in &tokens {
            let slot = match *t {
                TokenSource::Categorical(i) => seen_cat.get_mut(i),
                TokenSource::Continuous(i) => seen_cont.get_mut(i),
            };
            match slot {
                Some(s) if !*s => *s = true,
                _ => return Err(Error::config(format!("bad token order entry {t:?}"))),
            }
        }
        if seen_cat.contains(&false) || seen_cont.contains(&false) {
            return Err(Error::config("token order does not cover every column"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
enum TokenParams {
    Categorical { column: usize, table: usize },
    Continuous { column: usize, dir: usize, bias: usize },
}

#[derive(Clone, Debug)]
struct BlockParams {
    ln_gain: usize,
    ln_bias: usize,
    w_q: Option<usize>,
    w_k: usize,
    w_v: usize,
    w_0: usize,
    a: usize,
    b_raw: usize,
}

#[derive(Clone, Debug)]
pub struct MambaAttention {
    cfg: MambaConfig,
    store: ParamStore,
    tokens: Vec<TokenParams>,
    position: usize,
    blocks: Vec<BlockParams>,
    head_w: usize,
    head_b: usize,
}

impl MambaAttention {
    /// Fresh model: variance-scaled projections, `A = 1`, `softplus(B_raw) = 0.5`
    /// and a zero classification head.
    pub fn new(cfg: MambaConfig) -> Result<Self> {
        cfg.validate()?;
        let mut r = rng(cfg.seed);
        let mut store = ParamStore::new();
        let (din, d) = (cfg.d_token, cfg.d_model);
        let order = cfg.tokens();
        let mut tokens = Vec::with_capacity(order.len());
        for t in &order {
            tokens.push(match *t {
                TokenSource::Categorical(i) => {
                    let v = cfg.vocab_sizes[i];
                    let table = store.add(format!("embed.cat{i}"), init_uniform(&mut r, &[v, din], 1));
                    TokenParams::Categorical { column: i, table }
                }
                TokenSource::Continuous(i) => {
                    let dir = store.add(format!("embed.cont{i}.dir"), init_uniform(&mut r, &[1, din], 1));
                    let bias = store.add(format!("embed.cont{i}.bias"), Tensor::zeros([din]));
                    TokenParams::Continuous { column: i, dir, bias }
                }
            });
        }
        let position = store.add("embed.position", init_uniform(&mut r, &[order.len(), din], 1));
        let b_init = (0.5f64.exp() - 1.0).ln();
        let mut blocks = Vec::with_capacity(cfg.depth);
        for l in 0..cfg.depth {
            let p = |s: &str| format!("block{l}.{s}");
            let ln_gain = store.add(p("ln_gain"), Tensor::full([din], 1.0));
            let ln_bias = store.add(p("ln_bias"), Tensor::zeros([din]));
            let w_q = cfg
                .query_gate
                .then(|| store.add(p("w_q"), init_uniform(&mut r, &[din, d], din)));
            let w_k = store.add(p("w_k"), init_uniform(&mut r, &[din, d], din));
            let w_v = store.add(p("w_v"), init_uniform(&mut r, &[din, d], din));
            let w_0 = store.add(p("w_0"), init_uniform(&mut r, &[d, din], d));
            let a = store.add(p("a"), Tensor::full([d], 1.0));
            let b_raw = store.add(p("b_raw"), Tensor::full([d], b_init));
            blocks.push(BlockParams {
                ln_gain,
                ln_bias,
                w_q,
                w_k,
                w_v,
                w_0,
                a,
                b_raw,
            });
        }
        let head_w = store.add("head.w", Tensor::zeros([din, 3]));
        let head_b = store.add("head.b", Tensor::zeros([3]));
        Ok(Self {
            cfg,
            store,
            tokens,
            position,
            blocks,
            head_w,
            head_b,
        })
    }

    pub fn config(&self) -> &MambaConfig {
        &self.cfg
    }

    pub fn n_tokens(&self) -> usize {
        self.tokens.len()
    }

    fn check_input(&self, input: &ModelInput) -> Result<()> {
        if input.vocab_sizes != self.cfg.vocab_sizes || input.n_continuous != self.cfg.n_continuous {
            return Err(Error::contract("input columns do not match the model configuration"));
        }
        Ok(())
    }

    /// `[rows × m × d_token]` token sequences.
    pub fn tokenize(&self, g: &mut Graph, vars: &[Var], input: &ModelInput, rows: &[usize]) -> Result<Var> {
        self.check_input(input)?;
        let b = rows.len();
        let mut parts = Vec::with_capacity(self.tokens.len());
        for t in &self.tokens {
            parts.push(match *t {
                TokenParams::Categorical { column, table } => {
                    let idx: Vec<usize> = rows.iter().map(|&r| input.categorical_row(r)[column]).collect();
                    g.gather_rows(vars[table], &idx)?
                }
                TokenParams::Continuous { column, dir, bias } => {
                    let x: Vec<f64> = rows.iter().map(|&r| input.continuous_row(r)[column]).collect();
                    let x = g.constant(Tensor::new([b, 1], x)?);
                    let scaled = g.matmul(x, vars[dir])?;
                    g.add(scaled, vars[bias])?
                }
            });
        }
        let seq = g.stack(&parts)?;
        g.add(seq, vars[self.position])
    }

    /// One block applied to `[B × T × d_token]`.
    pub fn block_forward(&self, g: &mut Graph, vars: &[Var], layer: usize, x: Var) -> Result<Var> {
        self.block_inner(g, vars, layer, x).map_err(|e| match e {
            Error::Numeric(m) => Error::Numeric(format!("block {layer}: {m}")),
            e => e,
        })
    }

    fn block_inner(&self, g: &mut Graph, vars: &[Var], layer: usize, x: Var) -> Result<Var> {
        let p = &self.blocks[layer];
        let s = g.shape(x).to_vec();
        if s.len() != 3 || s[2] != self.cfg.d_token {
            return Err(Error::dim(format!("block input {s:?}")));
        }
        let (b, t, din, d) = (s[0], s[1], s[2], self.cfg.d_model);
        let xn = g.layer_norm(x, vars[p.ln_gain], vars[p.ln_bias], 1e-5)?;
        let flat = g.reshape(xn, [b * t, din])?;
        let k = g.matmul(flat, vars[p.w_k])?;
        let k = g.reshape(k, [b, t, d])?;
        let v = g.matmul(flat, vars[p.w_v])?;
        let v = g.reshape(v, [b, t, d])?;
        let decay = g.softplus(vars[p.b_raw])?;
        let neg = g.neg(decay)?;
        let rate = g.exp(neg)?;
        let context = g.decay_scan(k, vars[p.a], rate)?;
        let mut h = g.mul(context, v)?;
        if let Some(w_q) = p.w_q {
            let q = g.matmul(flat, vars[w_q])?;
            let q = g.reshape(q, [b, t, d])?;
            let gate = g.sigmoid(q)?;
            h = g.mul(h, gate)?;
        }
        let h = g.dropout(h, self.cfg.dropout)?;
        let h = g.reshape(h, [b * t, d])?;
        let y = g.matmul(h, vars[p.w_0])?;
        let y = g.reshape(y, [b, t, din])?;
        g.add(y, x)
    }

    /// Applies one block to a single `[T × d_token]` sequence in evaluation mode.
    pub fn block_output(&self, layer: usize, x: &Tensor) -> Result<Tensor> {
        let s = x.shape().to_vec();
        if s.len() != 2 {
            return Err(Error::dim("block_output expects [T × d_token]"));
        }
        let mut g = Graph::new();
        let vars = self.store.bind(&mut g);
        let xv = g.constant(x.clone().reshaped([1, s[0], s[1]])?);
        let y = self.block_forward(&mut g, &vars, layer, xv)?;
        g.value(y).clone().reshaped(s)
    }

    pub fn checkpoint(&self) -> Result<Checkpoint> {
        Ok(Checkpoint {
            version: CHECKPOINT_VERSION,
            kind: ModelKind::MambaAttention,
            config: serde_json::to_value(&self.cfg)?,
            params: self.store.clone(),
        })
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        restore(ck, ModelKind::MambaAttention, Self::new, |m: &mut Self| &mut m.store)
    }
}

impl Classifier for MambaAttention {
    fn kind(&self) -> ModelKind {
        ModelKind::MambaAttention
    }

    fn params(&self) -> &ParamStore {
        &self.store
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn logits(&self, g: &mut Graph, vars: &[Var], input: &ModelInput, rows: &[usize]) -> Result<Var> {
        let mut x = self.tokenize(g, vars, input, rows)?;
        for l in 0..self.blocks.len() {
            x = self.block_forward(g, vars, l, x)?;
        }
        let pooled = g.mean_axis1(x)?;
        let z = g.matmul(pooled, vars[self.head_w])?;
        g.add(z, vars[self.head_b])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> MambaAttention {
        let mut cfg = MambaConfig::new(vec![3, 4], 2);
        cfg.d_token = 6;
        cfg.d_model = 8;
        cfg.heads = 2;
        MambaAttention::new(cfg).unwrap()
    }

    fn input() -> ModelInput {
        ModelInput {
            n_rows: 2,
            categorical: vec![0, 1, 2, 3],
            vocab_sizes: vec![3, 4],
            continuous: vec![0.5, -1.0, 0.0, 2.0],
            n_continuous: 2,
            labels: vec![0, 1],
        }
    }

    #[test]
    fn kernel_values() {
        assert!((kernel_eval(&[1.0], &[2f64.ln()], 1)[0] - 0.5).abs() < 1e-15);
        assert!((kernel_eval(&[2.0], &[1.0], 3)[0] - 2.0 * (-3f64).exp()).abs() < 1e-15);
        assert!((kernel_eval(&[1.0], &[1e-12], 50)[0] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn zero_head_gives_uniform_probabilities() {
        let p = tiny().predict_proba(&input()).unwrap();
        for row in p {
            for v in row {
                assert!((v - 1.0 / 3.0).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn heads_must_divide_width() {
        let mut cfg = MambaConfig::new(vec![3], 0);
        cfg.heads = 7;
        assert!(matches!(MambaAttention::new(cfg), Err(Error::Config(_))));
    }

    #[test]
    fn zero_continuous_value_gives_bias_plus_position() {
        let m = tiny();
        let mut g = Graph::new();
        let vars = m.params().bind(&mut g);
        let seq = m.tokenize(&mut g, &vars, &input(), &[1]).unwrap();
        // row 1, token 2 is continuous column 0 with value 0
        let tok = &g.value(seq).data()[2 * 6..3 * 6];
        let bias = m.params().by_name("embed.cont0.bias").unwrap().data();
        let pos = &m.params().by_name("embed.position").unwrap().data()[2 * 6..3 * 6];
        for j in 0..6 {
            assert_eq!(tok[j], bias[j] + pos[j]);
        }
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let m = tiny();
        let text = serde_json::to_string(&m.checkpoint().unwrap()).unwrap();
        let ck: Checkpoint = serde_json::from_str(&text).unwrap();
        let back = MambaAttention::from_checkpoint(&ck).unwrap();
        assert_eq!(back.params().checksum(), m.params().checksum());
    }
}
