//! Column-embedding transformer for mixed categorical and continuous rows.
//!
//! Categorical values are embedded per column (value embedding plus a
//! column-identifier embedding) and contextualized by post-norm
//! self-attention layers. The flattened contextual embeddings are
//! concatenated with the continuous features and classified by an MLP.

use super::{init_uniform, restore, Checkpoint, Classifier, ModelKind, ParamStore, CHECKPOINT_VERSION};
use crate::data::ModelInput;
use crate::error::{Error, Result};
use crate::seed::rng;
use crate::tensor::{Graph, Tensor, Var};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TabTransformerConfig {
    pub vocab_sizes: Vec<usize>,
    pub n_continuous: usize,
    pub embed_dim: usize,
    pub heads: usize,
    pub layers: usize,
    pub ff_dim: usize,
    pub mlp_hidden: Vec<usize>,
    pub dropout: f64,
    /// Nonlinearity of the feed-forward blocks and the MLP head.
    pub activation: String,
    pub seed: u64,
}

impl TabTransformerConfig {
    pub fn new(vocab_sizes: Vec<usize>, n_continuous: usize) -> Self {
        Self {
            vocab_sizes,
            n_continuous,
            embed_dim: 64,
            heads: 4,
            layers: 2,
            ff_dim: 128,
            mlp_hidden: vec![128, 64],
            dropout: 0.1,
            activation: "silu".into(),
            seed: 42,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || self.heads == 0 || self.ff_dim == 0 {
            return Err(Error::config("tab_transformer widths and heads must be positive"));
        }
        if !self.embed_dim.is_multiple_of(self.heads) {
            return Err(Error::config(format!(
                "embed_dim {} is not divisible by {} heads",
                self.embed_dim, self.heads
            )));
        }
        if self.mlp_hidden.contains(&0) {
            return Err(Error::config("MLP hidden sizes must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config("dropout must lie in [0,1)"));
        }
        if self.activation != "silu" {
            return Err(Error::config(format!("unsupported activation {:?}", self.activation)));
        }
        if self.vocab_sizes.is_empty() && self.n_continuous == 0 {
            return Err(Error::config("model needs at least one input column"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct Linear {
    w: usize,
    b: usize,
}

impl Linear {
    fn new(store: &mut ParamStore, r: &mut ChaCha8Rng, name: &str, fan_in: usize, fan_out: usize) -> Self {
        Self {
            w: store.add(format!("{name}.w"), init_uniform(r, &[fan_in, fan_out], fan_in)),
            b: store.add(format!("{name}.b"), Tensor::zeros([fan_out])),
        }
    }

    fn apply(&self, g: &mut Graph, vars: &[Var], x: Var) -> Result<Var> {
        let y = g.matmul(x, vars[self.w])?;
        g.add(y, vars[self.b])
    }
}

#[derive(Clone, Debug)]
struct Norm {
    gain: usize,
    bias: usize,
}

impl Norm {
    fn new(store: &mut ParamStore, name: &str, d: usize) -> Self {
        Self {
            gain: store.add(format!("{name}.gain"), Tensor::full([d], 1.0)),
            bias: store.add(format!("{name}.bias"), Tensor::zeros([d])),
        }
    }

    fn apply(&self, g: &mut Graph, vars: &[Var], x: Var) -> Result<Var> {
        g.layer_norm(x, vars[self.gain], vars[self.bias], 1e-5)
    }
}

#[derive(Clone, Debug)]
struct Layer {
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
    norm1: Norm,
    ff1: Linear,
    ff2: Linear,
    norm2: Norm,
}

#[derive(Clone, Debug)]
pub struct TabTransformer {
    cfg: TabTransformerConfig,
    store: ParamStore,
    tables: Vec<usize>,
    column_ids: Option<usize>,
    layers: Vec<Layer>,
    mlp: Vec<Linear>,
    out: Linear,
}

impl TabTransformer {
    pub fn new(cfg: TabTransformerConfig) -> Result<Self> {
        cfg.validate()?;
        let mut r = rng(cfg.seed);
        let mut store = ParamStore::new();
        let (e, m) = (cfg.embed_dim, cfg.vocab_sizes.len());
        let tables = cfg
            .vocab_sizes
            .iter()
            .enumerate()
            .map(|(j, &v)| store.add(format!("embed.cat{j}"), init_uniform(&mut r, &[v, e], 1)))
            .collect();
        let column_ids = (m > 0).then(|| store.add("embed.column", init_uniform(&mut r, &[m, e], 1)));
        let layers = if m > 0 {
            (0..cfg.layers)
                .map(|l| {
                    let n = |s: &str| format!("layer{l}.{s}");
                    Layer {
                        q: Linear::new(&mut store, &mut r, &n("q"), e, e),
                        k: Linear::new(&mut store, &mut r, &n("k"), e, e),
                        v: Linear::new(&mut store, &mut r, &n("v"), e, e),
                        o: Linear::new(&mut store, &mut r, &n("o"), e, e),
                        norm1: Norm::new(&mut store, &n("norm1"), e),
                        ff1: Linear::new(&mut store, &mut r, &n("ff1"), e, cfg.ff_dim),
                        ff2: Linear::new(&mut store, &mut r, &n("ff2"), cfg.ff_dim, e),
                        norm2: Norm::new(&mut store, &n("norm2"), e),
                    }
                })
                .collect()
        } else {
            Vec::new()
        };
        let mut width = m * e + cfg.n_continuous;
        let mut mlp = Vec::with_capacity(cfg.mlp_hidden.len());
        for (i, &h) in cfg.mlp_hidden.iter().enumerate() {
            mlp.push(Linear::new(&mut store, &mut r, &format!("mlp{i}"), width, h));
            width = h;
        }
        let out = Linear::new(&mut store, &mut r, "out", width, 3);
        Ok(Self {
            cfg,
            store,
            tables,
            column_ids,
            layers,
            mlp,
            out,
        })
    }

    pub fn config(&self) -> &TabTransformerConfig {
        &self.cfg
    }

    fn check_input(&self, input: &ModelInput) -> Result<()> {
        if input.vocab_sizes != self.cfg.vocab_sizes || input.n_continuous != self.cfg.n_continuous {
            return Err(Error::contract("input columns do not match the model configuration"));
        }
        Ok(())
    }

    /// `[rows × m_cat × embed_dim]`: value embedding plus column identifier.
    pub fn column_embed(&self, g: &mut Graph, vars: &[Var], input: &ModelInput, rows: &[usize]) -> Result<Var> {
        self.check_input(input)?;
        let ids = self
            .column_ids
            .ok_or_else(|| Error::contract("model has no categorical columns"))?;
        let mut parts = Vec::with_capacity(self.tables.len());
        for (j, &t) in self.tables.iter().enumerate() {
            let idx: Vec<usize> = rows.iter().map(|&r| input.categorical_row(r)[j]).collect();
            parts.push(g.gather_rows(vars[t], &idx)?);
        }
        let seq = g.stack(&parts)?;
        g.add(seq, vars[ids])
    }

    /// One post-norm transformer layer on `[B × m × e]`. Returns the layer
    /// output and the attention weights `[B·heads × m × m]`.
    pub fn self_attention_layer(&self, g: &mut Graph, vars: &[Var], layer: usize, x: Var) -> Result<(Var, Var)> {
        let p = &self.layers[layer];
        let s = g.shape(x).to_vec();
        let (b, m, e) = (s[0], s[1], s[2]);
        let h = self.cfg.heads;
        let dh = e / h;
        let flat = g.reshape(x, [b * m, e])?;
        let split = |g: &mut Graph, lin: &Linear| -> Result<Var> {
            let y = lin.apply(g, vars, flat)?;
            let y = g.reshape(y, [b, m, h, dh])?;
            let y = g.permute_0213(y)?;
            g.reshape(y, [b * h, m, dh])
        };
        let q = split(g, &p.q)?;
        let k = split(g, &p.k)?;
        let v = split(g, &p.v)?;
        let kt = g.transpose_last2(k)?;
        let scores = g.batch_matmul(q, kt)?;
        let scores = g.scale(scores, 1.0 / (dh as f64).sqrt())?;
        let att = g.softmax(scores, 2)?;
        let ctx = g.batch_matmul(att, v)?;
        let ctx = g.reshape(ctx, [b, h, m, dh])?;
        let ctx = g.permute_0213(ctx)?;
        let ctx = g.reshape(ctx, [b * m, e])?;
        let a = p.o.apply(g, vars, ctx)?;
        let a = g.dropout(a, self.cfg.dropout)?;
        let x1 = g.add(flat, a)?;
        let x1 = p.norm1.apply(g, vars, x1)?;
        let f = p.ff1.apply(g, vars, x1)?;
        let f = g.silu(f)?;
        let f = g.dropout(f, self.cfg.dropout)?;
        let f = p.ff2.apply(g, vars, f)?;
        let f = g.dropout(f, self.cfg.dropout)?;
        let x2 = g.add(x1, f)?;
        let x2 = p.norm2.apply(g, vars, x2)?;
        Ok((g.reshape(x2, [b, m, e])?, att))
    }

    /// Contextual embeddings `[rows × m_cat × e]` after all layers.
    pub fn contextual(&self, g: &mut Graph, vars: &[Var], input: &ModelInput, rows: &[usize]) -> Result<Var> {
        let mut x = self.column_embed(g, vars, input, rows)?;
        for l in 0..self.layers.len() {
            x = self.self_attention_layer(g, vars, l, x)?.0;
        }
        Ok(x)
    }

    /// Per-layer attention weights `[heads × m × m]` for one row.
    pub fn attention_weights(&self, input: &ModelInput, row: usize) -> Result<Vec<Tensor>> {
        let mut g = Graph::new();
        let vars = self.store.bind(&mut g);
        let mut x = self.column_embed(&mut g, &vars, input, &[row])?;
        let mut out = Vec::with_capacity(self.layers.len());
        for l in 0..self.layers.len() {
            let (y, att) = self.self_attention_layer(&mut g, &vars, l, x)?;
            out.push(g.value(att).clone());
            x = y;
        }
        Ok(out)
    }

    pub fn checkpoint(&self) -> Result<Checkpoint> {
        Ok(Checkpoint {
            version: CHECKPOINT_VERSION,
            kind: ModelKind::TabTransformer,
            config: serde_json::to_value(&self.cfg)?,
            params: self.store.clone(),
        })
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        restore(ck, ModelKind::TabTransformer, Self::new, |m: &mut Self| &mut m.store)
    }
}

impl Classifier for TabTransformer {
    fn kind(&self) -> ModelKind {
        ModelKind::TabTransformer
    }

    fn params(&self) -> &ParamStore {
        &self.store
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn logits(&self, g: &mut Graph, vars: &[Var], input: &ModelInput, rows: &[usize]) -> Result<Var> {
        self.check_input(input)?;
        let b = rows.len();
        let mut parts = Vec::with_capacity(2);
        if self.column_ids.is_some() {
            let ctx = self.contextual(g, vars, input, rows)?;
            let width = self.tables.len() * self.cfg.embed_dim;
            parts.push(g.reshape(ctx, [b, width])?);
        }
        if self.cfg.n_continuous > 0 {
            let mut x = Vec::with_capacity(b * self.cfg.n_continuous);
            for &r in rows {
                x.extend_from_slice(input.continuous_row(r));
            }
            parts.push(g.constant(Tensor::new([b, self.cfg.n_continuous], x)?));
        }
        let mut h = if parts.len() == 1 { parts[0] } else { g.concat(&parts)? };
        for lin in &self.mlp {
            h = lin.apply(g, vars, h)?;
            h = g.silu(h)?;
            h = g.dropout(h, self.cfg.dropout)?;
        }
        self.out.apply(g, vars, h)
    }
}
