//! Prior-data fitted network: a transformer meta-trained on synthetic
//! classification tasks that predicts query labels from a labelled support
//! set in one forward pass.
//!
//! Support tokens attend to every support token; each query token attends
//! to the support set and to itself only, so queries never see each other.

use super::{init_uniform, softmax_rows, Checkpoint, ModelKind, ParamStore, CHECKPOINT_VERSION};
use crate::data::N_CLASSES;
use crate::error::{Error, Result};
use crate::seed::{derive_seed, rng};
use crate::tensor::{Graph, Tensor, Var};
use crate::train::{collect_grads, Adam};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::rc::Rc;

/// Label-generating function of a synthetic task, acting on latent
/// standard-normal features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Teacher {
    /// `argmax(W z + b)`, `W` is `3 × F`.
    Linear { w: Vec<f64>, b: Vec<f64> },
    /// `argmax(W2 tanh(W1 z + b1) + b2)`.
    Mlp {
        w1: Vec<f64>,
        b1: Vec<f64>,
        w2: Vec<f64>,
        b2: Vec<f64>,
    },
}

fn affine(w: &[f64], b: &[f64], x: &[f64]) -> Vec<f64> {
    b.iter()
        .enumerate()
        .map(|(i, bi)| bi + w[i * x.len()..(i + 1) * x.len()].iter().zip(x).map(|(a, c)| a * c).sum::<f64>())
        .collect()
}

impl Teacher {
    pub fn logits(&self, z: &[f64]) -> Vec<f64> {
        match self {
            Teacher::Linear { w, b } => affine(w, b, z),
            Teacher::Mlp { w1, b1, w2, b2 } => {
                let h: Vec<f64> = affine(w1, b1, z).into_iter().map(f64::tanh).collect();
                affine(w2, b2, &h)
            }
        }
    }

    pub fn label(&self, z: &[f64]) -> usize {
        super::argmax(&self.logits(z))
    }
}

/// Distribution over synthetic 3-class tasks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskPrior {
    pub min_features: usize,
    pub max_features: usize,
    pub min_support: usize,
    pub max_support: usize,
    pub n_queries: usize,
    /// Probability that a task uses a linear teacher rather than the MLP one.
    pub linear_fraction: f64,
    /// Label noise rate is drawn uniformly from `[0, max_noise]`.
    pub max_noise: f64,
    pub hidden: usize,
}

impl Default for TaskPrior {
    fn default() -> Self {
        Self {
            min_features: 2,
            max_features: 8,
            min_support: 16,
            max_support: 64,
            n_queries: 16,
            linear_fraction: 0.5,
            max_noise: 0.1,
            hidden: 16,
        }
    }
}

/// A sampled task. Features are stored in observed (shifted and scaled)
/// form; `latent` holds the standard-normal draws the teacher saw.
#[derive(Clone, Debug, PartialEq)]
pub struct Task {
    pub n_features: usize,
    pub support_x: Vec<f64>,
    pub support_y: Vec<usize>,
    pub query_x: Vec<f64>,
    pub query_y: Vec<usize>,
    pub support_latent: Vec<f64>,
    pub teacher: Teacher,
    pub noise: f64,
}

impl Task {
    pub fn n_support(&self) -> usize {
        self.support_y.len()
    }
}

impl TaskPrior {
    /// Linear teachers without label noise, the held-out benchmark family.
    pub fn linear_noise_free(n_support: usize, n_queries: usize) -> Self {
        Self {
            min_support: n_support,
            max_support: n_support,
            n_queries,
            linear_fraction: 1.0,
            max_noise: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.min_features == 0 || self.min_features > self.max_features {
            return Err(Error::config("bad feature range in task prior"));
        }
        if self.min_support < 2 || self.min_support > self.max_support {
            return Err(Error::config("bad support range in task prior"));
        }
        if self.n_queries == 0 || self.hidden == 0 {
            return Err(Error::config("task prior needs queries and a hidden width"));
        }
        if !(0.0..=1.0).contains(&self.linear_fraction) || !(0.0..=1.0).contains(&self.max_noise) {
            return Err(Error::config("task prior rates must lie in [0,1]"));
        }
        Ok(())
    }

    /// Draws a task with a random support size from the prior range.
    pub fn sample_task(&self, seed: u64) -> Task {
        let mut r = rng(seed);
        let n = r.gen_range(self.min_support..=self.max_support);
        self.sample_with(&mut r, n)
    }

    /// Draws a task with exactly `n_support` support rows.
    pub fn sample_task_sized(&self, seed: u64, n_support: usize) -> Task {
        self.sample_with(&mut rng(seed), n_support)
    }

    fn sample_with(&self, r: &mut ChaCha8Rng, n_support: usize) -> Task {
        let f = r.gen_range(self.min_features..=self.max_features);
        let normal = |r: &mut ChaCha8Rng, n: usize, sd: f64| -> Vec<f64> {
            (0..n)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(r);
                    sd * z
                })
                .collect()
        };
        let shift = normal(r, f, 2.0);
        let scale: Vec<f64> = (0..f).map(|_| r.gen_range(-1.0f64..1.0).exp()).collect();
        let noise = r.gen::<f64>() * self.max_noise;
        loop {
            let teacher = if r.gen::<f64>() < self.linear_fraction {
                Teacher::Linear {
                    w: normal(r, N_CLASSES * f, 1.0),
                    b: normal(r, N_CLASSES, 0.5),
                }
            } else {
                let h = self.hidden;
                Teacher::Mlp {
                    w1: normal(r, h * f, 2.0 / (f as f64).sqrt()),
                    b1: normal(r, h, 0.5),
                    w2: normal(r, N_CLASSES * h, 2.0 / (h as f64).sqrt()),
                    b2: normal(r, N_CLASSES, 0.5),
                }
            };
            let draw = |r: &mut ChaCha8Rng, n: usize| {
                let latent = normal(r, n * f, 1.0);
                let mut x = Vec::with_capacity(n * f);
                let mut y = Vec::with_capacity(n);
                for z in latent.chunks(f) {
                    x.extend(z.iter().enumerate().map(|(j, v)| shift[j] + scale[j] * v));
                    let mut label = teacher.label(z);
                    if r.gen::<f64>() < noise {
                        label = r.gen_range(0..N_CLASSES);
                    }
                    y.push(label);
                }
                (latent, x, y)
            };
            let (support_latent, support_x, support_y) = draw(r, n_support);
            let present = (0..N_CLASSES).filter(|c| support_y.contains(c)).count();
            if present < 2 {
                continue;
            }
            let (_, query_x, query_y) = draw(r, self.n_queries);
            return Task {
                n_features: f,
                support_x,
                support_y,
                query_x,
                query_y,
                support_latent,
                teacher,
                noise,
            };
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PfnConfig {
    pub max_features: usize,
    pub max_support: usize,
    pub d_model: usize,
    pub heads: usize,
    pub layers: usize,
    pub ff_dim: usize,
    pub seed: u64,
}

impl Default for PfnConfig {
    fn default() -> Self {
        Self {
            max_features: 8,
            max_support: 256,
            d_model: 64,
            heads: 4,
            layers: 3,
            ff_dim: 128,
            seed: 42,
        }
    }
}

impl PfnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_features == 0 || self.max_support == 0 || self.d_model == 0 || self.layers == 0 {
            return Err(Error::config("pfn sizes must be positive"));
        }
        if self.heads == 0 || !self.d_model.is_multiple_of(self.heads) {
            return Err(Error::config("pfn heads must divide d_model"));
        }
        Ok(())
    }
}

/// Record of a meta-training run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetaTrainLog {
    pub seed: u64,
    pub steps: usize,
    pub tasks_per_step: usize,
    pub lr: f64,
    /// Mean query cross-entropy per step.
    pub losses: Vec<f64>,
}

impl MetaTrainLog {
    pub fn tasks_seen(&self) -> usize {
        self.steps * self.tasks_per_step
    }

    /// Means of consecutive non-overlapping windows of `window` steps.
    pub fn window_means(&self, window: usize) -> Vec<f64> {
        self.losses
            .chunks_exact(window.max(1))
            .map(|c| c.iter().sum::<f64>() / c.len() as f64)
            .collect()
    }
}

#[derive(Clone, Debug)]
struct Lin {
    w: usize,
    b: usize,
}

#[derive(Clone, Debug)]
struct Layer {
    norm1: (usize, usize),
    q: Lin,
    k: Lin,
    v: Lin,
    o: Lin,
    norm2: (usize, usize),
    ff1: Lin,
    ff2: Lin,
}

#[derive(Clone, Debug)]
pub struct PfnModel {
    cfg: PfnConfig,
    store: ParamStore,
    embed_x: Lin,
    labels: usize,
    layers: Vec<Layer>,
    final_norm: (usize, usize),
    head: Lin,
    pub meta: Option<MetaTrainLog>,
}

/// One or more equally shaped tasks prepared for a forward pass.
struct Episode {
    n_tasks: usize,
    n_support: usize,
    n_queries: usize,
    /// `n_tasks·(n_support+n_queries) × max_features`, standardized and padded.
    x: Vec<f64>,
    /// Label index per token; `N_CLASSES` marks a query.
    token_labels: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct PfnState {
    model: PfnConfig,
    meta: Option<MetaTrainLog>,
}

impl PfnModel {
    pub fn new(cfg: PfnConfig) -> Result<Self> {
        cfg.validate()?;
        let mut r = rng(cfg.seed);
        let mut store = ParamStore::new();
        let d = cfg.d_model;
        let lin = |store: &mut ParamStore, r: &mut ChaCha8Rng, name: &str, i: usize, o: usize| Lin {
            w: store.add(format!("{name}.w"), init_uniform(r, &[i, o], i)),
            b: store.add(format!("{name}.b"), Tensor::zeros([o])),
        };
        let norm = |store: &mut ParamStore, name: &str| {
            (
                store.add(format!("{name}.gain"), Tensor::full([d], 1.0)),
                store.add(format!("{name}.bias"), Tensor::zeros([d])),
            )
        };
        let embed_x = lin(&mut store, &mut r, "embed.x", cfg.max_features, d);
        let labels = store.add("embed.label", init_uniform(&mut r, &[N_CLASSES + 1, d], 1));
        let mut layers = Vec::with_capacity(cfg.layers);
        for l in 0..cfg.layers {
            let n = |s: &str| format!("layer{l}.{s}");
            layers.push(Layer {
                norm1: norm(&mut store, &n("norm1")),
                q: lin(&mut store, &mut r, &n("q"), d, d),
                k: lin(&mut store, &mut r, &n("k"), d, d),
                v: lin(&mut store, &mut r, &n("v"), d, d),
                o: lin(&mut store, &mut r, &n("o"), d, d),
                norm2: norm(&mut store, &n("norm2")),
                ff1: lin(&mut store, &mut r, &n("ff1"), d, cfg.ff_dim),
                ff2: lin(&mut store, &mut r, &n("ff2"), cfg.ff_dim, d),
            });
        }
        let final_norm = norm(&mut store, "final_norm");
        let head = lin(&mut store, &mut r, "head", d, N_CLASSES);
        Ok(Self {
            cfg,
            store,
            embed_x,
            labels,
            layers,
            final_norm,
            head,
            meta: None,
        })
    }

    pub fn config(&self) -> &PfnConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    /// Attention mask over `n_support + n_queries` tokens, row-major:
    /// entry `(i, j)` is true when token `i` may attend to token `j`.
    pub fn attention_mask(n_support: usize, n_queries: usize) -> Vec<bool> {
        let s = n_support + n_queries;
        let mut m = vec![false; s * s];
        for i in 0..s {
            for j in 0..s {
                m[i * s + j] = j < n_support || i == j;
            }
        }
        m
    }

    fn episode(&self, tasks: &[(&[f64], &[usize], &[f64])], n_features: &[usize]) -> Result<Episode> {
        let fm = self.cfg.max_features;
        let n_support = tasks[0].1.len();
        let n_queries = tasks[0].2.len() / n_features[0].max(1);
        let mut x = Vec::new();
        let mut token_labels = Vec::new();
        for (&(sx, sy, qx), &f) in tasks.iter().zip(n_features) {
            if f == 0 || f > fm {
                return Err(Error::Capacity(format!("{f} features, model supports 1..={fm}")));
            }
            if sy.len() != n_support || sx.len() != n_support * f || qx.len() != n_queries * f {
                return Err(Error::dim("tasks in one episode must share their shape"));
            }
            if let Some(&bad) = sy.iter().find(|&&y| y >= N_CLASSES) {
                return Err(Error::contract(format!("support label {bad} out of range")));
            }
            let mut mean = vec![0.0; f];
            for row in sx.chunks(f) {
                mean.iter_mut().zip(row).for_each(|(m, v)| *m += v);
            }
            mean.iter_mut().for_each(|m| *m /= n_support as f64);
            let mut sd = vec![0.0; f];
            for row in sx.chunks(f) {
                for j in 0..f {
                    sd[j] += (row[j] - mean[j]).powi(2);
                }
            }
            let inv: Vec<f64> = sd
                .iter()
                .map(|s| {
                    let s = (s / n_support as f64).sqrt();
                    if s < 1e-12 {
                        0.0
                    } else {
                        1.0 / s
                    }
                })
                .collect();
            for row in sx.chunks(f).chain(qx.chunks(f)) {
                for j in 0..fm {
                    x.push(if j < f { (row[j] - mean[j]) * inv[j] } else { 0.0 });
                }
            }
            token_labels.extend_from_slice(sy);
            token_labels.extend(std::iter::repeat_n(N_CLASSES, n_queries));
        }
        Ok(Episode {
            n_tasks: tasks.len(),
            n_support,
            n_queries,
            x,
            token_labels,
        })
    }

    fn lin(&self, g: &mut Graph, vars: &[Var], l: &Lin, x: Var) -> Result<Var> {
        let y = g.matmul(x, vars[l.w])?;
        g.add(y, vars[l.b])
    }

    /// Records the forward pass and returns `[n_tasks·n_queries × 3]` query
    /// logits together with the token-feature leaf (for leakage checks).
    fn forward(&self, g: &mut Graph, vars: &[Var], ep: &Episode, track_inputs: bool) -> Result<(Var, Var)> {
        let (b, ns, nq) = (ep.n_tasks, ep.n_support, ep.n_queries);
        let s = ns + nq;
        let (d, h) = (self.cfg.d_model, self.cfg.heads);
        let dh = d / h;
        let xin = g.leaf(Tensor::new([b * s, self.cfg.max_features], ep.x.clone())?, track_inputs);
        let tok = self.lin(g, vars, &self.embed_x, xin)?;
        let lab = g.gather_rows(vars[self.labels], &ep.token_labels)?;
        let mut x = g.add(tok, lab)?;
        let mask: Rc<[bool]> = Self::attention_mask(ns, nq).into();
        for layer in &self.layers {
            let hn = g.layer_norm(x, vars[layer.norm1.0], vars[layer.norm1.1], 1e-5)?;
            let split = |g: &mut Graph, l: &Lin| -> Result<Var> {
                let y = self.lin(g, vars, l, hn)?;
                let y = g.reshape(y, [b, s, h, dh])?;
                let y = g.permute_0213(y)?;
                g.reshape(y, [b * h, s, dh])
            };
            let q = split(g, &layer.q)?;
            let k = split(g, &layer.k)?;
            let v = split(g, &layer.v)?;
            let kt = g.transpose_last2(k)?;
            let scores = g.batch_matmul(q, kt)?;
            let scores = g.scale(scores, 1.0 / (dh as f64).sqrt())?;
            let att = g.masked_softmax(scores, mask.clone())?;
            let ctx = g.batch_matmul(att, v)?;
            let ctx = g.reshape(ctx, [b, h, s, dh])?;
            let ctx = g.permute_0213(ctx)?;
            let ctx = g.reshape(ctx, [b * s, d])?;
            let a = self.lin(g, vars, &layer.o, ctx)?;
            x = g.add(x, a)?;
            let hn = g.layer_norm(x, vars[layer.norm2.0], vars[layer.norm2.1], 1e-5)?;
            let f = self.lin(g, vars, &layer.ff1, hn)?;
            let f = g.silu(f)?;
            let f = self.lin(g, vars, &layer.ff2, f)?;
            x = g.add(x, f)?;
        }
        let x = g.layer_norm(x, vars[self.final_norm.0], vars[self.final_norm.1], 1e-5)?;
        let query_rows: Vec<usize> = (0..b).flat_map(|t| (ns..s).map(move |i| t * s + i)).collect();
        let qx = g.gather_rows(x, &query_rows)?;
        Ok((self.lin(g, vars, &self.head, qx)?, xin))
    }

    /// Mean query cross-entropy over a batch of equally shaped tasks,
    /// recorded on `g`.
    fn task_loss(&self, g: &mut Graph, vars: &[Var], tasks: &[Task]) -> Result<Var> {
        let views: Vec<_> = tasks
            .iter()
            .map(|t| (t.support_x.as_slice(), t.support_y.as_slice(), t.query_x.as_slice()))
            .collect();
        let feats: Vec<usize> = tasks.iter().map(|t| t.n_features).collect();
        let ep = self.episode(&views, &feats)?;
        let (logits, _) = self.forward(g, vars, &ep, false)?;
        let labels: Vec<usize> = tasks.iter().flat_map(|t| t.query_y.iter().copied()).collect();
        g.softmax_cross_entropy(logits, &labels)
    }

    /// Meta-trains on `steps × tasks_per_step` tasks drawn from `prior` with
    /// Adam at `lr`. The tasks of one step share a support size.
    ///
    /// Fails when the loss stays above ten times its initial value for 100
    /// consecutive steps or becomes non-finite.
    pub fn meta_train(
        &mut self,
        prior: &TaskPrior,
        steps: usize,
        tasks_per_step: usize,
        lr: f64,
        seed: u64,
    ) -> Result<&MetaTrainLog> {
        prior.validate()?;
        if steps == 0 || tasks_per_step == 0 {
            return Err(Error::config("meta-training needs at least one step and one task"));
        }
        if prior.max_support > self.cfg.max_support || prior.max_features > self.cfg.max_features {
            return Err(Error::config("task prior exceeds the model capacity"));
        }
        let mut r = rng(derive_seed(seed, "pfn-meta-train"));
        let mut opt = Adam::new(&self.store, 0.0);
        let mut log = MetaTrainLog {
            seed,
            steps,
            tasks_per_step,
            lr,
            losses: Vec::with_capacity(steps),
        };
        let mut above = 0usize;
        for step in 0..steps {
            let n_support = r.gen_range(prior.min_support..=prior.max_support);
            let tasks: Vec<Task> = (0..tasks_per_step)
                .map(|_| prior.sample_task_sized(r.gen(), n_support))
                .collect();
            let mut g = Graph::new();
            let vars = self.store.bind(&mut g);
            let loss = self.task_loss(&mut g, &vars, &tasks).and_then(|l| {
                g.backward(l)?;
                g.value(l).item()
            });
            let loss = match loss {
                Ok(v) => v,
                Err(Error::Numeric(m)) => {
                    return Err(Error::TrainingFailure(format!("step {step}: {m}")))
                }
                Err(e) => return Err(e),
            };
            // short linear warm-up keeps the first attention updates small
            let scale = ((step + 1) as f64 / 100.0).min(1.0);
            opt.step(&mut self.store, &collect_grads(&g, &vars), lr * scale)?;
            log.losses.push(loss);
            if loss > 10.0 * log.losses[0] {
                above += 1;
                if above >= 100 {
                    return Err(Error::TrainingFailure(format!(
                        "meta-training diverged: loss {loss:.4} after {step} steps"
                    )));
                }
            } else {
                above = 0;
            }
        }
        Ok(self.meta.insert(log))
    }

    /// Class probabilities for each query row given a labelled support set.
    /// Parameters are only read. Queries are independent of one another, so
    /// they are evaluated in chunks.
    pub fn predict(
        &self,
        support_x: &[f64],
        support_y: &[usize],
        n_features: usize,
        queries: &[f64],
    ) -> Result<Vec<[f64; N_CLASSES]>> {
        let ns = support_y.len();
        if ns == 0 {
            return Err(Error::contract("empty support set"));
        }
        if ns > self.cfg.max_support {
            return Err(Error::Capacity(format!(
                "support of {ns} rows exceeds capacity {}",
                self.cfg.max_support
            )));
        }
        if n_features == 0 || n_features > self.cfg.max_features {
            return Err(Error::Capacity(format!(
                "{n_features} features, model supports 1..={}",
                self.cfg.max_features
            )));
        }
        if support_x.len() != ns * n_features || !queries.len().is_multiple_of(n_features) {
            return Err(Error::dim("support/query sizes disagree with the feature count"));
        }
        let mut out = Vec::with_capacity(queries.len() / n_features);
        for chunk in queries.chunks(64 * n_features) {
            let ep = self.episode(&[(support_x, support_y, chunk)], &[n_features])?;
            let mut g = Graph::new();
            let vars = self.store.bind(&mut g);
            let (logits, _) = self.forward(&mut g, &vars, &ep, false)?;
            out.extend(softmax_rows(g.value(logits).data()));
        }
        Ok(out)
    }

    /// Gradient of the first query's loss with respect to every query
    /// token's input features, `[n_queries × max_features]`. Rows other than
    /// the first are zero when no information flows between queries.
    pub fn query_input_gradient(&self, task: &Task) -> Result<Vec<f64>> {
        let ep = self.episode(
            &[(&task.support_x, &task.support_y, &task.query_x)],
            &[task.n_features],
        )?;
        let mut g = Graph::new();
        let vars = self.store.bind(&mut g);
        let (logits, xin) = self.forward(&mut g, &vars, &ep, true)?;
        let first = g.gather_rows(logits, &[0])?;
        let loss = g.softmax_cross_entropy(first, &task.query_y[..1])?;
        g.backward(loss)?;
        let fm = self.cfg.max_features;
        let grad = g.grad(xin).ok_or_else(|| Error::contract("input gradient missing"))?;
        Ok(grad[ep.n_support * fm..].to_vec())
    }

    /// Mean query cross-entropy of a batch of equally shaped tasks with its
    /// parameter gradients, for gradient checks.
    pub fn loss_and_grads(&self, tasks: &[Task]) -> Result<(f64, Vec<Vec<f64>>)> {
        let mut g = Graph::new();
        let vars = self.store.bind(&mut g);
        let loss = self.task_loss(&mut g, &vars, tasks)?;
        g.backward(loss)?;
        let grads = vars
            .iter()
            .enumerate()
            .map(|(i, &v)| g.grad(v).map_or_else(|| vec![0.0; self.store.get(i).len()], <[f64]>::to_vec))
            .collect();
        Ok((g.value(loss).item()?, grads))
    }

    /// Mean query cross-entropy without gradients.
    pub fn loss(&self, tasks: &[Task]) -> Result<f64> {
        let mut g = Graph::new();
        let vars = self.store.bind(&mut g);
        let loss = self.task_loss(&mut g, &vars, tasks)?;
        g.value(loss).item()
    }

    pub fn checkpoint(&self) -> Result<Checkpoint> {
        let state = PfnState {
            model: self.cfg.clone(),
            meta: self.meta.clone(),
        };
        Ok(Checkpoint {
            version: CHECKPOINT_VERSION,
            kind: ModelKind::Pfn,
            config: serde_json::to_value(state)?,
            params: self.store.clone(),
        })
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.kind != ModelKind::Pfn {
            return Err(Error::contract(format!("checkpoint holds {}, expected pfn", ck.kind)));
        }
        let state: PfnState = serde_json::from_value(ck.config.clone())?;
        let mut m = Self::new(state.model)?;
        m.store.load_from(&ck.params)?;
        m.meta = state.meta;
        Ok(m)
    }
}

/// Stratified subsample of at most `capacity` row indices (sorted), with
/// per-class quotas by largest remainder and at least one row for every
/// class present.
pub fn stratified_support(labels: &[usize], capacity: usize, seed: u64) -> Vec<usize> {
    let n = labels.len();
    if n <= capacity {
        return (0..n).collect();
    }
    let mut r = rng(seed);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); N_CLASSES];
    for (i, &y) in labels.iter().enumerate() {
        by_class[y].push(i);
    }
    let exact: Vec<f64> = by_class.iter().map(|c| c.len() as f64 * capacity as f64 / n as f64).collect();
    let mut quota: Vec<usize> = by_class
        .iter()
        .zip(&exact)
        .map(|(c, &e)| if c.is_empty() { 0 } else { (e.floor() as usize).max(1) })
        .collect();
    let mut order: Vec<usize> = (0..N_CLASSES).collect();
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())));
    let mut k = 0;
    while quota.iter().sum::<usize>() < capacity {
        let c = order[k % N_CLASSES];
        if quota[c] < by_class[c].len() {
            quota[c] += 1;
        }
        k += 1;
    }
    while quota.iter().sum::<usize>() > capacity {
        let c = (0..N_CLASSES).max_by_key(|&c| quota[c]).unwrap();
        quota[c] -= 1;
    }
    let mut out = Vec::with_capacity(capacity);
    for (c, members) in by_class.iter_mut().enumerate() {
        members.shuffle(&mut r);
        out.extend_from_slice(&members[..quota[c]]);
    }
    out.sort_unstable();
    out
}

/// Principal-component projection fitted by power iteration with deflation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pca {
    pub width: usize,
    pub mean: Vec<f64>,
    /// `k × width`, orthonormal rows ordered by explained variance.
    pub components: Vec<f64>,
    pub k: usize,
}

impl Pca {
    pub fn fit(data: &[f64], width: usize, k: usize) -> Result<Self> {
        if width == 0 || data.is_empty() || !data.len().is_multiple_of(width) {
            return Err(Error::dim("PCA needs a non-empty row-major matrix"));
        }
        let n = data.len() / width;
        let k = k.min(width);
        let mut mean = vec![0.0; width];
        for row in data.chunks(width) {
            mean.iter_mut().zip(row).for_each(|(m, v)| *m += v);
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut cov = vec![0.0; width * width];
        for row in data.chunks(width) {
            for i in 0..width {
                let di = row[i] - mean[i];
                for j in 0..width {
                    cov[i * width + j] += di * (row[j] - mean[j]);
                }
            }
        }
        cov.iter_mut().for_each(|c| *c /= n as f64);
        let mut components = Vec::with_capacity(k * width);
        for c in 0..k {
            // deterministic start that is not orthogonal to typical leading vectors
            let mut v: Vec<f64> = (0..width).map(|i| 1.0 + ((i * 7 + c * 13) % 11) as f64 / 11.0).collect();
            let mut lambda = 0.0;
            for _ in 0..500 {
                for p in components.chunks(width) {
                    let dot: f64 = p.iter().zip(&v).map(|(a, b)| a * b).sum();
                    v.iter_mut().zip(p).for_each(|(x, pi)| *x -= dot * pi);
                }
                let mut w = vec![0.0; width];
                for i in 0..width {
                    w[i] = cov[i * width..(i + 1) * width].iter().zip(&v).map(|(a, b)| a * b).sum();
                }
                let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
                if norm < 1e-300 {
                    break;
                }
                w.iter_mut().for_each(|x| *x /= norm);
                let delta: f64 = w.iter().zip(&v).map(|(a, b)| (a - b).abs()).sum();
                v = w;
                lambda = norm;
                if delta < 1e-12 {
                    break;
                }
            }
            for p in components.chunks(width) {
                let dot: f64 = p.iter().zip(&v).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(p).for_each(|(x, pi)| *x -= dot * pi);
            }
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if lambda == 0.0 || norm < 1e-12 {
                // remaining variance is zero; pick any unit vector orthogonal to the rest
                v = vec![0.0; width];
                v[c] = 1.0;
                for p in components.chunks(width) {
                    let dot: f64 = p.iter().zip(&v).map(|(a, b)| a * b).sum();
                    v.iter_mut().zip(p).for_each(|(x, pi)| *x -= dot * pi);
                }
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-300);
                v.iter_mut().for_each(|x| *x /= norm);
            } else {
                v.iter_mut().for_each(|x| *x /= norm);
            }
            let lead = v.iter().copied().fold(0.0f64, |a, b| if b.abs() > a.abs() { b } else { a });
            if lead < 0.0 {
                v.iter_mut().for_each(|x| *x = -*x);
            }
            components.extend(v);
        }
        Ok(Self {
            width,
            mean,
            components,
            k,
        })
    }

    pub fn transform(&self, data: &[f64]) -> Result<Vec<f64>> {
        if !data.len().is_multiple_of(self.width) {
            return Err(Error::dim("PCA input width mismatch"));
        }
        let mut out = Vec::with_capacity(data.len() / self.width * self.k);
        for row in data.chunks(self.width) {
            for p in self.components.chunks(self.width) {
                out.push(p.iter().zip(row).zip(&self.mean).map(|((a, x), m)| a * (x - m)).sum());
            }
        }
        Ok(out)
    }
}

/// Projects `data` to at most `k` columns: unchanged when already narrow
/// enough, otherwise onto the leading principal components of `fit_rows`.
pub fn pca_project(fit_rows: &[f64], data: &[f64], width: usize, k: usize) -> Result<(Vec<f64>, usize)> {
    if width <= k {
        return Ok((data.to_vec(), width));
    }
    let pca = Pca::fit(fit_rows, width, k)?;
    Ok((pca.transform(data)?, pca.k))
}
