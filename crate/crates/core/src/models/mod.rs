//! Classifier families and their shared parameter store and checkpoint format.

mod mamba;
mod pfn;
mod tab_transformer;

pub use mamba::{kernel_eval, MambaAttention, MambaConfig};
pub use pfn::{
    pca_project, stratified_support, MetaTrainLog, Pca, PfnConfig, PfnModel, Task, TaskPrior, Teacher,
};
pub use tab_transformer::{TabTransformer, TabTransformerConfig};

use crate::data::{ModelInput, N_CLASSES};
use crate::error::{Error, Result};
use crate::tensor::{Graph, Tensor, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    MambaAttention,
    TabTransformer,
    Pfn,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::MambaAttention => "mamba_attention",
            ModelKind::TabTransformer => "tab_transformer",
            ModelKind::Pfn => "pfn",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mamba_attention" => Ok(ModelKind::MambaAttention),
            "tab_transformer" => Ok(ModelKind::TabTransformer),
            "pfn" => Ok(ModelKind::Pfn),
            other => Err(Error::config(format!("unknown model kind {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub tensor: Tensor,
}

/// Ordered, named parameter tensors. Models refer to entries by the index
/// returned from [`ParamStore::add`].
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    entries: Vec<NamedTensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor) -> usize {
        self.entries.push(NamedTensor {
            name: name.into(),
            tensor,
        });
        self.entries.len() - 1
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn name(&self, i: usize) -> &str {
        &self.entries[i].name
    }

    pub fn get(&self, i: usize) -> &Tensor {
        &self.entries[i].tensor
    }

    pub fn get_mut(&mut self, i: usize) -> &mut Tensor {
        &mut self.entries[i].tensor
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|e| e.name == name).map(|e| &e.tensor)
    }

    pub fn by_name_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.entries.iter_mut().find(|e| e.name == name).map(|e| &mut e.tensor)
    }

    pub fn iter(&self) -> impl Iterator<Item = &NamedTensor> {
        self.entries.iter()
    }

    pub fn n_values(&self) -> usize {
        self.entries.iter().map(|e| e.tensor.len()).sum()
    }

    /// Registers every tensor as a trainable leaf; the returned vars are in
    /// store order.
    pub fn bind(&self, g: &mut Graph) -> Vec<Var> {
        self.entries.iter().map(|e| g.param(e.tensor.clone())).collect()
    }

    /// SHA-256 over names, shapes and the exact bit patterns of all values.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for e in &self.entries {
            h.update(e.name.as_bytes());
            for &d in e.tensor.shape() {
                h.update((d as u64).to_le_bytes());
            }
            for v in e.tensor.data() {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    /// Replaces values with those of `other`, which must have the same
    /// names and shapes.
    pub fn load_from(&mut self, other: &ParamStore) -> Result<()> {
        if self.entries.len() != other.entries.len() {
            return Err(Error::contract("parameter count mismatch"));
        }
        for (a, b) in self.entries.iter_mut().zip(&other.entries) {
            if a.name != b.name || a.tensor.shape() != b.tensor.shape() {
                return Err(Error::contract(format!("parameter {} does not match {}", a.name, b.name)));
            }
            a.tensor = b.tensor.clone();
        }
        Ok(())
    }
}

/// Uniform init with variance `1/fan_in`.
pub(crate) fn init_uniform(rng: &mut impl Rng, shape: &[usize], fan_in: usize) -> Tensor {
    let bound = (3.0 / fan_in as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape and data agree")
}

/// A classifier that maps rows of a [`ModelInput`] to class logits.
pub trait Classifier {
    fn kind(&self) -> ModelKind;
    fn params(&self) -> &ParamStore;
    fn params_mut(&mut self) -> &mut ParamStore;

    /// Records the forward pass for `rows` on `g` and returns `[rows×3]`
    /// logits. `vars` are the bound parameters, in store order.
    fn logits(&self, g: &mut Graph, vars: &[Var], input: &ModelInput, rows: &[usize]) -> Result<Var>;

    /// Class probabilities for every row, evaluated without dropout.
    fn predict_proba(&self, input: &ModelInput) -> Result<Vec<[f64; N_CLASSES]>> {
        let all: Vec<usize> = (0..input.n_rows).collect();
        let mut out = Vec::with_capacity(input.n_rows);
        for chunk in all.chunks(256) {
            let mut g = Graph::new();
            let vars = self.params().bind(&mut g);
            let z = self.logits(&mut g, &vars, input, chunk)?;
            out.extend(softmax_rows(g.value(z).data()));
        }
        Ok(out)
    }
}

pub(crate) fn softmax_rows(logits: &[f64]) -> Vec<[f64; N_CLASSES]> {
    logits
        .chunks(N_CLASSES)
        .map(|row| {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut p = [0.0; N_CLASSES];
            for (pi, &z) in p.iter_mut().zip(row) {
                *pi = (z - max).exp();
            }
            let s: f64 = p.iter().sum();
            p.iter_mut().for_each(|v| *v /= s);
            p
        })
        .collect()
}

/// Index of the largest probability, lowest index on ties.
pub fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = i;
        }
    }
    best
}

pub const CHECKPOINT_VERSION: u32 = 1;

/// Versioned JSON container for any model: kind tag, configuration and
/// named parameters. Floats are written with round-trip precision, so a
/// save/load cycle is bit-exact.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub kind: ModelKind,
    pub config: serde_json::Value,
    pub params: ParamStore,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::contract(format!("unsupported checkpoint version {}", ck.version)));
        }
        Ok(ck)
    }
}

/// Any of the three model families, as restored from a checkpoint.
#[derive(Clone, Debug)]
pub enum AnyModel {
    Mamba(MambaAttention),
    Tab(TabTransformer),
    Pfn(PfnModel),
}

impl AnyModel {
    pub fn kind(&self) -> ModelKind {
        match self {
            AnyModel::Mamba(_) => ModelKind::MambaAttention,
            AnyModel::Tab(_) => ModelKind::TabTransformer,
            AnyModel::Pfn(_) => ModelKind::Pfn,
        }
    }

    pub fn checkpoint(&self) -> Result<Checkpoint> {
        match self {
            AnyModel::Mamba(m) => m.checkpoint(),
            AnyModel::Tab(m) => m.checkpoint(),
            AnyModel::Pfn(m) => m.checkpoint(),
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        Ok(match ck.kind {
            ModelKind::MambaAttention => AnyModel::Mamba(MambaAttention::from_checkpoint(ck)?),
            ModelKind::TabTransformer => AnyModel::Tab(TabTransformer::from_checkpoint(ck)?),
            ModelKind::Pfn => AnyModel::Pfn(PfnModel::from_checkpoint(ck)?),
        })
    }

    /// The model as a row classifier; `None` for the PFN, which predicts
    /// from a support set instead.
    pub fn as_classifier(&self) -> Option<&dyn Classifier> {
        match self {
            AnyModel::Mamba(m) => Some(m),
            AnyModel::Tab(m) => Some(m),
            AnyModel::Pfn(_) => None,
        }
    }
}

/// Helper for restoring a model: builds a fresh instance from the stored
/// config, then copies the stored values over it.
pub(crate) fn restore<M, C>(
    ck: &Checkpoint,
    kind: ModelKind,
    build: impl FnOnce(C) -> Result<M>,
    store: impl FnOnce(&mut M) -> &mut ParamStore,
) -> Result<M>
where
    C: serde::de::DeserializeOwned,
{
    if ck.kind != kind {
        return Err(Error::contract(format!("checkpoint holds {}, expected {kind}", ck.kind)));
    }
    let cfg: C = serde_json::from_value(ck.config.clone())?;
    let mut m = build(cfg)?;
    store(&mut m).load_from(&ck.params)?;
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kind_round_trip() {
        for k in [ModelKind::MambaAttention, ModelKind::TabTransformer, ModelKind::Pfn] {
            assert_eq!(k.as_str().parse::<ModelKind>().unwrap(), k);
        }
        assert!(matches!("mlp".parse::<ModelKind>(), Err(Error::Config(_))));
    }

    #[test]
    fn checksum_tracks_bits() {
        let mut s = ParamStore::new();
        s.add("w", Tensor::vector(vec![0.0, 1.0]).unwrap());
        let c0 = s.checksum();
        s.get_mut(0).data_mut()[0] = -0.0;
        assert_ne!(c0, s.checksum());
    }

    #[test]
    fn argmax_prefers_lowest_index() {
        assert_eq!(argmax(&[0.4, 0.4, 0.2]), 0);
        assert_eq!(argmax(&[0.1, 0.2, 0.7]), 2);
    }
}
