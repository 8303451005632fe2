mod common;

use common::*;
use tabsae::data::{encode, stratified_split, ModelInput, SyntheticSpec};
use std::cell::Cell;
use tabsae::models::{Classifier, MambaAttention, MambaConfig, ModelKind, ParamStore, TabTransformer, TabTransformerConfig};
use tabsae::tensor::{Graph, Tensor, Var};
use tabsae::train::{evaluate_loss, train, TrainConfig};
use tabsae::Error;

fn separable_splits(rows: usize) -> (ModelInput, ModelInput) {
    let ds = SyntheticSpec::separable(rows).synthesize(3).unwrap();
    let (m, _) = encode(&ds, None).unwrap();
    let s = stratified_split(&m.labels, (0.7, 0.3, 0.0), 1).unwrap();
    let input = m.to_model_input();
    (input.subset(&s.train), input.subset(&s.validation))
}

fn small_tab(input: &ModelInput) -> TabTransformer {
    let mut cfg = TabTransformerConfig::new(input.vocab_sizes.clone(), input.n_continuous);
    cfg.embed_dim = 16;
    cfg.ff_dim = 32;
    cfg.mlp_hidden = vec![32];
    TabTransformer::new(cfg).unwrap()
}

fn small_mamba(input: &ModelInput) -> MambaAttention {
    let mut cfg = MambaConfig::new(input.vocab_sizes.clone(), input.n_continuous);
    cfg.d_token = 8;
    cfg.d_model = 32;
    MambaAttention::new(cfg).unwrap()
}

#[test]
fn tab_transformer_loss_decreases_over_five_epochs() {
    let (tr, va) = separable_splits(600);
    let mut model = small_tab(&tr);
    let cfg = TrainConfig {
        max_epochs: 5,
        ..TrainConfig::default()
    };
    let log = train(&mut model, &tr, &va, &cfg).unwrap();
    assert_eq!(log.records.len(), 5);
    let losses: Vec<f64> = log.records.iter().map(|r| r.train_loss).collect();
    assert!(losses.windows(2).all(|w| w[1] < w[0]), "{losses:?}");
}

#[test]
fn same_seed_same_log() {
    let (tr, va) = separable_splits(300);
    let cfg = TrainConfig {
        max_epochs: 3,
        ..TrainConfig::default()
    };
    let run = |seed: u64| {
        let mut m = small_mamba(&tr);
        let log = train(&mut m, &tr, &va, &TrainConfig { seed, ..cfg.clone() }).unwrap();
        (log.without_timing(), m.params().checksum())
    };
    let (a, ca) = run(5);
    let (b, cb) = run(5);
    assert_eq!(a, b);
    assert_eq!(ca, cb);
    let (c, _) = run(6);
    assert_ne!(a, c);
}

#[test]
fn early_stopping_restores_the_best_epoch() {
    let (tr, va) = separable_splits(300);
    let mut model = small_tab(&tr);
    let cfg = TrainConfig {
        lr: 3e-2,
        step_size: 1000,
        max_epochs: 40,
        patience: 2,
        ..TrainConfig::default()
    };
    let log = train(&mut model, &tr, &va, &cfg).unwrap();
    assert!(log.stopped_early, "ran all {} epochs", log.records.len());
    let best = &log.records[log.best_epoch];
    assert!(log.records.iter().all(|r| r.val_loss >= best.val_loss));
    let (val_loss, _) = evaluate_loss(&model, &va).unwrap();
    assert!((val_loss - best.val_loss).abs() < 1e-12, "{val_loss} vs {}", best.val_loss);
}

/// Ignores its input and emits logits that make the loss grow by `slope`
/// per call.
struct Drifting {
    store: ParamStore,
    calls: Cell<usize>,
    slope: f64,
}

impl Classifier for Drifting {
    fn kind(&self) -> ModelKind {
        ModelKind::MambaAttention
    }
    fn params(&self) -> &ParamStore {
        &self.store
    }
    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }
    fn logits(&self, g: &mut Graph, vars: &[Var], _: &ModelInput, rows: &[usize]) -> tabsae::Result<Var> {
        let n = self.calls.get();
        self.calls.set(n + 1);
        let wrong = 1.0 + self.slope * n as f64;
        let base = g.constant(Tensor::new([rows.len(), 3], [0.0, 0.0, wrong].repeat(rows.len()))?);
        let w = g.scale(vars[0], 0.0)?;
        g.add(base, w)
    }
}

fn drifting(slope: f64) -> Drifting {
    let mut store = ParamStore::new();
    store.add("w", Tensor::vector(vec![1.0; 3]).unwrap());
    Drifting {
        store,
        calls: Cell::new(0),
        slope,
    }
}

#[test]
fn a_runaway_loss_is_a_training_failure() {
    let tr = toy_input(1, 64, &[2], 1);
    let va = toy_input(2, 16, &[2], 1);
    let cfg = TrainConfig {
        batch_size: 8,
        patience: 1000,
        ..TrainConfig::default()
    };
    let mut model = drifting(1.0);
    let err = train(&mut model, &tr, &va, &cfg).unwrap_err();
    assert!(matches!(err, Error::TrainingFailure(_)), "{err}");

    let mut model = drifting(f64::INFINITY);
    let err = train(&mut model, &tr, &va, &cfg).unwrap_err();
    assert!(matches!(err, Error::TrainingFailure(_)), "{err}");
}

#[test]
fn training_log_csv_round_trip() {
    let (tr, va) = separable_splits(200);
    let mut model = small_tab(&tr);
    let cfg = TrainConfig {
        max_epochs: 2,
        ..TrainConfig::default()
    };
    let log = train(&mut model, &tr, &va, &cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("log.csv");
    log.write_csv(&path).unwrap();
    let back = tabsae::train::TrainingLog::read_csv(&path).unwrap();
    assert_eq!(back.records, log.records);
}
