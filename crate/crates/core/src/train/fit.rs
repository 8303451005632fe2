use super::optim::{collect_grads, step_lr, Adam};
use crate::data::ModelInput;
use crate::error::{Error, Result};
use crate::models::{argmax, Classifier, ParamStore};
use crate::seed::{derive_seed, rng};
use crate::tensor::Graph;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;
use std::time::Instant;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    /// Decoupled weight decay coefficient.
    pub weight_decay: f64,
    pub step_size: usize,
    pub gamma: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without a validation-loss improvement of at least
    /// `min_delta` before stopping.
    pub patience: usize,
    pub min_delta: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            weight_decay: 5e-4,
            step_size: 10,
            gamma: 0.5,
            batch_size: 32,
            max_epochs: 50,
            patience: 10,
            min_delta: 1e-5,
            seed: 42,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patience == 0 {
            return Err(Error::config("patience must be at least 1"));
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.step_size == 0 {
            return Err(Error::config("batch size, epochs and step size must be positive"));
        }
        if !(self.lr > 0.0) || !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::config("lr must be positive and gamma in (0,1]"));
        }
        if !(self.weight_decay >= 0.0) || !(self.min_delta >= 0.0) {
            return Err(Error::config("weight decay and min_delta must be non-negative"));
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        step_lr(self.lr, self.gamma, self.step_size, epoch)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub train_acc: f64,
    pub val_acc: f64,
    pub lr: f64,
    /// Wall-clock time of the epoch; the only non-deterministic column.
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub records: Vec<EpochRecord>,
    /// Epoch whose parameters were restored.
    pub best_epoch: usize,
    pub stopped_early: bool,
}

const LOG_HEADER: [&str; 7] = ["epoch", "train_loss", "val_loss", "train_acc", "val_acc", "lr", "seconds"];

impl TrainingLog {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(LOG_HEADER)?;
        for r in &self.records {
            w.serialize((r.epoch, r.train_loss, r.val_loss, r.train_acc, r.val_acc, r.lr, r.seconds))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut rd = csv::Reader::from_path(path)?;
        if rd.headers()?.iter().ne(LOG_HEADER) {
            return Err(Error::Schema(format!("{} is not a training log", path.display())));
        }
        let mut records = Vec::new();
        for row in rd.deserialize() {
            let (epoch, train_loss, val_loss, train_acc, val_acc, lr, seconds) = row?;
            records.push(EpochRecord {
                epoch,
                train_loss,
                val_loss,
                train_acc,
                val_acc,
                lr,
                seconds,
            });
        }
        let best_epoch = records
            .iter()
            .min_by(|a, b| a.val_loss.total_cmp(&b.val_loss))
            .map_or(0, |r| r.epoch);
        Ok(Self {
            records,
            best_epoch,
            stopped_early: false,
        })
    }

    /// The log without wall-clock times, for reproducibility comparisons.
    pub fn without_timing(&self) -> Self {
        let mut out = self.clone();
        out.records.iter_mut().for_each(|r| r.seconds = 0.0);
        out
    }
}

/// Mean cross-entropy and accuracy of `model` on `input`, without dropout.
pub fn evaluate_loss(model: &dyn Classifier, input: &ModelInput) -> Result<(f64, f64)> {
    let mut loss = 0.0;
    let mut correct = 0;
    let rows: Vec<usize> = (0..input.n_rows).collect();
    for chunk in rows.chunks(256) {
        let mut g = Graph::new();
        let vars = model.params().bind(&mut g);
        let z = model.logits(&mut g, &vars, input, chunk)?;
        let labels: Vec<usize> = chunk.iter().map(|&r| input.labels[r]).collect();
        let l = g.softmax_cross_entropy(z, &labels)?;
        loss += g.value(l).item()? * chunk.len() as f64;
        for (row, &y) in g.value(z).data().chunks(3).zip(&labels) {
            correct += usize::from(argmax(row) == y);
        }
    }
    let n = input.n_rows as f64;
    Ok((loss / n, correct as f64 / n))
}

/// Mini-batch training with Adam, step decay and early stopping on the
/// validation loss. The parameters of the best validation epoch are
/// restored before returning.
///
/// Fails with a training failure when the batch loss stays above ten times
/// the first batch loss for 100 consecutive steps or turns non-finite.
pub fn train(model: &mut dyn Classifier, train: &ModelInput, val: &ModelInput, cfg: &TrainConfig) -> Result<TrainingLog> {
    cfg.validate()?;
    if train.n_rows == 0 || val.n_rows == 0 {
        return Err(Error::InsufficientData("train and validation splits must be non-empty".into()));
    }
    let mut order_rng = rng(derive_seed(cfg.seed, "batch-order"));
    let mut dropout_rng = rng(derive_seed(cfg.seed, "dropout"));
    let mut opt = Adam::new(model.params(), cfg.weight_decay);
    let mut log = TrainingLog::default();
    let mut best: Option<(f64, ParamStore)> = None;
    let mut since_best = 0;
    let mut first_loss: Option<f64> = None;
    let mut above = 0usize;
    let mut order: Vec<usize> = (0..train.n_rows).collect();
    for epoch in 0..cfg.max_epochs {
        let start = Instant::now();
        let lr = cfg.lr_at(epoch);
        order.shuffle(&mut order_rng);
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for batch in order.chunks(cfg.batch_size) {
            let mut g = Graph::training(dropout_rng.gen());
            let vars = model.params().bind(&mut g);
            let labels: Vec<usize> = batch.iter().map(|&r| train.labels[r]).collect();
            let step = model.logits(&mut g, &vars, train, batch).and_then(|z| {
                let l = g.softmax_cross_entropy(z, &labels)?;
                g.backward(l)?;
                Ok((z, g.value(l).item()?))
            });
            let (z, loss) = match step {
                Ok(v) => v,
                Err(Error::Numeric(m)) => {
                    return Err(Error::TrainingFailure(format!("epoch {epoch}: {m}")))
                }
                Err(e) => return Err(e),
            };
            for (row, &y) in g.value(z).data().chunks(3).zip(&labels) {
                correct += usize::from(argmax(row) == y);
            }
            loss_sum += loss * batch.len() as f64;
            let initial = *first_loss.get_or_insert(loss);
            if loss > 10.0 * initial {
                above += 1;
                if above >= 100 {
                    return Err(Error::TrainingFailure(format!(
                        "loss {loss:.4} above ten times its initial value {initial:.4} for 100 steps"
                    )));
                }
            } else {
                above = 0;
            }
            opt.step(model.params_mut(), &collect_grads(&g, &vars), lr)?;
        }
        let (val_loss, val_acc) = evaluate_loss(model, val)?;
        if !val_loss.is_finite() {
            return Err(Error::TrainingFailure(format!("epoch {epoch}: non-finite validation loss")));
        }
        log.records.push(EpochRecord {
            epoch,
            train_loss: loss_sum / train.n_rows as f64,
            val_loss,
            train_acc: correct as f64 / train.n_rows as f64,
            val_acc,
            lr,
            seconds: start.elapsed().as_secs_f64(),
        });
        log::info!("epoch {epoch}: val_loss {val_loss:.5} val_acc {val_acc:.4}");
        match &best {
            Some((b, _)) if val_loss > b - cfg.min_delta => {
                since_best += 1;
                if since_best >= cfg.patience {
                    log.stopped_early = true;
                    break;
                }
            }
            _ => {
                best = Some((val_loss, model.params().clone()));
                log.best_epoch = epoch;
                since_best = 0;
            }
        }
    }
    if let Some((_, params)) = best {
        model.params_mut().load_from(&params)?;
    }
    Ok(log)
}

/// Writes the log to any writer as CSV (used for byte comparisons in tests).
pub fn log_to_writer(log: &TrainingLog, out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(LOG_HEADER)?;
    for r in &log.records {
        w.serialize((r.epoch, r.train_loss, r.val_loss, r.train_acc, r.val_acc, r.lr, r.seconds))?;
    }
    w.flush()?;
    Ok(())
}
