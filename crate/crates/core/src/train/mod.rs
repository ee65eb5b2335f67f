//! Optimizer, plateau scheduling with early stopping, the epoch loop and
//! checkpoints.

mod checkpoint;
mod optim;

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, FORMAT_VERSION, MAGIC};
pub use optim::AdamW;

use crate::encoding::EncodedData;
use crate::error::{Error, Result};
use crate::model::Mambular;
use crate::numerics::{Graph, Tensor};
use crate::rng;

/// Losses must beat the best by more than this to count as an improvement.
pub const IMPROVEMENT_TOL: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub early_stop_patience: usize,
    pub lr_factor: f64,
    pub lr_patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            weight_decay: 1e-6,
            batch_size: 128,
            max_epochs: 200,
            early_stop_patience: 15,
            lr_factor: 0.1,
            lr_patience: 10,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || self.weight_decay < 0.0 || !(self.lr_factor > 0.0 && self.lr_factor < 1.0)
        {
            return Err(Error::Config(format!(
                "lr must be positive, weight_decay non-negative and lr_factor in (0, 1): {self:?}"
            )));
        }
        if self.batch_size == 0 || self.early_stop_patience == 0 || self.lr_patience == 0 {
            return Err(Error::Config(
                "batch_size and patience values must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// What the tracker decided after one validation loss.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Decision {
    pub improved: bool,
    pub lr_dropped: bool,
    pub stop: bool,
}

/// Plateau learning-rate schedule and early stopping on one improvement rule.
///
/// The early-stopping counter keeps running across learning-rate drops; the
/// plateau counter restarts after each drop.
#[derive(Clone, Debug, PartialEq)]
pub struct PlateauTracker {
    pub best: f64,
    pub since_improvement: usize,
    pub plateau: usize,
    pub lr: f64,
    pub lr_factor: f64,
    pub lr_patience: usize,
    pub early_stop_patience: usize,
}

impl PlateauTracker {
    pub fn new(cfg: &TrainConfig) -> Self {
        Self {
            best: f64::INFINITY,
            since_improvement: 0,
            plateau: 0,
            lr: cfg.lr,
            lr_factor: cfg.lr_factor,
            lr_patience: cfg.lr_patience,
            early_stop_patience: cfg.early_stop_patience,
        }
    }

    pub fn observe(&mut self, loss: f64) -> Decision {
        if loss < self.best - IMPROVEMENT_TOL {
            self.best = loss;
            self.since_improvement = 0;
            self.plateau = 0;
            return Decision {
                improved: true,
                lr_dropped: false,
                stop: false,
            };
        }
        self.since_improvement += 1;
        self.plateau += 1;
        let lr_dropped = self.plateau >= self.lr_patience;
        if lr_dropped {
            self.lr *= self.lr_factor;
            self.plateau = 0;
        }
        Decision {
            improved: false,
            lr_dropped,
            stop: self.since_improvement >= self.early_stop_patience,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    pub history: Vec<EpochRecord>,
    /// Epoch (1-based) of the returned parameters; 0 for the initial ones.
    pub best_epoch: usize,
    pub best_val_loss: f64,
}

/// Fit `model` on `train`, selecting the parameters with the lowest `val` loss.
pub fn train(
    model: &mut Mambular,
    train: &EncodedData,
    val: &EncodedData,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    cfg.validate()?;
    let mut report = TrainReport {
        history: Vec::new(),
        best_epoch: 0,
        best_val_loss: f64::INFINITY,
    };
    if cfg.max_epochs == 0 {
        return Ok(report);
    }
    if train.n_rows() == 0 || val.n_rows() == 0 {
        return Err(Error::InvalidArgument("training needs non-empty train and validation splits".into()));
    }
    let mut tracker = PlateauTracker::new(cfg);
    let mut opt = AdamW::new(&model.params);
    let mut shuffle = rng::stream(cfg.seed, "batches");
    let mut best: Vec<Tensor> = model.params.iter().map(|(_, _, t)| t.clone()).collect();
    let mut rows: Vec<usize> = (0..train.n_rows()).collect();
    let mut step: u64 = 0;

    for epoch in 1..=cfg.max_epochs {
        rows.shuffle(&mut shuffle);
        let lr = tracker.lr;
        let mut total = 0.0;
        for (b, chunk) in rows.chunks(cfg.batch_size).enumerate() {
            let batch = train.select(chunk);
            let mut g = Graph::training(rng::derive_seed(cfg.seed, &format!("dropout-{step}")));
            step += 1;
            let p = model.params.bind(&mut g);
            let out = model.forward(&mut g, &p, &batch)?;
            let loss = model.loss(&mut g, out, &batch.target)?;
            let value = g.value(loss).item();
            if !value.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: b });
            }
            total += value * chunk.len() as f64;
            let mut grads = g.backward(loss)?;
            let grads = p.gradients(&model.params, &mut grads);
            opt.step(&mut model.params, &grads, lr, cfg.weight_decay);
        }
        let train_loss = total / train.n_rows() as f64;
        let val_loss = model.evaluate_loss(val)?;
        if !val_loss.is_finite() {
            return Err(Error::NonFiniteLoss { epoch, batch: 0 });
        }
        report.history.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            lr,
        });
        log::debug!("epoch {epoch}: train {train_loss:.6} val {val_loss:.6} lr {lr:e}");
        let decision = tracker.observe(val_loss);
        if decision.improved {
            report.best_epoch = epoch;
            report.best_val_loss = val_loss;
            for (dst, (_, _, src)) in best.iter_mut().zip(model.params.iter()) {
                dst.clone_from(src);
            }
        }
        if decision.stop {
            break;
        }
    }
    for (dst, src) in model.params.tensors_mut().zip(best) {
        *dst = src;
    }
    Ok(report)
}

/// Write `epoch,train_loss,val_loss,lr` rows.
pub fn write_history(path: &Path, history: &[EpochRecord]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "epoch,train_loss,val_loss,lr")?;
    for r in history {
        writeln!(f, "{},{},{},{}", r.epoch, r.train_loss, r.val_loss, r.lr)?;
    }
    f.flush()?;
    Ok(())
}
