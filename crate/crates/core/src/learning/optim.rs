//! Proximal local SGD, evaluation and learning-rate / stopping control.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learning::data::Dataset;
use crate::learning::model::{argmax, grad, ModelParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalLearnerConfig {
    /// Number of SGD steps per epoch (K).
    pub local_steps: usize,
    pub lr: f64,
    /// Proximal coefficient; 0 gives plain local SGD.
    pub rho: f64,
    pub batch_size: usize,
}

impl LocalLearnerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config(format!("learning rate must be positive, got {}", self.lr)));
        }
        if !(self.rho >= 0.0 && self.rho.is_finite()) {
            return Err(Error::config(format!("rho must be nonnegative, got {}", self.rho)));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch size must be at least 1"));
        }
        Ok(())
    }
}

/// Runs `local_steps` SGD steps on `f(x) + rho/2 ||x - params||^2`, each on a
/// batch drawn uniformly with replacement from `data`.
pub fn local_update(
    params: &ModelParams,
    data: &Dataset,
    cfg: &LocalLearnerConfig,
    rng: &mut impl Rng,
) -> Result<ModelParams> {
    if data.is_empty() {
        return Err(Error::argument("local update on an empty dataset"));
    }
    let mut x = params.clone();
    let mut batch = vec![0; cfg.batch_size];
    for _ in 0..cfg.local_steps {
        for b in batch.iter_mut() {
            *b = rng.random_range(0..data.len());
        }
        let g = grad(&x, data, &batch, params, cfg.rho)?;
        for (w, gi) in x.weights_mut().iter_mut().zip(&g) {
            *w -= cfg.lr * gi;
        }
    }
    Ok(x)
}

/// Fraction of rows (all rows, or `rows` when given) whose argmax
/// prediction matches the label.
pub fn evaluate(params: &ModelParams, test: &Dataset, rows: Option<&[usize]>) -> f64 {
    let mut correct = 0usize;
    let mut total = 0usize;
    let mut check = |i: usize| {
        total += 1;
        if argmax(&params.logits(test.row(i))) == test.label(i) {
            correct += 1;
        }
    };
    match rows {
        Some(rows) => rows.iter().copied().for_each(&mut check),
        None => (0..test.len()).for_each(&mut check),
    }
    if total == 0 {
        0.0
    } else {
        correct as f64 / total as f64
    }
}

/// Multiplies the learning rate by `factor` once the monitored metric (higher
/// is better) has gone `patience` consecutive observations without beating
/// its best value. Never goes below `min_lr`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlateauScheduler {
    pub factor: f64,
    pub patience: usize,
    pub min_lr: f64,
    lr: f64,
    best: Option<f64>,
    bad_epochs: usize,
}

impl PlateauScheduler {
    pub fn new(lr: f64, factor: f64, patience: usize, min_lr: f64) -> PlateauScheduler {
        PlateauScheduler {
            factor,
            patience,
            min_lr,
            lr,
            best: None,
            bad_epochs: 0,
        }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    /// Records one metric value and returns the learning rate to use next.
    pub fn observe(&mut self, metric: f64) -> f64 {
        match self.best {
            Some(b) if metric <= b => self.bad_epochs += 1,
            _ => {
                self.best = Some(metric);
                self.bad_epochs = 0;
            }
        }
        if self.bad_epochs >= self.patience && self.patience > 0 {
            let reduced = (self.lr * self.factor).max(self.min_lr);
            if reduced < self.lr {
                self.lr = reduced;
            }
            self.bad_epochs = 0;
        }
        self.lr
    }
}

/// Replays `history` through a fresh scheduler and returns the final rate.
pub fn reduce_on_plateau(
    lr: f64,
    factor: f64,
    patience: usize,
    min_lr: f64,
    history: &[f64],
) -> f64 {
    let mut s = PlateauScheduler::new(lr, factor, patience, min_lr);
    for &m in history {
        s.observe(m);
    }
    s.lr()
}

/// Signals a stop once the best metric is `patience` epochs old.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EarlyStopping {
    patience: usize,
    best: Option<(usize, f64)>,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> EarlyStopping {
        EarlyStopping { patience, best: None }
    }

    /// Epoch and value of the best metric seen so far (first occurrence).
    pub fn best(&self) -> Option<(usize, f64)> {
        self.best
    }

    /// Records the metric of `epoch`; returns true when training should stop.
    /// A patience of zero disables stopping.
    pub fn observe(&mut self, epoch: usize, metric: f64) -> bool {
        match self.best {
            Some((_, b)) if metric <= b => {}
            _ => self.best = Some((epoch, metric)),
        }
        let (best_epoch, _) = self.best.expect("set above");
        self.patience > 0 && epoch >= best_epoch + self.patience
    }
}
