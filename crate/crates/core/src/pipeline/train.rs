//! Minibatch Adam training with early stopping and resumable checkpoints.

use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{forward, loss, loss_and_grad, PipelineConfig, PipelineParams, WindowExample};
use crate::error::{Error, Result};
use crate::metrics;
use crate::seed;

pub const CHECKPOINT_FORMAT: &str = "trmnet-checkpoint/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation-RMSE improvement before stopping.
    pub patience: usize,
    /// Root seed; shuffling uses its "shuffle" sub-seed.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: 32,
            max_epochs: 100,
            patience: 10,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate must be >= 0, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("Adam decay rates must lie in [0, 1)".into()));
        }
        if self.epsilon <= 0.0 {
            return Err(Error::Config("Adam epsilon must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        Ok(())
    }
}

/// First and second moment estimates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn update(&mut self, theta: &mut [f64], grad: &[f64], cfg: &TrainConfig) {
        self.t += 1;
        let t = self.t as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        for i in 0..theta.len() {
            let g = grad[i];
            self.m[i] = cfg.beta1 * self.m[i] + (1.0 - cfg.beta1) * g;
            self.v[i] = cfg.beta2 * self.v[i] + (1.0 - cfg.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            theta[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_loss: f64,
    pub valid_rmse: f64,
    pub valid_mape: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    pub stopped_early: bool,
    /// Epoch (1-based) whose parameters were kept.
    pub best_epoch: Option<usize>,
}

impl History {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,valid_loss,valid_rmse,valid_mape\n");
        for r in &self.epochs {
            out.push_str(&format!(
                "{},{:e},{:e},{:e},{:e}\n",
                r.epoch, r.train_loss, r.valid_loss, r.valid_rmse, r.valid_mape
            ));
        }
        out
    }
}

/// Everything needed to continue training bit-exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub train_config: TrainConfig,
    /// Completed epochs.
    pub epoch: usize,
    pub params: PipelineParams,
    pub best_params: PipelineParams,
    pub best_valid_rmse: Option<f64>,
    pub epochs_since_improvement: usize,
    pub adam: AdamState,
    pub history: History,
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    let text = serde_json::to_string(ckpt).map_err(|e| Error::Io(e.to_string()))?;
    crate::dataio::write_atomic(path, text.as_bytes())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let text = std::fs::read_to_string(path)?;
    let ckpt: Checkpoint = serde_json::from_str(&text).map_err(|e| Error::Data(format!("checkpoint: {e}")))?;
    if ckpt.format != CHECKPOINT_FORMAT {
        return Err(Error::Data(format!("unsupported checkpoint format {:?}", ckpt.format)));
    }
    Ok(ckpt)
}

/// Validation loss, RMSE and MAPE (percent) of the predicted rows at the observed interfaces.
pub fn validation_metrics(
    config: &PipelineConfig,
    params: &PipelineParams,
    examples: &[WindowExample],
) -> Result<(f64, f64, f64)> {
    let valid_loss = loss(config, params, examples)?;
    let outputs: Vec<Vec<Vec<f64>>> = examples
        .par_iter()
        .map(|ex| forward(config, params, &ex.past).map(|o| o.predicted))
        .collect::<Result<_>>()?;
    let observed = config.geometry.observed();
    let mut pred = Vec::new();
    let mut truth = Vec::new();
    for (rows, ex) in outputs.iter().zip(examples) {
        for (p, t) in rows.iter().zip(ex.future()) {
            pred.push(observed.iter().map(|&i| p[i]).collect::<Vec<_>>());
            truth.push(t.clone());
        }
    }
    let rmse = metrics::rmse(&pred, &truth)?;
    let mape = metrics::mape(&pred, &truth, metrics::DEFAULT_MAPE_EPSILON)
        .map(|m| m.percent)
        .unwrap_or(f64::NAN);
    Ok((valid_loss, rmse, mape))
}

/// Stateful training loop; one call to [`Trainer::run_epoch`] per epoch.
pub struct Trainer<'a> {
    config: &'a PipelineConfig,
    train_set: &'a [WindowExample],
    valid_set: &'a [WindowExample],
    state: Checkpoint,
}

impl<'a> Trainer<'a> {
    pub fn new(
        config: &'a PipelineConfig,
        params: PipelineParams,
        train_set: &'a [WindowExample],
        valid_set: &'a [WindowExample],
        train_config: TrainConfig,
    ) -> Result<Self> {
        train_config.validate()?;
        if train_set.is_empty() || valid_set.is_empty() {
            return Err(Error::Data(format!(
                "training needs non-empty datasets (train {}, validation {})",
                train_set.len(),
                valid_set.len()
            )));
        }
        params.check_shape(config)?;
        let n = params.n_params();
        Ok(Self {
            config,
            train_set,
            valid_set,
            state: Checkpoint {
                format: CHECKPOINT_FORMAT.into(),
                train_config,
                epoch: 0,
                best_params: params.clone(),
                params,
                best_valid_rmse: None,
                epochs_since_improvement: 0,
                adam: AdamState::new(n),
                history: History::default(),
            },
        })
    }

    pub fn resume(
        config: &'a PipelineConfig,
        checkpoint: Checkpoint,
        train_set: &'a [WindowExample],
        valid_set: &'a [WindowExample],
    ) -> Result<Self> {
        checkpoint.params.check_shape(config)?;
        let mut t = Self::new(
            config,
            checkpoint.params.clone(),
            train_set,
            valid_set,
            checkpoint.train_config.clone(),
        )?;
        t.state = checkpoint;
        Ok(t)
    }

    pub fn checkpoint(&self) -> &Checkpoint {
        &self.state
    }

    pub fn is_finished(&self) -> bool {
        let s = &self.state;
        s.epoch >= s.train_config.max_epochs || s.history.stopped_early
    }

    pub fn run_epoch(&mut self) -> Result<&EpochRecord> {
        let cfg = self.state.train_config.clone();
        let epoch = self.state.epoch;
        let mut order: Vec<usize> = (0..self.train_set.len()).collect();
        let shuffle_seed = seed::indexed_seed(seed::sub_seed(cfg.seed, "shuffle"), epoch as u64);
        order.shuffle(&mut seed::rng(shuffle_seed));

        let mut theta = self.state.params.to_flat();
        let mut weighted_loss = 0.0;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<WindowExample> = chunk.iter().map(|&i| self.train_set[i].clone()).collect();
            let (l, grad) = loss_and_grad(self.config, &self.state.params, &batch)?;
            if !l.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Numerical(format!(
                    "non-finite loss or gradient at epoch {} batch {b} (loss {l})",
                    epoch + 1
                )));
            }
            weighted_loss += l * batch.len() as f64;
            self.state.adam.update(&mut theta, &grad, &cfg);
            self.state.params.set_flat(&theta)?;
        }
        let train_loss = weighted_loss / self.train_set.len() as f64;
        let (valid_loss, valid_rmse, valid_mape) = validation_metrics(self.config, &self.state.params, self.valid_set)?;
        if !valid_loss.is_finite() || !valid_rmse.is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite validation metrics at epoch {} (loss {valid_loss}, rmse {valid_rmse})",
                epoch + 1
            )));
        }

        self.state.epoch += 1;
        let improved = self.state.best_valid_rmse.is_none_or(|best| valid_rmse < best);
        if improved {
            self.state.best_valid_rmse = Some(valid_rmse);
            self.state.best_params = self.state.params.clone();
            self.state.epochs_since_improvement = 0;
            self.state.history.best_epoch = Some(self.state.epoch);
        } else {
            self.state.epochs_since_improvement += 1;
            if self.state.epochs_since_improvement >= cfg.patience {
                self.state.history.stopped_early = true;
            }
        }
        self.state.history.epochs.push(EpochRecord {
            epoch: self.state.epoch,
            train_loss,
            valid_loss,
            valid_rmse,
            valid_mape,
        });
        Ok(self.state.history.epochs.last().expect("just pushed"))
    }

    /// Run to completion; returns the best-validation parameters and the history.
    pub fn run(mut self) -> Result<(PipelineParams, History)> {
        while !self.is_finished() {
            self.run_epoch()?;
        }
        Ok(self.finish())
    }

    pub fn finish(self) -> (PipelineParams, History) {
        (self.state.best_params, self.state.history)
    }
}

/// Train from `params` until `max_epochs` or early stopping.
pub fn train(
    config: &PipelineConfig,
    params: PipelineParams,
    train_set: &[WindowExample],
    valid_set: &[WindowExample],
    train_config: TrainConfig,
) -> Result<(PipelineParams, History)> {
    Trainer::new(config, params, train_set, valid_set, train_config)?.run()
}
