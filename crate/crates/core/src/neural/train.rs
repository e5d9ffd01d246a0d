use serde::{Deserialize, Serialize};

use super::ema::EmaParams;
use super::mlp::{Batch, MlpParams};
use super::optim::{adamw_step, AdamWConfig, OptimState};
use crate::error::{Error, Result};
use crate::rng::{permutation, RngKey};
use crate::scalar::Scalar;

/// Optimization settings shared by the posterior-mean regressor and every
/// vector field in an experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub optimizer: AdamWConfig,
    pub ema_decay: f64,
    pub seed: u64,
    /// Hidden layer widths.
    pub hidden: Vec<usize>,
    /// Sinusoidal time frequencies fed to vector fields.
    pub time_frequencies: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch: 64,
            optimizer: AdamWConfig::default(),
            ema_decay: 0.9999,
            seed: 0,
            hidden: vec![128, 128],
            time_frequencies: 16,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch == 0 {
            return Err(Error::InvalidArgument("epochs and batch must be positive".into()));
        }
        if !(self.ema_decay > 0.0 && self.ema_decay < 1.0) {
            return Err(Error::InvalidArgument(format!("EMA decay {} outside (0, 1)", self.ema_decay)));
        }
        if self.hidden.contains(&0) {
            return Err(Error::InvalidArgument("zero hidden width".into()));
        }
        Ok(())
    }

    /// Layer sizes for a network mapping `input` to `output`.
    pub fn layer_sizes(&self, input: usize, output: usize) -> Vec<usize> {
        let mut s = vec![input];
        s.extend_from_slice(&self.hidden);
        s.push(output);
        s
    }

    pub fn key(&self) -> RngKey {
        RngKey::new(self.seed, 0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub steps: u64,
    pub initial_loss: f64,
    /// Mean loss over the final epoch.
    pub final_loss: f64,
}

/// Minibatch AdamW loop with warm-started EMA tracking.
///
/// Each epoch visits a fresh permutation of `0..n` in batches of
/// `cfg.batch` (the remainder is dropped unless it is the only batch).
/// `make_batch` receives the sample indices and the global step. Returns the
/// EMA weights and a loss summary.
pub fn fit<T, F>(init: MlpParams<T>, cfg: &TrainConfig, n: usize, key: RngKey, mut make_batch: F) -> Result<(MlpParams<T>, TrainReport)>
where
    T: Scalar,
    F: FnMut(&[usize], u64) -> Result<Batch<T>>,
{
    cfg.validate()?;
    if n == 0 {
        return Err(Error::TooFewSamples { needed: 1, got: 0 });
    }
    let batch = cfg.batch.min(n);
    let per_epoch = n / batch;
    let mut params = init;
    let mut opt = OptimState::new(cfg.optimizer, &params);
    let mut ema = EmaParams::new(&params, cfg.ema_decay)?;
    let mut step = 0u64;
    let mut initial_loss = f64::NAN;
    let mut epoch_loss = 0.0;
    for epoch in 0..cfg.epochs {
        let order = permutation(key.derive_str("epoch").derive(epoch as u64), n);
        epoch_loss = 0.0;
        for chunk in order.chunks_exact(batch).take(per_epoch) {
            let b = make_batch(chunk, step)?;
            let (loss, grads) = params.loss_and_grad(&b)?;
            let loss = loss.as_f64();
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!("training loss at step {step}")));
            }
            if step == 0 {
                initial_loss = loss;
            }
            epoch_loss += loss;
            adamw_step(&mut opt, &mut params, &grads)?;
            ema.update_warm(&params)?;
            step += 1;
        }
    }
    if !ema.shadow.all_finite() {
        return Err(Error::NonFinite("trained weights".into()));
    }
    Ok((
        ema.shadow,
        TrainReport {
            steps: step,
            initial_loss,
            final_loss: epoch_loss / per_epoch as f64,
        },
    ))
}
