use log::{debug, info};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::data::{check_fractions, split, Sample, SampleSet, Split};
use super::network::{NetShape, Normalizer, TwinGrad, TwinNetwork};
use super::TwinError;
use crate::bus::sim_rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub window: usize,
    pub encoder_hidden: usize,
    pub latent: usize,
    pub decoder_hidden: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Train / validation / test fractions.
    pub split: [f64; 3],
    pub seed: u64,
    /// Stop after this many epochs without a significant validation
    /// improvement.
    pub patience: Option<usize>,
    /// Relative validation decrease that counts as significant.
    pub min_delta: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            window: 20,
            encoder_hidden: 32,
            latent: 64,
            decoder_hidden: 32,
            epochs: 200,
            batch_size: 64,
            learning_rate: 1e-3,
            split: [0.6, 0.2, 0.2],
            seed: 0,
            patience: Some(10),
            min_delta: 0.05,
        }
    }
}

impl TrainConfig {
    pub fn shape(&self) -> NetShape {
        NetShape {
            window: self.window,
            encoder_hidden: self.encoder_hidden,
            latent: self.latent,
            decoder_hidden: self.decoder_hidden,
        }
    }

    pub fn validate(&self) -> Result<(), TwinError> {
        check_fractions(self.split)?;
        let sizes = [self.window, self.encoder_hidden, self.latent, self.decoder_hidden, self.epochs, self.batch_size];
        if sizes.contains(&0) {
            return Err(TwinError::Config("sizes, epochs and batch size must be positive".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(TwinError::Config(format!("learning rate {} is invalid", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.min_delta) {
            return Err(TwinError::Config(format!("min_delta {} must lie in [0, 1)", self.min_delta)));
        }
        if self.patience == Some(0) {
            return Err(TwinError::Config("patience must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainMetrics {
    pub train_mse: Vec<f64>,
    pub val_mse: Vec<f64>,
    pub best_epoch: usize,
    pub test_mse: f64,
}

/// Adam with the usual bias-corrected moment estimates.
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: i32,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(params: usize, lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, m: vec![0.0; params], v: vec![0.0; params] }
    }

    pub fn update(&mut self, net: &mut TwinNetwork, grad: &TwinGrad) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        let mut k = 0;
        for (p, g) in net.param_slices_mut().into_iter().zip(grad.slices()) {
            for (w, gi) in p.iter_mut().zip(g) {
                let m = &mut self.m[k];
                let v = &mut self.v[k];
                *m = self.beta1 * *m + (1.0 - self.beta1) * gi;
                *v = self.beta2 * *v + (1.0 - self.beta2) * gi * gi;
                *w -= self.lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
                k += 1;
            }
        }
    }
}

/// Splits `set`, fits the normalizer on the training part and runs
/// minibatch Adam. Returns the network with the lowest validation error.
pub fn train(set: &SampleSet, cfg: &TrainConfig) -> Result<(TwinNetwork, TrainMetrics), TwinError> {
    cfg.validate()?;
    if set.window != cfg.window {
        return Err(TwinError::WindowMismatch { expected: cfg.window, got: set.window });
    }
    let parts = split(set, cfg.split, cfg.seed)?;
    train_split(&parts, cfg)
}

pub fn train_split(parts: &Split, cfg: &TrainConfig) -> Result<(TwinNetwork, TrainMetrics), TwinError> {
    cfg.validate()?;
    let mut rng = sim_rng(cfg.seed.wrapping_add(1));
    let mut net = TwinNetwork::init(cfg.shape(), &mut rng);
    net.normalizer = Normalizer::fit(&parts.train);
    net.validate()?;
    let mut opt = Adam::new(net.param_count(), cfg.learning_rate);
    let mut order: Vec<usize> = (0..parts.train.len()).collect();
    let mut metrics = TrainMetrics { train_mse: Vec::new(), val_mse: Vec::new(), best_epoch: 0, test_mse: f64::NAN };
    let mut best = (f64::INFINITY, net.clone());
    let mut mark = (f64::INFINITY, 0usize);
    let mut grad = TwinGrad::zeros_like(&net);
    let mut batch: Vec<&Sample> = Vec::with_capacity(cfg.batch_size);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| &parts.train[i]));
            grad.scale(0.0);
            let loss = net.accumulate_grad(&batch, batch.len(), &mut grad)?;
            if !loss.is_finite() {
                return Err(TwinError::Diverged { epoch });
            }
            epoch_loss += loss * batch.len() as f64;
            opt.update(&mut net, &grad);
        }
        let train_mse = epoch_loss / parts.train.len().max(1) as f64;
        let val_mse = if parts.val.is_empty() { train_mse } else { net.mse(&parts.val)? };
        if !train_mse.is_finite() || !val_mse.is_finite() {
            return Err(TwinError::Diverged { epoch });
        }
        metrics.train_mse.push(train_mse);
        metrics.val_mse.push(val_mse);
        debug!("epoch {epoch}: train {train_mse:.3e} val {val_mse:.3e}");
        if val_mse < best.0 {
            best = (val_mse, net.clone());
            metrics.best_epoch = epoch;
        }
        if val_mse < mark.0 * (1.0 - cfg.min_delta) {
            mark = (val_mse, epoch);
        } else if cfg.patience.is_some_and(|p| epoch - mark.1 >= p) {
            info!("no significant validation improvement since epoch {}, stopping at {epoch}", mark.1);
            break;
        }
    }
    let net = best.1;
    metrics.test_mse = if parts.test.is_empty() { f64::NAN } else { net.mse(&parts.test)? };
    info!("best epoch {} val {:.3e} test {:.3e}", metrics.best_epoch, best.0, metrics.test_mse);
    Ok((net, metrics))
}
