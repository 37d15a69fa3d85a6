use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::data::{HistoryWindow, Sample};
use super::gru::{add_assign, matvec_add, matvec_t_add, outer_add, GruCellParams, StepCache};
use super::TwinError;
use crate::bus::SimRng;
use crate::jsonfmt;

pub const WEIGHTS_VERSION: u32 = 1;

/// Fully connected layer, `rows` outputs by `cols` inputs, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub rows: usize,
    pub cols: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, weight: vec![0.0; rows * cols], bias: vec![0.0; rows] }
    }

    pub fn init_uniform(rows: usize, cols: usize, rng: &mut SimRng) -> Self {
        let a = (1.0 / cols as f64).sqrt();
        let mut d = Self::zeros(rows, cols);
        d.weight.iter_mut().chain(d.bias.iter_mut()).for_each(|w| *w = rng.gen_range(-a..a));
        d
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut out = self.bias.clone();
        matvec_add(&mut out, &self.weight, x, self.cols);
        out
    }

    fn valid(&self) -> bool {
        self.weight.len() == self.rows * self.cols
            && self.bias.len() == self.rows
            && self.weight.iter().chain(&self.bias).all(|w| w.is_finite())
    }
}

/// Per-channel affine input scaling over the (u, v) channels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: [f64; 2],
    pub std: [f64; 2],
}

impl Default for Normalizer {
    fn default() -> Self {
        Self { mean: [0.0; 2], std: [1.0; 2] }
    }
}

impl Normalizer {
    /// Statistics over every (u, v) entry of every window. A channel with
    /// zero spread gets std 1.
    pub fn fit(samples: &[Sample]) -> Self {
        let mut n = 0usize;
        let mut sum = [0.0; 2];
        for s in samples {
            n += s.window.len();
            sum[0] += s.window.u.iter().sum::<f64>();
            sum[1] += s.window.v.iter().sum::<f64>();
        }
        if n == 0 {
            return Self::default();
        }
        let mean = [sum[0] / n as f64, sum[1] / n as f64];
        let mut sq = [0.0; 2];
        for s in samples {
            sq[0] += s.window.u.iter().map(|u| (u - mean[0]).powi(2)).sum::<f64>();
            sq[1] += s.window.v.iter().map(|v| (v - mean[1]).powi(2)).sum::<f64>();
        }
        let std = sq.map(|q| {
            let s = (q / n as f64).sqrt();
            if s > 1e-12 {
                s
            } else {
                1.0
            }
        });
        Self { mean, std }
    }

    pub fn normalize(&self, u: f64, v: f64) -> [f64; 2] {
        [(u - self.mean[0]) / self.std[0], (v - self.mean[1]) / self.std[1]]
    }

    pub fn denormalize(&self, x: [f64; 2]) -> (f64, f64) {
        (x[0] * self.std[0] + self.mean[0], x[1] * self.std[1] + self.mean[1])
    }
}

/// Layer sizes of a [`TwinNetwork`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetShape {
    pub window: usize,
    pub encoder_hidden: usize,
    pub latent: usize,
    pub decoder_hidden: usize,
}

impl Default for NetShape {
    fn default() -> Self {
        Self { window: 20, encoder_hidden: 32, latent: 64, decoder_hidden: 32 }
    }
}

/// GRU encoder, ReLU latent layer, one-step GRU decoder and a scalar head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwinNetwork {
    pub window: usize,
    pub normalizer: Normalizer,
    pub encoder: GruCellParams,
    pub latent: Dense,
    pub decoder: GruCellParams,
    pub output: Dense,
}

/// Gradient record with the same layout as the trainable part of a network.
#[derive(Debug, Clone, PartialEq)]
pub struct TwinGrad {
    pub encoder: GruCellParams,
    pub latent: Dense,
    pub decoder: GruCellParams,
    pub output: Dense,
}

impl TwinGrad {
    pub fn zeros_like(net: &TwinNetwork) -> Self {
        Self {
            encoder: GruCellParams::zeros(net.encoder.input_size, net.encoder.hidden_size),
            latent: Dense::zeros(net.latent.rows, net.latent.cols),
            decoder: GruCellParams::zeros(net.decoder.input_size, net.decoder.hidden_size),
            output: Dense::zeros(net.output.rows, net.output.cols),
        }
    }

    pub fn slices(&self) -> Vec<&[f64]> {
        let mut v: Vec<&[f64]> = self.encoder.slices().to_vec();
        v.push(&self.latent.weight);
        v.push(&self.latent.bias);
        v.extend(self.decoder.slices());
        v.push(&self.output.weight);
        v.push(&self.output.bias);
        v
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v: Vec<&mut [f64]> = Vec::with_capacity(22);
        v.extend(self.encoder.slices_mut());
        v.push(&mut self.latent.weight);
        v.push(&mut self.latent.bias);
        v.extend(self.decoder.slices_mut());
        v.push(&mut self.output.weight);
        v.push(&mut self.output.bias);
        v
    }

    pub fn add(&mut self, other: &TwinGrad) {
        for (a, b) in self.slices_mut().into_iter().zip(other.slices()) {
            add_assign(a, b);
        }
    }

    pub fn scale(&mut self, k: f64) {
        for s in self.slices_mut() {
            s.iter_mut().for_each(|g| *g *= k);
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.slices().iter().flat_map(|s| s.iter()).fold(0.0, |m, g| m.max(g.abs()))
    }
}

struct ForwardCache {
    enc: Vec<StepCache>,
    h_enc: Vec<f64>,
    latent_pre: Vec<f64>,
    dec: StepCache,
    h_dec: Vec<f64>,
    y: f64,
}

#[derive(Serialize, Deserialize)]
struct WeightsFile {
    version: u32,
    config: NetShape,
    #[serde(flatten)]
    net: TwinNetwork,
}

impl TwinNetwork {
    pub fn zeros(shape: NetShape) -> Self {
        Self {
            window: shape.window,
            normalizer: Normalizer::default(),
            encoder: GruCellParams::zeros(2, shape.encoder_hidden),
            latent: Dense::zeros(shape.latent, shape.encoder_hidden),
            decoder: GruCellParams::zeros(shape.latent, shape.decoder_hidden),
            output: Dense::zeros(1, shape.decoder_hidden),
        }
    }

    pub fn init(shape: NetShape, rng: &mut SimRng) -> Self {
        Self {
            window: shape.window,
            normalizer: Normalizer::default(),
            encoder: GruCellParams::init_uniform(2, shape.encoder_hidden, rng),
            latent: Dense::init_uniform(shape.latent, shape.encoder_hidden, rng),
            decoder: GruCellParams::init_uniform(shape.latent, shape.decoder_hidden, rng),
            output: Dense::init_uniform(1, shape.decoder_hidden, rng),
        }
    }

    pub fn shape(&self) -> NetShape {
        NetShape {
            window: self.window,
            encoder_hidden: self.encoder.hidden_size,
            latent: self.latent.rows,
            decoder_hidden: self.decoder.hidden_size,
        }
    }

    pub fn validate(&self) -> Result<(), TwinError> {
        self.encoder.validate()?;
        self.decoder.validate()?;
        let s = self.shape();
        let wired = self.window >= 1
            && self.encoder.input_size == 2
            && self.latent.cols == s.encoder_hidden
            && self.decoder.input_size == s.latent
            && self.output.rows == 1
            && self.output.cols == s.decoder_hidden;
        if !wired || !self.latent.valid() || !self.output.valid() {
            return Err(TwinError::Shape("layer sizes do not chain".into()));
        }
        if self.normalizer.std.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(TwinError::Shape("normalizer std must be positive".into()));
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.param_slices().iter().map(|s| s.len()).sum()
    }

    pub fn param_slices(&self) -> Vec<&[f64]> {
        let mut v: Vec<&[f64]> = self.encoder.slices().to_vec();
        v.push(&self.latent.weight);
        v.push(&self.latent.bias);
        v.extend(self.decoder.slices());
        v.push(&self.output.weight);
        v.push(&self.output.bias);
        v
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v: Vec<&mut [f64]> = Vec::with_capacity(22);
        v.extend(self.encoder.slices_mut());
        v.push(&mut self.latent.weight);
        v.push(&mut self.latent.bias);
        v.extend(self.decoder.slices_mut());
        v.push(&mut self.output.weight);
        v.push(&mut self.output.bias);
        v
    }

    fn check_window(&self, w: &HistoryWindow) -> Result<(), TwinError> {
        if w.u.len() != self.window || w.v.len() != self.window {
            return Err(TwinError::WindowMismatch { expected: self.window, got: w.u.len().min(w.v.len()) });
        }
        Ok(())
    }

    /// Predicted velocity for the step after the window.
    pub fn forward(&self, window: &HistoryWindow) -> Result<f64, TwinError> {
        self.check_window(window)?;
        Ok(self.forward_cached(window).y)
    }

    fn forward_cached(&self, window: &HistoryWindow) -> ForwardCache {
        let he = self.encoder.hidden_size;
        let mut enc = Vec::with_capacity(self.window);
        let mut h = vec![0.0; he];
        let mut next = vec![0.0; he];
        for (u, v) in window.u.iter().zip(&window.v) {
            let x = self.normalizer.normalize(*u, *v);
            let mut c = StepCache::default();
            self.encoder.forward_cached(&x, &h, &mut c, &mut next);
            enc.push(c);
            std::mem::swap(&mut h, &mut next);
        }
        let latent_pre = self.latent.apply(&h);
        let latent: Vec<f64> = latent_pre.iter().map(|a| a.max(0.0)).collect();
        let mut dec = StepCache::default();
        let h0 = vec![0.0; self.decoder.hidden_size];
        let mut h_dec = vec![0.0; self.decoder.hidden_size];
        self.decoder.forward_cached(&latent, &h0, &mut dec, &mut h_dec);
        let y = self.output.apply(&h_dec)[0];
        ForwardCache { enc, h_enc: h, latent_pre, dec, h_dec, y }
    }

    /// Backpropagates `dy` (dL/dŷ) for one cached sample into `grad`.
    fn backward(&self, cache: &ForwardCache, dy: f64, grad: &mut TwinGrad) {
        grad.output.bias[0] += dy;
        outer_add(&mut grad.output.weight, &[dy], &cache.h_dec);
        let dh_dec: Vec<f64> = self.output.weight.iter().map(|w| w * dy).collect();

        let mut dh0 = vec![0.0; self.decoder.hidden_size];
        let mut d_latent = vec![0.0; self.latent.rows];
        self.decoder.backward(&cache.dec, &dh_dec, &mut grad.decoder, &mut dh0, Some(&mut d_latent));

        let d_pre: Vec<f64> =
            d_latent.iter().zip(&cache.latent_pre).map(|(g, a)| if *a > 0.0 { *g } else { 0.0 }).collect();
        outer_add(&mut grad.latent.weight, &d_pre, &cache.h_enc);
        add_assign(&mut grad.latent.bias, &d_pre);
        let mut dh = vec![0.0; self.encoder.hidden_size];
        matvec_t_add(&mut dh, &self.latent.weight, &d_pre, self.latent.cols);

        let mut dh_prev = vec![0.0; self.encoder.hidden_size];
        for c in cache.enc.iter().rev() {
            self.encoder.backward(c, &dh, &mut grad.encoder, &mut dh_prev, None);
            std::mem::swap(&mut dh, &mut dh_prev);
        }
    }

    /// Mean squared error over `batch` and its gradient.
    pub fn loss_and_grad(&self, batch: &[&Sample]) -> Result<(f64, TwinGrad), TwinError> {
        let mut grad = TwinGrad::zeros_like(self);
        let loss = self.accumulate_grad(batch, batch.len(), &mut grad)?;
        Ok((loss, grad))
    }

    /// Adds the gradient of `Σ (ŷ−y)² / denom` over `batch` into `grad` and
    /// returns that partial loss.
    pub(crate) fn accumulate_grad(
        &self,
        batch: &[&Sample],
        denom: usize,
        grad: &mut TwinGrad,
    ) -> Result<f64, TwinError> {
        if batch.is_empty() {
            return Err(TwinError::EmptyBatch);
        }
        let scale = 1.0 / denom as f64;
        let mut loss = 0.0;
        // all-zero windows (as produced by augmentation) share one pass
        let mut zero: Option<ForwardCache> = None;
        let mut zero_dy = 0.0;
        for s in batch {
            self.check_window(&s.window)?;
            if s.window.is_zero() {
                let y = zero.get_or_insert_with(|| self.forward_cached(&s.window)).y;
                let err = y - s.target;
                loss += err * err * scale;
                zero_dy += 2.0 * err * scale;
                continue;
            }
            let cache = self.forward_cached(&s.window);
            let err = cache.y - s.target;
            loss += err * err * scale;
            self.backward(&cache, 2.0 * err * scale, grad);
        }
        if let Some(cache) = zero {
            self.backward(&cache, zero_dy, grad);
        }
        Ok(loss)
    }

    pub fn mse(&self, samples: &[Sample]) -> Result<f64, TwinError> {
        if samples.is_empty() {
            return Err(TwinError::EmptyBatch);
        }
        let mut acc = 0.0;
        let mut zero_y = None;
        for s in samples {
            let y = if s.window.is_zero() && s.window.len() == self.window {
                *zero_y.get_or_insert(self.forward(&s.window)?)
            } else {
                self.forward(&s.window)?
            };
            acc += (y - s.target) * (y - s.target);
        }
        Ok(acc / samples.len() as f64)
    }

    pub fn to_json(&self) -> String {
        let file = WeightsFile { version: WEIGHTS_VERSION, config: self.shape(), net: self.clone() };
        jsonfmt::to_string_pretty(&file).expect("weights serialize")
    }

    pub fn from_json(text: &str) -> Result<Self, TwinError> {
        let file: WeightsFile = serde_json::from_str(text).map_err(|e| TwinError::Weights(e.to_string()))?;
        if file.version != WEIGHTS_VERSION {
            return Err(TwinError::Weights(format!("unsupported weights version {}", file.version)));
        }
        if file.config != file.net.shape() {
            return Err(TwinError::Weights("config echo disagrees with layer sizes".into()));
        }
        file.net.validate()?;
        Ok(file.net)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), TwinError> {
        fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, TwinError> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}
