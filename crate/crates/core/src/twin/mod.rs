//! Learned velocity twin: a GRU encoder/decoder mapping the recent command
//! and velocity history to the next velocity, its trainer and data tools.

pub mod data;
pub mod gru;
pub mod network;
pub mod train;

use thiserror::Error;

pub use data::{
    augment_zeros, baseline_mse, ingest_csv, kinematic_baseline, read_log, split, synthesize_log, synthesize_samples,
    windows_from_log, write_log, HistoryWindow, LogRow, Provenance, Sample, SampleSet, Split, SynthConfig,
};
pub use gru::GruCellParams;
pub use network::{Dense, NetShape, Normalizer, TwinGrad, TwinNetwork};
pub use train::{train, train_split, Adam, TrainConfig, TrainMetrics};

use crate::dynamics::{advance_pose, DynamicsError, KinematicParams, VehicleState};

#[derive(Debug, Error)]
pub enum TwinError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("window length {got} does not match network window {expected}")]
    WindowMismatch { expected: usize, got: usize },
    #[error("empty batch")]
    EmptyBatch,
    #[error("need at least 5 samples to split, got {0}")]
    TooFewSamples(usize),
    #[error("need at least {needed} rows, got {rows}")]
    TooFewRows { rows: usize, needed: usize },
    #[error("line {line}: {reason}")]
    Csv { line: usize, reason: String },
    #[error("training diverged at epoch {epoch}")]
    Diverged { epoch: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("weights file: {0}")]
    Weights(String),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Advances a vehicle whose velocity comes from the twin.
///
/// The current `(u, v)` pair is appended to the window before inference, so
/// the network sees the same alignment as in training: the command and
/// velocity at step `k` predict the velocity at step `k+1`. Position and
/// heading use the bicycle rows with the current velocity.
pub fn twin_step(
    net: &TwinNetwork,
    window: &HistoryWindow,
    state: &VehicleState,
    delta: f64,
    u: f64,
    dt: f64,
    params: &KinematicParams,
) -> Result<(VehicleState, HistoryWindow), TwinError> {
    if window.len() != net.window {
        return Err(TwinError::WindowMismatch { expected: net.window, got: window.len() });
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(DynamicsError::BadStep(dt).into());
    }
    params.check_steering(delta)?;
    let mut next_window = window.clone();
    next_window.push(u, state.v);
    let v_next = net.forward(&next_window)?.clamp(0.0, params.v_max);
    let (x, y, theta) = advance_pose(state, delta, dt, params.wheelbase);
    Ok((VehicleState { x, y, theta, v: v_next }, next_window))
}
