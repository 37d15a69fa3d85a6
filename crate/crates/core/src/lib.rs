//! Deterministic multi-vehicle traffic simulation for testing automated
//! driving controllers.
//!
//! * [`bus`]: simulation clock, pub/sub fabric, bags and the TCP bridge
//! * [`dynamics`]: kinematic bicycle model with a PD velocity loop
//! * [`twin`]: GRU encoder/decoder velocity twin, trainer and dataset tools
//! * [`control`]: pure pursuit steering and constant-time-gap ACC
//! * [`safety`]: rule-based filter and GR(1)-synthesized shields
//! * [`simkit`]: scenarios, hazards, the engine loop, metrics and the CLI

// `!(x > 0.0)` is the NaN-rejecting form used throughout input validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bus;
pub mod control;
pub mod dynamics;
pub mod jsonfmt;
pub mod safety;
pub mod simkit;
pub mod twin;
