//! Scenario worlds and the simulation engine that ties the bus, vehicle
//! models, controllers and shields together.

mod compare;
mod engine;
mod scenario;
mod vil;
mod world;

use thiserror::Error;

pub use compare::{
    compare_models, replay_csv, vehicle_streams, write_trace_csv, Comparison, Streams, COMPARE_DT, TRACE_HEADER,
};
pub use engine::{
    engine_run, BridgeTimeouts, RunConfig, RunMetrics, RunOutput, TrajSample, VehicleMetrics, TOPIC_COMMAND,
    TOPIC_LIGHT, TOPIC_PATH, TOPIC_PEDESTRIAN, TOPIC_POSE, TOPIC_SENSOR, TOPIC_TWIST,
};
pub use scenario::{
    driving_path, load_scenario, CrossingSpec, Direction, LightSpec, MapExtent, ModelKind, PedestrianSpec,
    SamplingSpec, Scenario, TrackGeometry, TrackSpec, VehicleSpec, SCENARIO_VERSION,
};
pub use vil::{run_vil_client, VilClientConfig};
pub use world::{
    hazard_query, light_color, pedestrian_step, point_segment_distance, segment_crossings, HazardKind, HazardQuery,
    LightSchedule, PedPhase, Pedestrian, StopPoint,
};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("{0}")]
    Io(String),
    #[error("schema violation at {path}: {msg}")]
    Schema { path: String, msg: String },
    #[error("{field}: {msg}")]
    Invalid { field: String, msg: String },
    #[error("dangling reference at {field}: {msg}")]
    Reference { field: String, msg: String },
    #[error("configuration: {0}")]
    Config(String),
    #[error("simulation failed: {0}")]
    Runtime(String),
    #[error("run aborted: {reason}")]
    BridgeAbort { reason: String, partial: Box<RunOutput> },
    #[error("{0}")]
    EmptyStream(String),
}

impl SimError {
    /// Errors caused by bad input rather than by the run itself.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            SimError::Io(_)
                | SimError::Schema { .. }
                | SimError::Invalid { .. }
                | SimError::Reference { .. }
                | SimError::Config(_)
        )
    }
}
