//! Episode runner, oracle-feedback training loop, policy evaluation and the
//! live human-feedback service.

mod episode;
pub mod protocol;
mod serve;
mod train;

use thiserror::Error;

pub use episode::{
    run_episode, ContinuousSelector, DiscreteSelector, Episode, EpisodeConfig, EpisodeResult, Exploration,
    FeedbackMode, FixedParams, Outcome, ParamSelector, TickReport,
};
pub use serve::{serve, FeedbackWindows, ServeConfig, ServeHandle, WindowStats};
pub use train::{
    evaluate, generate_benchmark, open_run, train, Benchmark, EvalRun, TrainConfig, TrainReport, TrainRun, CHECKPOINT_FILE,
    DATASET_FILE,
};

use crate::apple::LearnError;
use crate::planner::PlanError;
use crate::world::WorldError;

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Learn(#[from] LearnError),
    #[error("{0}")]
    Io(String),
    #[error("protocol: {0}")]
    Protocol(String),
}

impl From<std::io::Error> for GatewayError {
    fn from(e: std::io::Error) -> Self {
        GatewayError::Io(e.to_string())
    }
}
