//! Feedback dataset and the two parameter learners: a predictor over a
//! fixed parameter library with a greedy policy on top, and a squashed
//! Gaussian actor with a feedback critic.

mod continuous;
mod dataset;
mod discrete;

use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use continuous::{ActionSample, ContinuousConfig, ContinuousPolicy, Critic, LOG_STD_MAX, LOG_STD_MIN};
pub use dataset::{FeedbackDataset, FeedbackRecord, FeedbackSource, ParamChoice, LOG_VERSION};
pub use discrete::{argmax, softmax, DiscretePolicy, EpsilonSchedule};

use crate::nn::NnError;
use crate::planner::{RobotState, STATE_DIM};

/// Policy checkpoint format version.
pub const POLICY_CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error, PartialEq)]
pub enum LearnError {
    #[error("mode mismatch: {0}")]
    ModeMismatch(String),
    #[error("empty batch")]
    EmptyBatch,
    #[error("invalid learner config: {0}")]
    InvalidConfig(String),
    #[error("dataset log: {0}")]
    Log(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Nn(#[from] NnError),
}

/// Either learner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum Policy {
    Discrete(DiscretePolicy),
    Continuous(ContinuousPolicy),
}

impl Policy {
    pub fn train_steps(&self) -> u64 {
        match self {
            Policy::Discrete(p) => p.train_steps,
            Policy::Continuous(p) => p.train_steps,
        }
    }
}

/// Policy plus the trainer's counters, versioned.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyCheckpoint {
    pub version: u32,
    /// Control ticks run so far.
    pub global_step: u64,
    /// Feedback records collected so far.
    pub feedback_count: u64,
    /// Episodes started so far.
    pub episodes: u64,
    pub policy: Policy,
}

impl PolicyCheckpoint {
    pub fn new(policy: Policy) -> Self {
        Self {
            version: POLICY_CHECKPOINT_VERSION,
            global_step: 0,
            feedback_count: 0,
            episodes: 0,
            policy,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, LearnError> {
        let ck: Self = serde_json::from_str(text).map_err(|e| LearnError::Checkpoint(e.to_string()))?;
        if ck.version != POLICY_CHECKPOINT_VERSION {
            return Err(LearnError::Checkpoint(format!("unsupported version {}", ck.version)));
        }
        match &ck.policy {
            Policy::Discrete(p) => p.net.validate()?,
            Policy::Continuous(p) => {
                p.actor.validate()?;
                p.critic.validate()?;
            }
        }
        Ok(ck)
    }

    /// Writes atomically (temp file, then rename).
    pub fn save(&self, path: &Path) -> Result<(), LearnError> {
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.to_json()).map_err(|e| LearnError::Checkpoint(format!("{}: {e}", tmp.display())))?;
        std::fs::rename(&tmp, path).map_err(|e| LearnError::Checkpoint(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, LearnError> {
        let text = std::fs::read_to_string(path).map_err(|e| LearnError::Checkpoint(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}

/// Stacks states into a `batch x 721` matrix.
pub(crate) fn state_matrix<'a>(states: impl Iterator<Item = &'a RobotState>) -> Array2<f64> {
    let mut data = Vec::new();
    let mut rows = 0;
    for s in states {
        data.extend_from_slice(&s.scan);
        data.push(s.local_goal);
        rows += 1;
    }
    Array2::from_shape_vec((rows, STATE_DIM), data).expect("states have STATE_DIM values")
}
