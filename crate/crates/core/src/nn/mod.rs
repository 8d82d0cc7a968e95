//! Small fully connected networks with reverse-mode gradients and Adam.

mod adam;
mod mlp;

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use adam::{adam_step, AdamState, DEFAULT_LR};
pub use mlp::{Grads, Mlp, Trace};

/// Hidden widths used by every network in the learner.
pub const HIDDEN: [usize; 2] = [128, 128];

/// Checkpoint format version written by this build.
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error, PartialEq)]
pub enum NnError {
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("invalid shape: {0}")]
    InvalidShape(String),
    #[error("non-finite parameter")]
    NonFinite,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

/// `[input, 128, 128, output]`.
pub fn default_sizes(input: usize, output: usize) -> Vec<usize> {
    let mut s = vec![input];
    s.extend(HIDDEN);
    s.push(output);
    s
}

/// A network with its optimizer and global step, tagged with a format
/// version.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub global_step: u64,
    pub net: Mlp,
    pub optimizer: AdamState,
}

impl Checkpoint {
    pub fn new(net: Mlp, optimizer: AdamState, global_step: u64) -> Self {
        Self {
            version: CHECKPOINT_VERSION,
            global_step,
            net,
            optimizer,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, NnError> {
        let ck: Checkpoint = serde_json::from_str(text).map_err(|e| NnError::Checkpoint(e.to_string()))?;
        if ck.version != CHECKPOINT_VERSION {
            return Err(NnError::Checkpoint(format!("unsupported version {}", ck.version)));
        }
        ck.net.validate()?;
        if ck.optimizer.len() != ck.net.num_params() {
            return Err(NnError::Checkpoint("optimizer state does not match network".into()));
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<(), NnError> {
        std::fs::write(path, self.to_json()).map_err(|e| NnError::Checkpoint(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, NnError> {
        let text = std::fs::read_to_string(path).map_err(|e| NnError::Checkpoint(e.to_string()))?;
        Self::from_json(&text)
    }
}
