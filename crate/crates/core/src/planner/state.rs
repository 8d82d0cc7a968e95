use serde::{Deserialize, Serialize};

use crate::world::{normalize_angle, Scan, SCAN_BEAMS};

/// Flattened length of a state: 720 scan values plus the local goal angle.
pub const STATE_DIM: usize = SCAN_BEAMS + 1;

/// Learner input: ranges normalized by the sensor's max range, and the
/// local goal direction in the robot frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotState {
    pub scan: Vec<f64>,
    pub local_goal: f64,
}

impl RobotState {
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(STATE_DIM);
        v.extend_from_slice(&self.scan);
        v.push(self.local_goal);
        v
    }

    pub fn from_slice(values: &[f64]) -> Option<Self> {
        if values.len() != STATE_DIM || values.iter().any(|v| !v.is_finite()) {
            return None;
        }
        Some(Self {
            scan: values[..SCAN_BEAMS].to_vec(),
            local_goal: values[SCAN_BEAMS],
        })
    }

    pub fn is_valid(&self) -> bool {
        self.scan.len() == SCAN_BEAMS
            && self.scan.iter().all(|v| v.is_finite())
            && self.local_goal.is_finite()
    }
}

pub fn make_state(scan: &Scan, local_goal: f64) -> RobotState {
    RobotState {
        scan: scan.ranges.iter().map(|r| r / scan.max_range).collect(),
        local_goal: normalize_angle(local_goal),
    }
}
