//! JSON frames exchanged with live-feedback clients over a websocket.
//!
//! Server to client: `hello` once per connection, `grid` whenever an episode
//! starts (the occupancy grid in the text format), `state` at the sim rate
//! and `error` for rejected client frames. Client to server: `feedback`.
//!
//! `t` in state frames is session time in seconds; it never resets between
//! episodes. A feedback frame's `client_ts` is the `t` of the newest state
//! frame the client had shown when the button was pressed.

use serde::{Deserialize, Serialize};

use crate::planner::PlannerParams;

pub const PROTOCOL_VERSION: u32 = 1;

/// Ranges in a state frame.
pub const FRAME_SCAN_RAYS: usize = 90;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ServerFrame {
    Hello {
        version: u32,
        session_id: String,
        /// Feedback levels the client may send; 2 means good/bad.
        levels: u32,
        sim_hz: f64,
        feedback_hz: f64,
    },
    Grid {
        episode: u64,
        text: String,
    },
    State(StateFrame),
    Error {
        code: ErrorCode,
        detail: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateFrame {
    pub t: f64,
    /// x, y in meters and heading in radians.
    pub pose: [f64; 3],
    /// Ranges in meters, evenly spaced over the field of view.
    pub scan: Vec<f64>,
    pub theta: Theta,
    pub episode: EpisodeInfo,
}

/// Active parameters: a library index or explicit values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Theta {
    Index { index: usize },
    Values(PlannerParams),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpisodeInfo {
    pub id: u64,
    pub status: EpisodeStatus,
    /// Seconds since the episode started.
    pub elapsed: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EpisodeStatus {
    Running,
    Success,
    Collision,
    Timeout,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    MalformedFrame,
    UnknownSession,
    InvalidPolarity,
    StaleFeedback,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ClientFrame {
    Feedback(FeedbackEvent),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeedbackEvent {
    pub session_id: String,
    pub client_ts: f64,
    pub polarity: Polarity,
}

/// `"good"`, `"bad"` or a level index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Polarity {
    Named(Named),
    Level(u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Named {
    Good,
    Bad,
}

impl Polarity {
    /// Level index under `levels` feedback levels: bad is 0, good the top.
    pub fn level(self, levels: u32) -> Option<u32> {
        match self {
            Polarity::Named(Named::Bad) => Some(0),
            Polarity::Named(Named::Good) => Some(levels - 1),
            Polarity::Level(l) if l < levels => Some(l),
            Polarity::Level(_) => None,
        }
    }
}

impl ServerFrame {
    pub fn error(code: ErrorCode, detail: impl Into<String>) -> Self {
        ServerFrame::Error {
            code,
            detail: detail.into(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("frame serializes")
    }

    /// Every number in the frame is finite.
    pub fn is_finite(&self) -> bool {
        match self {
            ServerFrame::Hello { sim_hz, feedback_hz, .. } => sim_hz.is_finite() && feedback_hz.is_finite(),
            ServerFrame::State(s) => s.is_finite(),
            ServerFrame::Grid { .. } | ServerFrame::Error { .. } => true,
        }
    }
}

impl StateFrame {
    pub fn is_finite(&self) -> bool {
        let theta_ok = match &self.theta {
            Theta::Index { .. } => true,
            Theta::Values(p) => p.to_array().iter().all(|v| v.is_finite()),
        };
        self.t.is_finite()
            && self.pose.iter().all(|v| v.is_finite())
            && self.scan.iter().all(|v| v.is_finite())
            && self.episode.elapsed.is_finite()
            && theta_ok
    }
}

pub fn parse_client_frame(text: &str) -> Result<ClientFrame, ServerFrame> {
    let frame: ClientFrame =
        serde_json::from_str(text).map_err(|e| ServerFrame::error(ErrorCode::MalformedFrame, e.to_string()))?;
    let ClientFrame::Feedback(ev) = &frame;
    if !ev.client_ts.is_finite() {
        return Err(ServerFrame::error(ErrorCode::MalformedFrame, "client_ts must be finite"));
    }
    Ok(frame)
}
