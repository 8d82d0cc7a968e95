//! Simulated evaluative feedback: the robot's speed projected on the local
//! goal direction, optionally binned into discrete levels.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum OracleError {
    #[error("feedback {e} outside [-{e_max}, {e_max}]")]
    OutOfRange { e: f64, e_max: f64 },
    #[error("invalid oracle config: {0}")]
    InvalidConfig(String),
}

/// Feedback resolution: a finite level count or continuous.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "LevelsRepr", into = "LevelsRepr")]
pub enum Levels {
    Discrete(u32),
    Continuous,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum LevelsRepr {
    Count(u32),
    Name(String),
}

impl TryFrom<LevelsRepr> for Levels {
    type Error = String;

    fn try_from(r: LevelsRepr) -> Result<Self, Self::Error> {
        match r {
            LevelsRepr::Count(n) if n >= 2 => Ok(Levels::Discrete(n)),
            LevelsRepr::Count(n) => Err(format!("levels must be >= 2, got {n}")),
            LevelsRepr::Name(s) if s == "continuous" => Ok(Levels::Continuous),
            LevelsRepr::Name(s) => Err(format!("levels must be an integer or \"continuous\", got {s:?}")),
        }
    }
}

impl From<Levels> for LevelsRepr {
    fn from(l: Levels) -> Self {
        match l {
            Levels::Discrete(n) => LevelsRepr::Count(n),
            Levels::Continuous => LevelsRepr::Name("continuous".into()),
        }
    }
}

impl std::str::FromStr for Levels {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "continuous" | "inf" => Ok(Levels::Continuous),
            n => match n.parse::<u32>() {
                Ok(n) if n >= 2 => Ok(Levels::Discrete(n)),
                _ => Err(format!("levels must be an integer >= 2 or \"continuous\", got {s:?}")),
            },
        }
    }
}

impl std::fmt::Display for Levels {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Levels::Discrete(n) => write!(f, "{n}"),
            Levels::Continuous => f.write_str("continuous"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleConfig {
    pub levels: Levels,
    pub rate_hz: f64,
    pub e_max: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            levels: Levels::Discrete(3),
            rate_hz: 1.0,
            e_max: 2.0,
        }
    }
}

impl OracleConfig {
    pub fn validate(&self) -> Result<(), OracleError> {
        if let Levels::Discrete(n) = self.levels {
            if n < 2 {
                return Err(OracleError::InvalidConfig(format!("levels {n} < 2")));
            }
        }
        if !(self.rate_hz > 0.0 && self.rate_hz.is_finite()) {
            return Err(OracleError::InvalidConfig(format!("rate_hz {}", self.rate_hz)));
        }
        if !(self.e_max > 0.0 && self.e_max.is_finite()) {
            return Err(OracleError::InvalidConfig(format!("e_max {}", self.e_max)));
        }
        Ok(())
    }
}

/// A feedback value as stored: a level index or a raw scalar.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Feedback {
    Level(u32),
    Value(f64),
}

/// `v * cos(g)`.
pub fn oracle_feedback(v: f64, g: f64) -> f64 {
    v * g.cos()
}

/// Uniform bins over `[-e_max, e_max]`; continuous feedback passes through.
pub fn discretize(e: f64, cfg: &OracleConfig) -> Result<Feedback, OracleError> {
    if !(e.abs() <= cfg.e_max) {
        return Err(OracleError::OutOfRange { e, e_max: cfg.e_max });
    }
    Ok(bin(e, cfg))
}

/// Like [`discretize`] but clamps out-of-range feedback into
/// `[-e_max, e_max]`; the flag reports whether clamping happened.
pub fn discretize_saturating(e: f64, cfg: &OracleConfig) -> (Feedback, bool) {
    let clamped = e.clamp(-cfg.e_max, cfg.e_max);
    let clamped = if clamped.is_nan() { 0.0 } else { clamped };
    (bin(clamped, cfg), clamped != e)
}

fn bin(e: f64, cfg: &OracleConfig) -> Feedback {
    match cfg.levels {
        Levels::Continuous => Feedback::Value(e),
        Levels::Discrete(n) => {
            let l = ((e + cfg.e_max) / (2.0 * cfg.e_max) * n as f64).floor() as i64;
            Feedback::Level(l.clamp(0, n as i64 - 1) as u32)
        }
    }
}
