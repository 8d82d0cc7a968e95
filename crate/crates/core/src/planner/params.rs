use serde::{Deserialize, Serialize};

use super::PlanError;

pub const PARAM_DIM: usize = 8;

pub const PARAM_NAMES: [&str; PARAM_DIM] = [
    "max_vel_x",
    "max_vel_theta",
    "vx_samples",
    "vtheta_samples",
    "occdist_scale",
    "pdist_scale",
    "gdist_scale",
    "inflation_radius",
];

/// Dimensions holding integer sample counts.
const INTEGER_DIMS: [usize; 2] = [2, 3];

/// One point in the eight-dimensional DWA parameter space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlannerParams {
    pub max_vel_x: f64,
    pub max_vel_theta: f64,
    pub vx_samples: u32,
    pub vtheta_samples: u32,
    pub occdist_scale: f64,
    pub pdist_scale: f64,
    pub gdist_scale: f64,
    pub inflation_radius: f64,
}

impl PlannerParams {
    pub fn to_array(&self) -> [f64; PARAM_DIM] {
        [
            self.max_vel_x,
            self.max_vel_theta,
            self.vx_samples as f64,
            self.vtheta_samples as f64,
            self.occdist_scale,
            self.pdist_scale,
            self.gdist_scale,
            self.inflation_radius,
        ]
    }

    /// Integer dimensions are rounded to nearest.
    pub fn from_array(a: [f64; PARAM_DIM]) -> Self {
        Self {
            max_vel_x: a[0],
            max_vel_theta: a[1],
            vx_samples: a[2].round().max(0.0) as u32,
            vtheta_samples: a[3].round().max(0.0) as u32,
            occdist_scale: a[4],
            pdist_scale: a[5],
            gdist_scale: a[6],
            inflation_radius: a[7],
        }
    }

    /// Physical sanity: what `dwa_plan` needs to run at all.
    pub fn validate(&self) -> Result<(), PlanError> {
        let a = self.to_array();
        if a.iter().any(|v| !v.is_finite()) {
            return Err(PlanError::InvalidParams("non-finite value".into()));
        }
        if self.max_vel_x <= 0.0 || self.max_vel_theta <= 0.0 {
            return Err(PlanError::InvalidParams("velocity limits must be positive".into()));
        }
        if self.vx_samples < 2 || self.vtheta_samples < 2 {
            return Err(PlanError::InvalidParams("need at least 2 samples per axis".into()));
        }
        if self.occdist_scale < 0.0 || self.pdist_scale < 0.0 || self.gdist_scale < 0.0 {
            return Err(PlanError::InvalidParams("cost scales must be non-negative".into()));
        }
        if self.inflation_radius < 0.0 {
            return Err(PlanError::InvalidParams("negative inflation radius".into()));
        }
        Ok(())
    }
}

/// Per-dimension [min, max] of the continuous parameter space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamBounds {
    pub min: PlannerParams,
    pub max: PlannerParams,
}

impl Default for ParamBounds {
    #[allow(clippy::approx_constant)]
    fn default() -> Self {
        Self {
            min: PlannerParams {
                max_vel_x: 0.2,
                max_vel_theta: 0.31,
                vx_samples: 4,
                vtheta_samples: 8,
                occdist_scale: 0.10,
                pdist_scale: 0.10,
                gdist_scale: 0.01,
                inflation_radius: 0.10,
            },
            max: PlannerParams {
                max_vel_x: 2.0,
                max_vel_theta: 3.14,
                vx_samples: 20,
                vtheta_samples: 40,
                occdist_scale: 1.50,
                pdist_scale: 2.00,
                gdist_scale: 1.00,
                inflation_radius: 0.60,
            },
        }
    }
}

impl ParamBounds {
    pub fn contains(&self, p: &PlannerParams) -> bool {
        let (lo, hi, v) = (self.min.to_array(), self.max.to_array(), p.to_array());
        (0..PARAM_DIM).all(|d| v[d] >= lo[d] && v[d] <= hi[d])
    }

    pub fn midpoint(&self) -> PlannerParams {
        self.decode(&[0.0; PARAM_DIM])
    }

    /// Maps a point of [-1, 1]^8 affinely onto the box; integer dimensions
    /// are rounded to nearest, then everything is clamped into range.
    pub fn decode(&self, z: &[f64; PARAM_DIM]) -> PlannerParams {
        PlannerParams::from_array(self.decode_continuous(z)).clamped(self)
    }

    /// Affine part of `decode`, before rounding and clamping.
    pub fn decode_continuous(&self, z: &[f64; PARAM_DIM]) -> [f64; PARAM_DIM] {
        let (lo, hi) = (self.min.to_array(), self.max.to_array());
        std::array::from_fn(|d| lo[d] + (z[d] + 1.0) * 0.5 * (hi[d] - lo[d]))
    }

    /// Inverse of the affine decode.
    pub fn encode(&self, p: &PlannerParams) -> [f64; PARAM_DIM] {
        self.encode_array(&p.to_array())
    }

    pub fn encode_array(&self, v: &[f64; PARAM_DIM]) -> [f64; PARAM_DIM] {
        let (lo, hi) = (self.min.to_array(), self.max.to_array());
        std::array::from_fn(|d| 2.0 * (v[d] - lo[d]) / (hi[d] - lo[d]) - 1.0)
    }

    pub fn validate(&self) -> Result<(), PlanError> {
        let (lo, hi) = (self.min.to_array(), self.max.to_array());
        for d in 0..PARAM_DIM {
            if !(lo[d].is_finite() && hi[d].is_finite() && lo[d] < hi[d]) {
                return Err(PlanError::InvalidParams(format!(
                    "bound for {} must satisfy min < max",
                    PARAM_NAMES[d]
                )));
            }
        }
        self.min.validate()
    }
}

impl PlannerParams {
    pub fn clamped(&self, bounds: &ParamBounds) -> PlannerParams {
        let (lo, hi) = (bounds.min.to_array(), bounds.max.to_array());
        let mut v = self.to_array();
        for d in 0..PARAM_DIM {
            if INTEGER_DIMS.contains(&d) {
                v[d] = v[d].round();
            }
            v[d] = v[d].clamp(lo[d], hi[d]);
        }
        PlannerParams::from_array(v)
    }
}

/// Ordered parameter sets; entry 0 is the default set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterLibrary {
    entries: Vec<PlannerParams>,
}

impl ParameterLibrary {
    pub fn new(entries: Vec<PlannerParams>) -> Result<Self, PlanError> {
        if entries.is_empty() {
            return Err(PlanError::InvalidParams("parameter library is empty".into()));
        }
        for (i, e) in entries.iter().enumerate() {
            e.validate()
                .map_err(|err| PlanError::InvalidParams(format!("library entry {i}: {err}")))?;
        }
        Ok(Self { entries })
    }

    /// The seven hand-tuned and learned DWA sets for a Jackal-class robot.
    pub fn jackal() -> Self {
        let row = |v, w, s, t, o, p, g, i| PlannerParams {
            max_vel_x: v,
            max_vel_theta: w,
            vx_samples: s,
            vtheta_samples: t,
            occdist_scale: o,
            pdist_scale: p,
            gdist_scale: g,
            inflation_radius: i,
        };
        Self {
            entries: vec![
                row(0.50, 1.57, 6, 20, 0.10, 0.75, 1.00, 0.30),
                row(0.26, 2.00, 13, 44, 0.57, 0.76, 0.94, 0.02),
                row(0.22, 0.87, 13, 31, 0.30, 0.36, 0.71, 0.30),
                row(1.91, 1.70, 10, 47, 0.08, 0.71, 0.35, 0.23),
                row(0.72, 0.73, 19, 59, 0.62, 1.00, 0.32, 0.24),
                row(0.37, 1.33, 9, 6, 0.95, 0.83, 0.93, 0.01),
                row(0.31, 1.05, 17, 20, 0.45, 0.61, 0.22, 0.23),
            ],
        }
    }

    /// First `k` entries of the Jackal library.
    pub fn jackal_prefix(k: usize) -> Result<Self, PlanError> {
        let all = Self::jackal().entries;
        if k == 0 || k > all.len() {
            return Err(PlanError::InvalidParams(format!("library size {k} not in 1..={}", all.len())));
        }
        Self::new(all[..k].to_vec())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn default_params(&self) -> &PlannerParams {
        &self.entries[0]
    }

    pub fn get(&self, i: usize) -> Option<&PlannerParams> {
        self.entries.get(i)
    }

    pub fn entries(&self) -> &[PlannerParams] {
        &self.entries
    }
}

/// On-disk library file: `[[theta]]` records plus optional `[bounds]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LibraryFile {
    pub theta: Vec<PlannerParams>,
    #[serde(default)]
    pub bounds: ParamBounds,
}

impl LibraryFile {
    pub fn jackal() -> Self {
        Self {
            theta: ParameterLibrary::jackal().entries,
            bounds: ParamBounds::default(),
        }
    }

    pub fn parse(text: &str) -> Result<(ParameterLibrary, ParamBounds), PlanError> {
        let file: LibraryFile = toml::from_str(text).map_err(|e| PlanError::InvalidParams(e.to_string()))?;
        file.bounds.validate()?;
        Ok((ParameterLibrary::new(file.theta)?, file.bounds))
    }

    pub fn to_text(&self) -> String {
        toml::to_string(self).expect("library serializes")
    }
}
