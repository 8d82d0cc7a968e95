use std::collections::VecDeque;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::LearnError;
use crate::oracle::Feedback;
use crate::planner::{PlannerParams, RobotState, STATE_DIM};

/// Schema version written on every dataset log line.
pub const LOG_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeedbackSource {
    Oracle,
    Human,
    AutoPositive,
}

/// Parameters the feedback refers to: a library index (discrete mode) or
/// explicit values (continuous mode).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamChoice {
    Index(usize),
    Values(PlannerParams),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeedbackRecord {
    pub state: RobotState,
    pub params: ParamChoice,
    pub feedback: Feedback,
    /// Simulation step at which the feedback arrived.
    pub timestamp: u64,
    pub source: FeedbackSource,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LogLine {
    version: u32,
    timestamp: u64,
    state: Vec<f64>,
    params: ParamChoice,
    feedback: Feedback,
    source: FeedbackSource,
}

impl FeedbackRecord {
    pub fn to_log_line(&self) -> String {
        serde_json::to_string(&LogLine {
            version: LOG_VERSION,
            timestamp: self.timestamp,
            state: self.state.to_vec(),
            params: self.params,
            feedback: self.feedback,
            source: self.source,
        })
        .expect("record serializes")
    }

    pub fn from_log_line(line: &str) -> Result<Self, LearnError> {
        let l: LogLine = serde_json::from_str(line).map_err(|e| LearnError::Log(e.to_string()))?;
        if l.version != LOG_VERSION {
            return Err(LearnError::Log(format!("unsupported log version {}", l.version)));
        }
        let state = RobotState::from_slice(&l.state)
            .ok_or_else(|| LearnError::Log(format!("state must hold {STATE_DIM} finite values")))?;
        Ok(Self {
            state,
            params: l.params,
            feedback: l.feedback,
            timestamp: l.timestamp,
            source: l.source,
        })
    }
}

/// Bounded feedback store; the oldest record is evicted when full. Every
/// appended record is also written to the log, if one is attached.
#[derive(Debug)]
pub struct FeedbackDataset {
    records: VecDeque<FeedbackRecord>,
    capacity: usize,
    log: Option<BufWriter<File>>,
}

impl FeedbackDataset {
    pub fn new(capacity: usize) -> Self {
        Self {
            records: VecDeque::with_capacity(capacity.min(1 << 16)),
            capacity: capacity.max(1),
            log: None,
        }
    }

    /// Appends future records to `path` (created or truncated).
    pub fn with_log(mut self, path: &Path) -> Result<Self, LearnError> {
        let f = File::create(path).map_err(|e| LearnError::Log(format!("{}: {e}", path.display())))?;
        self.log = Some(BufWriter::new(f));
        Ok(self)
    }

    /// Appends future records to an existing log at `path`.
    pub fn with_appending_log(mut self, path: &Path) -> Result<Self, LearnError> {
        let f = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| LearnError::Log(format!("{}: {e}", path.display())))?;
        self.log = Some(BufWriter::new(f));
        Ok(self)
    }

    pub fn append(&mut self, record: FeedbackRecord) -> Result<usize, LearnError> {
        if let Some(log) = &mut self.log {
            writeln!(log, "{}", record.to_log_line()).map_err(|e| LearnError::Log(e.to_string()))?;
        }
        if self.records.len() == self.capacity {
            self.records.pop_front();
        }
        self.records.push_back(record);
        Ok(self.records.len())
    }

    pub fn flush(&mut self) -> Result<(), LearnError> {
        if let Some(log) = &mut self.log {
            log.flush().map_err(|e| LearnError::Log(e.to_string()))?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn iter(&self) -> impl Iterator<Item = &FeedbackRecord> {
        self.records.iter()
    }

    pub fn get(&self, i: usize) -> Option<&FeedbackRecord> {
        self.records.get(i)
    }

    /// `n` records drawn uniformly with replacement.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<&FeedbackRecord> {
        if self.records.is_empty() {
            return Vec::new();
        }
        (0..n)
            .map(|_| &self.records[rng.gen_range(0..self.records.len())])
            .collect()
    }

    /// Reads a log back; only the newest `capacity` records are kept.
    pub fn load(path: &Path, capacity: usize) -> Result<Self, LearnError> {
        let f = File::open(path).map_err(|e| LearnError::Log(format!("{}: {e}", path.display())))?;
        let mut ds = Self::new(capacity);
        for (i, line) in BufReader::new(f).lines().enumerate() {
            let line = line.map_err(|e| LearnError::Log(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec = FeedbackRecord::from_log_line(&line).map_err(|e| LearnError::Log(format!("line {}: {e}", i + 1)))?;
            ds.append(rec)?;
        }
        Ok(ds)
    }
}

impl Drop for FeedbackDataset {
    fn drop(&mut self) {
        let _ = self.flush();
    }
}
