use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::dataset::{FeedbackRecord, FeedbackSource, ParamChoice};
use super::{state_matrix, LearnError};
use crate::nn::{adam_step, default_sizes, AdamState, Mlp};
use crate::oracle::{Feedback, Levels};
use crate::planner::{RobotState, STATE_DIM};

/// Linear epsilon decay from `start` to `end` over `anneal_steps`, then flat.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpsilonSchedule {
    pub start: f64,
    pub end: f64,
    pub anneal_steps: u64,
}

impl Default for EpsilonSchedule {
    fn default() -> Self {
        Self {
            start: 0.3,
            end: 0.02,
            anneal_steps: 50_000,
        }
    }
}

impl EpsilonSchedule {
    /// Anneals over the first half of `total_steps`.
    pub fn over_half_of(total_steps: u64) -> Self {
        Self {
            anneal_steps: (total_steps / 2).max(1),
            ..Self::default()
        }
    }

    pub fn at(&self, step: u64) -> f64 {
        if step >= self.anneal_steps {
            return self.end;
        }
        let f = step as f64 / self.anneal_steps as f64;
        self.start + (self.end - self.start) * f
    }
}

/// Feedback predictor over a parameter library: one output head per
/// library entry. With `L` discrete levels each head is a block of `L`
/// logits and its score is the softmax-expected level; with continuous
/// feedback each head is a single regression output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscretePolicy {
    pub net: Mlp,
    pub optimizer: AdamState,
    k: usize,
    levels: Levels,
    pub epsilon: f64,
    pub schedule: EpsilonSchedule,
    /// Loss weight of auto-positive records.
    pub auto_positive_weight: f64,
    pub train_steps: u64,
}

impl DiscretePolicy {
    pub fn new<R: Rng + ?Sized>(k: usize, levels: Levels, lr: f64, rng: &mut R) -> Result<Self, LearnError> {
        if k == 0 {
            return Err(LearnError::InvalidConfig("library must not be empty".into()));
        }
        let width = match levels {
            Levels::Discrete(l) if l >= 2 => k * l as usize,
            Levels::Discrete(l) => return Err(LearnError::InvalidConfig(format!("levels {l} < 2"))),
            Levels::Continuous => k,
        };
        let mut net = Mlp::new(&default_sizes(STATE_DIM, width), rng)?;
        net.zero_last_layer();
        let schedule = EpsilonSchedule::default();
        Ok(Self {
            optimizer: AdamState::for_net(&net, lr),
            net,
            k,
            levels,
            epsilon: schedule.start,
            schedule,
            auto_positive_weight: 1.0,
            train_steps: 0,
        })
    }

    pub fn library_size(&self) -> usize {
        self.k
    }

    pub fn levels(&self) -> Levels {
        self.levels
    }

    /// Predicted feedback per library entry.
    pub fn predict(&self, state: &RobotState) -> Result<Vec<f64>, LearnError> {
        let out = self.net.forward(&state.to_vec())?;
        Ok(self.heads_from_output(&out))
    }

    fn heads_from_output(&self, out: &[f64]) -> Vec<f64> {
        match self.levels {
            Levels::Continuous => out.to_vec(),
            Levels::Discrete(l) => out
                .chunks(l as usize)
                .map(|logits| {
                    softmax(logits)
                        .iter()
                        .enumerate()
                        .map(|(i, p)| i as f64 * p)
                        .sum()
                })
                .collect(),
        }
    }

    /// Greedy head (lowest index on ties), or with probability `epsilon` a
    /// uniform random index when exploring.
    pub fn select<R: Rng + ?Sized>(&self, state: &RobotState, explore: bool, rng: &mut R) -> Result<usize, LearnError> {
        if explore && self.k > 1 && rng.gen::<f64>() < self.epsilon {
            return Ok(rng.gen_range(0..self.k));
        }
        Ok(argmax(&self.predict(state)?))
    }

    /// Sets epsilon from the schedule at `step`.
    pub fn anneal(&mut self, step: u64) {
        self.epsilon = self.schedule.at(step);
    }

    /// One Adam step on a batch; returns the weighted mean loss.
    ///
    /// Only the head of each record's library entry receives gradient.
    pub fn train_step(&mut self, batch: &[&FeedbackRecord]) -> Result<f64, LearnError> {
        let (loss, grad) = self.loss_and_output_grad(batch)?;
        let x = state_matrix(batch.iter().map(|r| &r.state));
        let trace = self.net.forward_batch(x.view())?;
        let g = self.net.backward_batch(&trace, grad.view())?;
        adam_step(&mut self.net, &g, &mut self.optimizer)?;
        self.train_steps += 1;
        Ok(loss)
    }

    /// Batch loss and its gradient w.r.t. the network output.
    pub fn loss_and_output_grad(&self, batch: &[&FeedbackRecord]) -> Result<(f64, Array2<f64>), LearnError> {
        if batch.is_empty() {
            return Err(LearnError::EmptyBatch);
        }
        let x = state_matrix(batch.iter().map(|r| &r.state));
        let trace = self.net.forward_batch(x.view())?;
        let out = trace.output();
        let mut grad = Array2::zeros(out.dim());
        let weights: Vec<f64> = batch
            .iter()
            .map(|r| {
                if r.source == FeedbackSource::AutoPositive {
                    self.auto_positive_weight
                } else {
                    1.0
                }
            })
            .collect();
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Ok((0.0, grad));
        }
        let mut loss = 0.0;
        for (j, r) in batch.iter().enumerate() {
            let head = match r.params {
                ParamChoice::Index(i) if i < self.k => i,
                ParamChoice::Index(i) => {
                    return Err(LearnError::ModeMismatch(format!("library index {i} >= {}", self.k)))
                }
                ParamChoice::Values(_) => {
                    return Err(LearnError::ModeMismatch("explicit parameters in discrete mode".into()))
                }
            };
            let w = weights[j] / total;
            match (self.levels, r.feedback) {
                (Levels::Discrete(l), Feedback::Level(e)) if e < l => {
                    let l = l as usize;
                    let row = out.row(j);
                    let logits = &row.as_slice().expect("row-major")[head * l..(head + 1) * l];
                    let p = softmax(logits);
                    loss -= w * p[e as usize].max(f64::MIN_POSITIVE).ln();
                    for (c, pc) in p.iter().enumerate() {
                        let target = if c == e as usize { 1.0 } else { 0.0 };
                        grad[[j, head * l + c]] = w * (pc - target);
                    }
                }
                (Levels::Continuous, Feedback::Value(e)) => {
                    let d = out[[j, head]] - e;
                    loss += w * d * d;
                    grad[[j, head]] = w * 2.0 * d;
                }
                (levels, fb) => {
                    return Err(LearnError::ModeMismatch(format!("feedback {fb:?} for levels {levels}")))
                }
            }
        }
        Ok((loss, grad))
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

/// Index of the largest value, lowest index on ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{rng_for, stream};
    use crate::world::SCAN_BEAMS;

    fn state(seed: u64) -> RobotState {
        let mut rng = rng_for(seed, stream::EPISODE);
        RobotState {
            scan: (0..SCAN_BEAMS).map(|_| rng.gen_range(0.0..1.0)).collect(),
            local_goal: rng.gen_range(-3.0..3.0),
        }
    }

    fn policy(k: usize, levels: Levels) -> DiscretePolicy {
        DiscretePolicy::new(k, levels, 1e-3, &mut rng_for(0, stream::NETWORK_INIT)).unwrap()
    }

    fn record(s: RobotState, head: usize, feedback: Feedback) -> FeedbackRecord {
        FeedbackRecord {
            state: s,
            params: ParamChoice::Index(head),
            feedback,
            timestamp: 0,
            source: FeedbackSource::Oracle,
        }
    }

    #[test]
    fn fresh_heads_are_equal() {
        let p = policy(7, Levels::Discrete(3));
        let h = p.predict(&state(1)).unwrap();
        assert_eq!(h.len(), 7);
        assert!(h.iter().all(|&x| (x - 1.0).abs() < 1e-12), "{h:?}");
        assert_eq!(h, p.predict(&state(1)).unwrap());
    }

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax(&[0.1, 0.9, 0.9, 0.2]), 1);
        assert_eq!(argmax(&[0.5]), 0);
    }

    #[test]
    fn single_entry_library() {
        let p = policy(1, Levels::Discrete(2));
        let mut rng = rng_for(1, stream::EXPLORATION);
        for _ in 0..20 {
            assert_eq!(p.select(&state(2), true, &mut rng).unwrap(), 0);
        }
    }

    #[test]
    fn schedule_endpoints() {
        let s = EpsilonSchedule::over_half_of(1000);
        assert_eq!(s.at(0), 0.3);
        assert!((s.at(250) - 0.16).abs() < 1e-12);
        assert_eq!(s.at(500), 0.02);
        assert_eq!(s.at(10_000), 0.02);
    }

    #[test]
    fn cross_entropy_gradient_is_softmax_minus_onehot() {
        let mut p = policy(3, Levels::Discrete(3));
        // make logits non-trivial
        let b = p.net.biases().len() - 1;
        let mut flat = p.net.flat_params();
        let n = flat.len();
        for (i, v) in flat[n - 9..].iter_mut().enumerate() {
            *v = 0.3 * i as f64 - 1.0;
        }
        p.net.set_flat_params(&flat).unwrap();
        let r = record(state(3), 1, Feedback::Level(2));
        let (loss, g) = p.loss_and_output_grad(&[&r]).unwrap();
        let logits = &p.net.biases()[b].as_slice().unwrap()[3..6];
        let sm = softmax(logits);
        assert!((loss + sm[2].ln()).abs() < 1e-12);
        let expected = [0.0, 0.0, 0.0, sm[0], sm[1], sm[2] - 1.0, 0.0, 0.0, 0.0];
        for (a, e) in g.row(0).iter().zip(expected) {
            assert!((a - e).abs() < 1e-12, "{g:?}");
        }
    }

    #[test]
    fn perfect_prediction_has_no_loss() {
        let mut p = policy(2, Levels::Discrete(2));
        let mut flat = p.net.flat_params();
        let n = flat.len();
        flat[n - 4..].copy_from_slice(&[-40.0, 40.0, 0.0, 0.0]);
        p.net.set_flat_params(&flat).unwrap();
        let r = record(state(4), 0, Feedback::Level(1));
        let (loss, _) = p.loss_and_output_grad(&[&r]).unwrap();
        assert!(loss <= 1e-6);
    }

    #[test]
    fn continuous_feedback_is_mse() {
        let mut p = policy(2, Levels::Continuous);
        let mut flat = p.net.flat_params();
        let n = flat.len();
        flat[n - 2..].copy_from_slice(&[0.5, -0.25]);
        p.net.set_flat_params(&flat).unwrap();
        let a = record(state(5), 0, Feedback::Value(1.0));
        let b = record(state(6), 1, Feedback::Value(0.25));
        let (loss, _) = p.loss_and_output_grad(&[&a, &b]).unwrap();
        // outputs are the biases: (0.5 - 1)^2 and (-0.25 - 0.25)^2
        assert!((loss - 0.5 * (0.25 + 0.25)).abs() < 1e-12);
    }

    #[test]
    fn mode_mismatch() {
        let p = policy(2, Levels::Discrete(3));
        let r = record(state(7), 0, Feedback::Value(0.3));
        assert!(matches!(p.loss_and_output_grad(&[&r]), Err(LearnError::ModeMismatch(_))));
        let r = record(state(7), 5, Feedback::Level(0));
        assert!(matches!(p.loss_and_output_grad(&[&r]), Err(LearnError::ModeMismatch(_))));
        let r = record(state(7), 0, Feedback::Level(3));
        assert!(matches!(p.loss_and_output_grad(&[&r]), Err(LearnError::ModeMismatch(_))));
        assert_eq!(p.loss_and_output_grad(&[]).unwrap_err(), LearnError::EmptyBatch);
    }

    #[test]
    fn no_gradient_on_other_heads() {
        let p = policy(4, Levels::Discrete(3));
        let batch: Vec<FeedbackRecord> = (0..5).map(|i| record(state(10 + i), 2, Feedback::Level(i as u32 % 3))).collect();
        let refs: Vec<&FeedbackRecord> = batch.iter().collect();
        let (_, g) = p.loss_and_output_grad(&refs).unwrap();
        for row in g.rows() {
            for (c, v) in row.iter().enumerate() {
                if !(6..9).contains(&c) {
                    assert_eq!(*v, 0.0);
                }
            }
        }
    }

    #[test]
    fn auto_positive_weight_zero_ignores_records() {
        let mut p = policy(2, Levels::Discrete(2));
        p.auto_positive_weight = 0.0;
        let mut r = record(state(8), 0, Feedback::Level(1));
        r.source = FeedbackSource::AutoPositive;
        let (loss, g) = p.loss_and_output_grad(&[&r]).unwrap();
        assert_eq!(loss, 0.0);
        assert!(g.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn uniform_exploration() {
        let mut p = policy(7, Levels::Discrete(2));
        p.epsilon = 1.0;
        let mut rng = rng_for(3, stream::EXPLORATION);
        let s = state(9);
        let mut counts = [0usize; 7];
        let n = 10_000;
        for _ in 0..n {
            counts[p.select(&s, true, &mut rng).unwrap()] += 1;
        }
        let q = 1.0 / 7.0;
        let sigma = (n as f64 * q * (1.0 - q)).sqrt();
        for c in counts {
            assert!((c as f64 - n as f64 * q).abs() <= 5.0 * sigma, "{counts:?}");
        }
    }

    #[test]
    fn training_reduces_loss_on_separable_set() {
        let mut p = policy(3, Levels::Discrete(3));
        let data: Vec<FeedbackRecord> = (0..60)
            .map(|i| {
                let mut s = state(100 + i);
                s.local_goal = if i % 2 == 0 { 1.0 } else { -1.0 };
                let level = if i % 2 == 0 { 2 } else { 0 };
                record(s, (i % 3) as usize, Feedback::Level(level))
            })
            .collect();
        let refs: Vec<&FeedbackRecord> = data.iter().collect();
        let first = p.loss_and_output_grad(&refs).unwrap().0;
        for _ in 0..500 {
            p.train_step(&refs).unwrap();
        }
        let last = p.loss_and_output_grad(&refs).unwrap().0;
        assert!(last <= 0.1 * first, "{first} -> {last}");
        assert_eq!(p.train_steps, 500);
    }
}
