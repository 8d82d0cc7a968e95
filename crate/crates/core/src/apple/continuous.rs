use ndarray::{s, Array1, Array2, ArrayView2};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::dataset::{FeedbackRecord, FeedbackSource, ParamChoice};
use super::{state_matrix, LearnError};
use crate::nn::{adam_step, default_sizes, AdamState, Mlp};
use crate::oracle::Feedback;
use crate::planner::{ParamBounds, PlannerParams, RobotState, PARAM_DIM, STATE_DIM};

pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 2.0;
const TANH_EPS: f64 = 1e-6;
const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// Something that scores normalized parameter vectors in a state.
pub trait Critic {
    /// Values and their gradients w.r.t. `z` for a batch (`states`: B x 721,
    /// `z`: B x 8).
    fn evaluate(&self, states: ArrayView2<f64>, z: ArrayView2<f64>) -> Result<(Array1<f64>, Array2<f64>), LearnError>;
}

impl Critic for Mlp {
    fn evaluate(&self, states: ArrayView2<f64>, z: ArrayView2<f64>) -> Result<(Array1<f64>, Array2<f64>), LearnError> {
        let input = concat(states, z);
        let trace = self.forward_batch(input.view())?;
        let ones = Array2::ones(trace.output().dim());
        let g = self.backward_batch(&trace, ones.view())?;
        let q = trace.output().column(0).to_owned();
        Ok((q, g.input.slice(s![.., STATE_DIM..]).to_owned()))
    }
}

fn concat(states: ArrayView2<f64>, z: ArrayView2<f64>) -> Array2<f64> {
    let mut input = Array2::zeros((states.nrows(), states.ncols() + z.ncols()));
    input.slice_mut(s![.., ..states.ncols()]).assign(&states);
    input.slice_mut(s![.., states.ncols()..]).assign(&z);
    input
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ContinuousConfig {
    pub lr: f64,
    pub alpha_lr: f64,
    pub init_log_alpha: f64,
    pub target_entropy: f64,
}

impl Default for ContinuousConfig {
    fn default() -> Self {
        Self {
            lr: crate::nn::DEFAULT_LR,
            alpha_lr: crate::nn::DEFAULT_LR,
            init_log_alpha: 0.0,
            target_entropy: -(PARAM_DIM as f64),
        }
    }
}

/// One action drawn from the actor.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionSample {
    pub params: PlannerParams,
    /// Squashed action in [-1, 1]^8 before decoding.
    pub z: [f64; PARAM_DIM],
    pub log_prob: f64,
}

/// Squashed-Gaussian parameter policy with a learned feedback critic and an
/// automatically tuned entropy temperature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuousPolicy {
    pub actor: Mlp,
    pub critic: Mlp,
    pub actor_opt: AdamState,
    pub critic_opt: AdamState,
    pub log_alpha: f64,
    pub alpha_opt: AdamState,
    pub target_entropy: f64,
    pub bounds: ParamBounds,
    pub auto_positive_weight: f64,
    pub train_steps: u64,
}

struct Draw {
    log_std: Array2<f64>,
    clamped: Array2<bool>,
    noise: Array2<f64>,
    z: Array2<f64>,
    log_prob: Array1<f64>,
}

impl ContinuousPolicy {
    pub fn new<R: Rng + ?Sized>(bounds: ParamBounds, cfg: &ContinuousConfig, rng: &mut R) -> Result<Self, LearnError> {
        bounds.validate().map_err(|e| LearnError::InvalidConfig(e.to_string()))?;
        let mut actor = Mlp::new(&default_sizes(STATE_DIM, 2 * PARAM_DIM), rng)?;
        actor.zero_last_layer();
        let mut critic = Mlp::new(&default_sizes(STATE_DIM + PARAM_DIM, 1), rng)?;
        critic.zero_last_layer();
        Ok(Self {
            actor_opt: AdamState::for_net(&actor, cfg.lr),
            critic_opt: AdamState::for_net(&critic, cfg.lr),
            actor,
            critic,
            log_alpha: cfg.init_log_alpha,
            alpha_opt: AdamState::new(1, cfg.alpha_lr),
            target_entropy: cfg.target_entropy,
            bounds,
            auto_positive_weight: 1.0,
            train_steps: 0,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.log_alpha.exp()
    }

    /// Per-dimension mean and clamped log-std.
    pub fn distribution(&self, state: &RobotState) -> Result<([f64; PARAM_DIM], [f64; PARAM_DIM]), LearnError> {
        let out = self.actor.forward(&state.to_vec())?;
        Ok((
            std::array::from_fn(|d| out[d]),
            std::array::from_fn(|d| out[PARAM_DIM + d].clamp(LOG_STD_MIN, LOG_STD_MAX)),
        ))
    }

    /// Samples `u ~ N(mean, std)` (or takes `u = mean`), squashes with tanh
    /// and decodes into the parameter box.
    pub fn sample<R: Rng + ?Sized>(&self, state: &RobotState, deterministic: bool, rng: &mut R) -> Result<ActionSample, LearnError> {
        let (mean, log_std) = self.distribution(state)?;
        let mut z = [0.0; PARAM_DIM];
        let mut log_prob = 0.0;
        for d in 0..PARAM_DIM {
            let eps: f64 = if deterministic { 0.0 } else { rng.sample(StandardNormal) };
            let u = mean[d] + log_std[d].exp() * eps;
            z[d] = u.tanh();
            log_prob += gaussian_log_density(eps, log_std[d]) - (1.0 - z[d] * z[d] + TANH_EPS).ln();
        }
        Ok(ActionSample {
            params: self.bounds.decode(&z),
            z,
            log_prob,
        })
    }

    fn draw<R: Rng + ?Sized>(&self, x: ArrayView2<f64>, rng: &mut R) -> Result<(crate::nn::Trace, Draw), LearnError> {
        let trace = self.actor.forward_batch(x)?;
        let out = trace.output();
        let b = out.nrows();
        let mean = out.slice(s![.., ..PARAM_DIM]);
        let raw = out.slice(s![.., PARAM_DIM..]);
        let log_std = raw.mapv(|v| v.clamp(LOG_STD_MIN, LOG_STD_MAX));
        let clamped = raw.mapv(|v| !(LOG_STD_MIN..=LOG_STD_MAX).contains(&v));
        let noise = Array2::from_shape_simple_fn((b, PARAM_DIM), || rng.sample::<f64, _>(StandardNormal));
        let mut z = Array2::zeros((b, PARAM_DIM));
        let mut log_prob = Array1::zeros(b);
        for j in 0..b {
            for d in 0..PARAM_DIM {
                let (ls, e) = (log_std[[j, d]], noise[[j, d]]);
                let t = (mean[[j, d]] + ls.exp() * e).tanh();
                z[[j, d]] = t;
                log_prob[j] += gaussian_log_density(e, ls) - (1.0 - t * t + TANH_EPS).ln();
            }
        }
        Ok((
            trace,
            Draw {
                log_std,
                clamped,
                noise,
                z,
                log_prob,
            },
        ))
    }

    /// One reparameterized actor step against the policy's own critic.
    pub fn train_actor<R: Rng + ?Sized>(&mut self, states: &[&RobotState], rng: &mut R) -> Result<f64, LearnError> {
        let (loss, g) = self.actor_loss_grad(states, &self.critic, rng)?;
        adam_step(&mut self.actor, &g, &mut self.actor_opt)?;
        Ok(loss)
    }

    /// One reparameterized step on `mean(-critic(x, z) + alpha * log_prob)`;
    /// the critic is not updated.
    pub fn train_actor_with<R: Rng + ?Sized, C: Critic + ?Sized>(
        &mut self,
        states: &[&RobotState],
        critic: &C,
        rng: &mut R,
    ) -> Result<f64, LearnError> {
        let (loss, g) = self.actor_loss_grad(states, critic, rng)?;
        adam_step(&mut self.actor, &g, &mut self.actor_opt)?;
        Ok(loss)
    }

    /// Actor loss and its gradient for one batch of reparameterized samples.
    pub fn actor_loss_grad<R: Rng + ?Sized, C: Critic + ?Sized>(
        &self,
        states: &[&RobotState],
        critic: &C,
        rng: &mut R,
    ) -> Result<(f64, crate::nn::Grads), LearnError> {
        if states.is_empty() {
            return Err(LearnError::EmptyBatch);
        }
        let x = state_matrix(states.iter().copied());
        let (trace, dr) = self.draw(x.view(), rng)?;
        let (q, dq) = critic.evaluate(x.view(), dr.z.view())?;
        let b = states.len() as f64;
        let alpha = self.alpha();
        let loss = (-&q + alpha * &dr.log_prob).mean().unwrap_or(0.0);
        let mut grad = Array2::zeros((states.len(), 2 * PARAM_DIM));
        for j in 0..states.len() {
            for d in 0..PARAM_DIM {
                let t = dr.z[[j, d]];
                let sech2 = 1.0 - t * t;
                // d loss / d u through the critic and the tanh Jacobian term
                let du = (-dq[[j, d]] * sech2 + alpha * 2.0 * t * sech2 / (sech2 + TANH_EPS)) / b;
                grad[[j, d]] = du;
                if !dr.clamped[[j, d]] {
                    let std = dr.log_std[[j, d]].exp();
                    grad[[j, PARAM_DIM + d]] = du * std * dr.noise[[j, d]] - alpha / b;
                }
            }
        }
        let g = self.actor.backward_batch(&trace, grad.view())?;
        Ok((loss, g))
    }

    /// One Adam step on the log-temperature using fresh samples; returns the
    /// new temperature.
    pub fn update_temperature<R: Rng + ?Sized>(&mut self, states: &[&RobotState], rng: &mut R) -> Result<f64, LearnError> {
        if states.is_empty() {
            return Err(LearnError::EmptyBatch);
        }
        let x = state_matrix(states.iter().copied());
        let (_, dr) = self.draw(x.view(), rng)?;
        let grad = self.temperature_grad(dr.log_prob.as_slice().expect("contiguous"));
        let mut la = [self.log_alpha];
        self.alpha_opt.step_slice(&mut la, &[grad])?;
        self.log_alpha = la[0];
        Ok(self.alpha())
    }

    /// d/d(log_alpha) of `mean(-alpha * (log_prob + target_entropy))`.
    pub fn temperature_grad(&self, log_probs: &[f64]) -> f64 {
        let alpha = self.alpha();
        log_probs
            .iter()
            .map(|lp| -alpha * (lp + self.target_entropy))
            .sum::<f64>()
            / log_probs.len() as f64
    }

    /// Mean log-probability of fresh samples (negated, a Monte-Carlo entropy
    /// estimate).
    pub fn mean_log_prob<R: Rng + ?Sized>(&self, states: &[&RobotState], rng: &mut R) -> Result<f64, LearnError> {
        let x = state_matrix(states.iter().copied());
        let (_, dr) = self.draw(x.view(), rng)?;
        Ok(dr.log_prob.mean().unwrap_or(0.0))
    }

    /// One MSE step of the critic on recorded feedback.
    pub fn train_critic(&mut self, batch: &[&FeedbackRecord]) -> Result<f64, LearnError> {
        let (loss, grad, input) = self.critic_loss(batch)?;
        let trace = self.critic.forward_batch(input.view())?;
        let g = self.critic.backward_batch(&trace, grad.view())?;
        adam_step(&mut self.critic, &g, &mut self.critic_opt)?;
        self.train_steps += 1;
        Ok(loss)
    }

    /// Weighted MSE, its output gradient and the critic input matrix.
    pub fn critic_loss(&self, batch: &[&FeedbackRecord]) -> Result<(f64, Array2<f64>, Array2<f64>), LearnError> {
        if batch.is_empty() {
            return Err(LearnError::EmptyBatch);
        }
        let x = state_matrix(batch.iter().map(|r| &r.state));
        let mut z = Array2::zeros((batch.len(), PARAM_DIM));
        let mut target = Vec::with_capacity(batch.len());
        let mut weight = Vec::with_capacity(batch.len());
        for (j, r) in batch.iter().enumerate() {
            let ParamChoice::Values(p) = r.params else {
                return Err(LearnError::ModeMismatch("library index in continuous mode".into()));
            };
            for (d, v) in self.bounds.encode(&p).iter().enumerate() {
                z[[j, d]] = *v;
            }
            target.push(match r.feedback {
                Feedback::Value(e) => e,
                Feedback::Level(l) => l as f64,
            });
            weight.push(if r.source == FeedbackSource::AutoPositive {
                self.auto_positive_weight
            } else {
                1.0
            });
        }
        let input = concat(x.view(), z.view());
        let out = self.critic.forward_batch(input.view())?;
        let total: f64 = weight.iter().sum();
        let mut grad = Array2::zeros((batch.len(), 1));
        let mut loss = 0.0;
        if total > 0.0 {
            for j in 0..batch.len() {
                let w = weight[j] / total;
                let d = out.output()[[j, 0]] - target[j];
                loss += w * d * d;
                grad[[j, 0]] = w * 2.0 * d;
            }
        }
        Ok((loss, grad, input))
    }

    /// Critic value of explicit parameters.
    pub fn predict_feedback(&self, state: &RobotState, params: &PlannerParams) -> Result<f64, LearnError> {
        let mut input = state.to_vec();
        input.extend(self.bounds.encode(params));
        Ok(self.critic.forward(&input)?[0])
    }
}

/// `log N(mean + std*eps; mean, std)`.
fn gaussian_log_density(eps: f64, log_std: f64) -> f64 {
    -0.5 * eps * eps - log_std - HALF_LN_2PI
}
