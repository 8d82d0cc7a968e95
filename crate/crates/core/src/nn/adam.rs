use serde::{Deserialize, Serialize};

use super::mlp::{Grads, Mlp};
use super::NnError;

pub const DEFAULT_LR: f64 = 3e-4;

/// Adam optimizer state over a flat parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step_count: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamState {
    pub fn new(num_params: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step_count: 0,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
        }
    }

    pub fn for_net(net: &Mlp, lr: f64) -> Self {
        Self::new(net.num_params(), lr)
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    /// One bias-corrected update of `params` in place.
    pub fn step_slice(&mut self, params: &mut [f64], grads: &[f64]) -> Result<(), NnError> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(NnError::ShapeMismatch {
                expected: self.m.len(),
                got: params.len().min(grads.len()),
            });
        }
        self.step_count += 1;
        let (c1, c2) = self.corrections();
        update(&mut self.m, &mut self.v, params, grads, self.lr, self.beta1, self.beta2, self.eps, c1, c2);
        Ok(())
    }

    fn corrections(&self) -> (f64, f64) {
        let t = self.step_count as i32;
        (1.0 - self.beta1.powi(t), 1.0 - self.beta2.powi(t))
    }
}

#[allow(clippy::too_many_arguments)]
fn update(
    m: &mut [f64],
    v: &mut [f64],
    params: &mut [f64],
    grads: &[f64],
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    c1: f64,
    c2: f64,
) {
    for i in 0..params.len() {
        let g = grads[i];
        m[i] = beta1 * m[i] + (1.0 - beta1) * g;
        v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
        let mh = m[i] / c1;
        let vh = v[i] / c2;
        params[i] -= lr * mh / (vh.sqrt() + eps);
    }
}

/// Applies one Adam step to every weight and bias of `net`.
pub fn adam_step(net: &mut Mlp, grads: &Grads, state: &mut AdamState) -> Result<(), NnError> {
    if state.len() != net.num_params() {
        return Err(NnError::ShapeMismatch {
            expected: net.num_params(),
            got: state.len(),
        });
    }
    let shapes_ok = grads.weights.len() == net.weights().len()
        && grads.weights.iter().zip(net.weights()).all(|(g, w)| g.dim() == w.dim())
        && grads.biases.iter().zip(net.biases()).all(|(g, b)| g.len() == b.len());
    if !shapes_ok {
        return Err(NnError::InvalidShape("gradient shapes differ from network".into()));
    }
    state.step_count += 1;
    let (c1, c2) = state.corrections();
    let (lr, b1, b2, eps) = (state.lr, state.beta1, state.beta2, state.eps);
    let mut offset = 0;
    let (m, v) = (&mut state.m, &mut state.v);
    net.for_each_param_mut(grads, |p, g| {
        let n = p.len();
        update(&mut m[offset..offset + n], &mut v[offset..offset + n], p, g, lr, b1, b2, eps, c1, c2);
        offset += n;
    });
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{rng_for, stream};
    use ndarray::array;

    #[test]
    fn zero_gradients_leave_parameters() {
        let mut rng = rng_for(1, stream::NETWORK_INIT);
        let mut net = Mlp::new(&[3, 4, 2], &mut rng).unwrap();
        let before = net.clone();
        let mut st = AdamState::for_net(&net, DEFAULT_LR);
        let zero = net.zero_grads();
        adam_step(&mut net, &zero, &mut st).unwrap();
        assert_eq!(net, before);
        assert_eq!(st.step_count, 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut w = [0.7];
        let mut st = AdamState::new(1, DEFAULT_LR);
        st.step_slice(&mut w, &[1.0]).unwrap();
        // m_hat = v_hat = 1 at t = 1
        let expected = 0.7 - DEFAULT_LR / (1.0 + 1e-8);
        assert_eq!(w[0], expected);
        assert!((w[0] - (0.7 - DEFAULT_LR)).abs() < 1e-11);
    }

    #[test]
    fn deterministic_steps() {
        let mut rng = rng_for(5, stream::NETWORK_INIT);
        let net = Mlp::new(&[2, 3, 1], &mut rng).unwrap();
        let g = net.backward(&[0.3, -0.9], &[1.0]).unwrap();
        let run = || {
            let mut n = net.clone();
            let mut st = AdamState::for_net(&n, 1e-2);
            for _ in 0..3 {
                adam_step(&mut n, &g, &mut st).unwrap();
            }
            (n, st)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn rejects_mismatched_state() {
        let mut net = Mlp::from_parts(vec![array![[1.0]]], vec![array![0.0]]).unwrap();
        let g = net.zero_grads();
        let mut st = AdamState::new(5, DEFAULT_LR);
        assert!(adam_step(&mut net, &g, &mut st).is_err());
    }
}
