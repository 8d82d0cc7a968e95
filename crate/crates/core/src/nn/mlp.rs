use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::NnError;

/// Fully connected network: ReLU on hidden layers, linear output.
///
/// Weight matrices are stored `out x in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    sizes: Vec<usize>,
    weights: Vec<Array2<f64>>,
    biases: Vec<Array1<f64>>,
}

/// Gradients shaped like an [`Mlp`], plus the gradient w.r.t. the input.
#[derive(Debug, Clone, PartialEq)]
pub struct Grads {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
    /// `batch x input` (one row for single-sample backward).
    pub input: Array2<f64>,
}

/// Activations kept from a batched forward pass.
#[derive(Debug, Clone)]
pub struct Trace {
    /// Layer inputs: `acts[0]` is the batch, `acts[k]` the post-ReLU output of
    /// hidden layer k.
    acts: Vec<Array2<f64>>,
    output: Array2<f64>,
}

impl Trace {
    pub fn output(&self) -> &Array2<f64> {
        &self.output
    }
}

impl Mlp {
    /// He-uniform weights `U(-sqrt(6/fan_in), sqrt(6/fan_in))`, zero biases.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], rng: &mut R) -> Result<Self, NnError> {
        check_sizes(sizes)?;
        let mut weights = Vec::with_capacity(sizes.len() - 1);
        let mut biases = Vec::with_capacity(sizes.len() - 1);
        for w in sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let limit = (6.0 / fan_in as f64).sqrt();
            weights.push(Array2::from_shape_fn((fan_out, fan_in), |_| rng.gen_range(-limit..=limit)));
            biases.push(Array1::zeros(fan_out));
        }
        Ok(Self {
            sizes: sizes.to_vec(),
            weights,
            biases,
        })
    }

    pub fn zeros(sizes: &[usize]) -> Result<Self, NnError> {
        check_sizes(sizes)?;
        Ok(Self {
            sizes: sizes.to_vec(),
            weights: sizes.windows(2).map(|w| Array2::zeros((w[1], w[0]))).collect(),
            biases: sizes.windows(2).map(|w| Array1::zeros(w[1])).collect(),
        })
    }

    /// Builds a network from explicit parameters (`out x in` matrices).
    pub fn from_parts(weights: Vec<Array2<f64>>, biases: Vec<Array1<f64>>) -> Result<Self, NnError> {
        if weights.is_empty() || weights.len() != biases.len() {
            return Err(NnError::InvalidShape("need one bias per weight matrix".into()));
        }
        let mut sizes = vec![weights[0].ncols()];
        for (w, b) in weights.iter().zip(&biases) {
            if w.ncols() != *sizes.last().unwrap() || b.len() != w.nrows() {
                return Err(NnError::InvalidShape(format!(
                    "layer {}x{} with bias {} after width {}",
                    w.nrows(),
                    w.ncols(),
                    b.len(),
                    sizes.last().unwrap()
                )));
            }
            sizes.push(w.nrows());
        }
        let net = Self { sizes, weights, biases };
        net.validate()?;
        Ok(net)
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn weights(&self) -> &[Array2<f64>] {
        &self.weights
    }

    pub fn biases(&self) -> &[Array1<f64>] {
        &self.biases
    }

    pub fn num_params(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>() + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    /// Shape consistency and finiteness (for deserialized networks).
    pub fn validate(&self) -> Result<(), NnError> {
        check_sizes(&self.sizes)?;
        if self.weights.len() != self.sizes.len() - 1 || self.biases.len() != self.weights.len() {
            return Err(NnError::InvalidShape("layer count does not match sizes".into()));
        }
        for (k, w) in self.sizes.windows(2).enumerate() {
            if self.weights[k].dim() != (w[1], w[0]) || self.biases[k].len() != w[1] {
                return Err(NnError::InvalidShape(format!("layer {k} shape mismatch")));
            }
        }
        let finite = self.weights.iter().all(|w| w.iter().all(|x| x.is_finite()))
            && self.biases.iter().all(|b| b.iter().all(|x| x.is_finite()));
        if !finite {
            return Err(NnError::NonFinite);
        }
        Ok(())
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>, NnError> {
        if input.len() != self.input_dim() {
            return Err(NnError::ShapeMismatch {
                expected: self.input_dim(),
                got: input.len(),
            });
        }
        let mut x = Array1::from_vec(input.to_vec());
        let last = self.weights.len() - 1;
        for (k, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            x = w.dot(&x) + b;
            if k < last {
                x.mapv_inplace(relu);
            }
        }
        Ok(x.to_vec())
    }

    /// Forward pass over a `batch x input` matrix, keeping activations for
    /// [`Mlp::backward_batch`].
    pub fn forward_batch(&self, input: ArrayView2<f64>) -> Result<Trace, NnError> {
        if input.ncols() != self.input_dim() {
            return Err(NnError::ShapeMismatch {
                expected: self.input_dim(),
                got: input.ncols(),
            });
        }
        let mut acts = Vec::with_capacity(self.weights.len());
        let mut x = input.to_owned();
        let last = self.weights.len() - 1;
        for (k, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = x.dot(&w.t());
            z += b;
            acts.push(x);
            if k < last {
                z.mapv_inplace(relu);
            }
            x = z;
        }
        Ok(Trace { acts, output: x })
    }

    /// Gradients of `sum(output * output_grad)` summed over the batch.
    ///
    /// ReLU uses subgradient 0 at a zero pre-activation.
    pub fn backward_batch(&self, trace: &Trace, output_grad: ArrayView2<f64>) -> Result<Grads, NnError> {
        if output_grad.dim() != trace.output.dim() {
            return Err(NnError::ShapeMismatch {
                expected: trace.output.len(),
                got: output_grad.len(),
            });
        }
        let n = self.weights.len();
        let mut gw = vec![Array2::zeros((0, 0)); n];
        let mut gb = vec![Array1::zeros(0); n];
        let mut delta = output_grad.to_owned();
        for k in (0..n).rev() {
            gw[k] = delta.t().dot(&trace.acts[k]).as_standard_layout().into_owned();
            gb[k] = delta.sum_axis(Axis(0));
            let mut back = delta.dot(&self.weights[k]);
            if k > 0 {
                // acts[k] is the ReLU output of layer k-1; zero where inactive
                back.zip_mut_with(&trace.acts[k], |g, &a| {
                    if a <= 0.0 {
                        *g = 0.0;
                    }
                });
            }
            delta = back;
        }
        Ok(Grads {
            weights: gw,
            biases: gb,
            input: delta,
        })
    }

    /// Single-sample reverse pass.
    pub fn backward(&self, input: &[f64], output_grad: &[f64]) -> Result<Grads, NnError> {
        if input.len() != self.input_dim() {
            return Err(NnError::ShapeMismatch {
                expected: self.input_dim(),
                got: input.len(),
            });
        }
        if output_grad.len() != self.output_dim() {
            return Err(NnError::ShapeMismatch {
                expected: self.output_dim(),
                got: output_grad.len(),
            });
        }
        let x = ArrayView2::from_shape((1, input.len()), input).expect("row view");
        let g = ArrayView2::from_shape((1, output_grad.len()), output_grad).expect("row view");
        let trace = self.forward_batch(x)?;
        self.backward_batch(&trace, g)
    }

    pub fn zero_grads(&self) -> Grads {
        Grads {
            weights: self.weights.iter().map(|w| Array2::zeros(w.dim())).collect(),
            biases: self.biases.iter().map(|b| Array1::zeros(b.len())).collect(),
            input: Array2::zeros((0, self.input_dim())),
        }
    }

    /// Visits every (parameter, gradient) slice pair in a fixed order.
    pub(crate) fn for_each_param_mut(&mut self, grads: &Grads, mut f: impl FnMut(&mut [f64], &[f64])) {
        for (w, g) in self.weights.iter_mut().zip(&grads.weights) {
            let g = g.as_standard_layout();
            f(
                w.as_slice_mut().expect("standard layout"),
                g.as_slice().expect("standard layout"),
            );
        }
        for (b, g) in self.biases.iter_mut().zip(&grads.biases) {
            f(
                b.as_slice_mut().expect("standard layout"),
                g.as_slice().expect("standard layout"),
            );
        }
    }

    /// Parameters flattened in the same order as [`Mlp::for_each_param_mut`].
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for w in &self.weights {
            out.extend(w.iter());
        }
        for b in &self.biases {
            out.extend(b.iter());
        }
        out
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<(), NnError> {
        if flat.len() != self.num_params() {
            return Err(NnError::ShapeMismatch {
                expected: self.num_params(),
                got: flat.len(),
            });
        }
        let mut it = flat.iter().copied();
        for w in &mut self.weights {
            w.iter_mut().for_each(|x| *x = it.next().unwrap());
        }
        for b in &mut self.biases {
            b.iter_mut().for_each(|x| *x = it.next().unwrap());
        }
        Ok(())
    }

    /// Zeroes the output layer so every output starts at 0.
    pub fn zero_last_layer(&mut self) {
        self.weights.last_mut().expect("at least one layer").fill(0.0);
        self.biases.last_mut().expect("at least one layer").fill(0.0);
    }

    /// Polyak averaging: `self = (1 - tau) * self + tau * other`.
    pub fn soft_update(&mut self, other: &Mlp, tau: f64) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            a.zip_mut_with(b, |x, &y| *x = (1.0 - tau) * *x + tau * y);
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            a.zip_mut_with(b, |x, &y| *x = (1.0 - tau) * *x + tau * y);
        }
    }
}

impl Grads {
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for w in &self.weights {
            out.extend(w.iter());
        }
        for b in &self.biases {
            out.extend(b.iter());
        }
        out
    }

    pub fn scale(&mut self, s: f64) {
        self.weights.iter_mut().for_each(|w| *w *= s);
        self.biases.iter_mut().for_each(|b| *b *= s);
        self.input *= s;
    }
}

fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

fn check_sizes(sizes: &[usize]) -> Result<(), NnError> {
    if sizes.len() < 2 || sizes.contains(&0) {
        return Err(NnError::InvalidShape(format!("layer sizes {sizes:?}")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{rng_for, stream};
    use ndarray::array;

    #[test]
    fn zero_network_outputs_zero() {
        let net = Mlp::zeros(&[5, 4, 3]).unwrap();
        assert_eq!(net.forward(&[1.0, -2.0, 3.0, 0.5, 9.0]).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn identity_layer() {
        let net = Mlp::from_parts(vec![Array2::eye(3)], vec![Array1::zeros(3)]).unwrap();
        assert_eq!(net.forward(&[1.5, -2.0, 0.25]).unwrap(), vec![1.5, -2.0, 0.25]);
    }

    #[test]
    fn linear_gradient_by_hand() {
        let net = Mlp::from_parts(vec![array![[2.0]]], vec![array![0.5]]).unwrap();
        let g = net.backward(&[3.0], &[1.0]).unwrap();
        assert_eq!(g.weights[0][[0, 0]], 3.0);
        assert_eq!(g.biases[0][0], 1.0);
        assert_eq!(g.input[[0, 0]], 2.0);
    }

    #[test]
    fn relu_subgradient_at_zero_is_zero() {
        // hidden pre-activation is exactly 0
        let net = Mlp::from_parts(vec![array![[1.0]], array![[1.0]]], vec![array![0.0], array![0.0]]).unwrap();
        let g = net.backward(&[0.0], &[1.0]).unwrap();
        assert_eq!(g.weights[0][[0, 0]], 0.0);
        assert_eq!(g.biases[0][0], 0.0);
        assert_eq!(g.input[[0, 0]], 0.0);
    }

    #[test]
    fn shape_mismatch() {
        let net = Mlp::zeros(&[3, 2]).unwrap();
        assert_eq!(
            net.forward(&[1.0]),
            Err(NnError::ShapeMismatch { expected: 3, got: 1 })
        );
        assert!(net.backward(&[1.0, 2.0, 3.0], &[1.0]).is_err());
        assert!(Mlp::zeros(&[3]).is_err());
        assert!(Mlp::zeros(&[3, 0, 1]).is_err());
    }

    #[test]
    fn batch_matches_single() {
        let mut rng = rng_for(9, stream::NETWORK_INIT);
        let net = Mlp::new(&[4, 6, 6, 2], &mut rng).unwrap();
        let xs = Array2::from_shape_fn((3, 4), |(i, j)| (i as f64 - 1.0) * 0.7 + j as f64 * 0.3);
        let gy = Array2::from_shape_fn((3, 2), |(i, j)| 1.0 + i as f64 - j as f64);
        let trace = net.forward_batch(xs.view()).unwrap();
        let batch = net.backward_batch(&trace, gy.view()).unwrap();
        let mut sum = net.zero_grads();
        for i in 0..3 {
            let x = xs.row(i).to_vec();
            let out = net.forward(&x).unwrap();
            for (a, b) in out.iter().zip(trace.output().row(i)) {
                assert!((a - b).abs() < 1e-12);
            }
            let g = net.backward(&x, &gy.row(i).to_vec()).unwrap();
            for k in 0..3 {
                sum.weights[k] += &g.weights[k];
                sum.biases[k] += &g.biases[k];
            }
            for (a, b) in g.input.row(0).iter().zip(batch.input.row(i)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
        for (a, b) in sum.flat().iter().zip(batch.flat()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn flat_params_round_trip() {
        let mut rng = rng_for(2, stream::NETWORK_INIT);
        let net = Mlp::new(&[3, 5, 2], &mut rng).unwrap();
        let mut other = Mlp::zeros(&[3, 5, 2]).unwrap();
        other.set_flat_params(&net.flat_params()).unwrap();
        assert_eq!(net, other);
    }

    #[test]
    fn he_uniform_bounds() {
        let mut rng = rng_for(4, stream::NETWORK_INIT);
        let net = Mlp::new(&[24, 10, 1], &mut rng).unwrap();
        let limit = (6.0f64 / 24.0).sqrt();
        assert!(net.weights()[0].iter().all(|w| w.abs() <= limit));
        assert!(net.biases().iter().all(|b| b.iter().all(|&x| x == 0.0)));
    }
}
