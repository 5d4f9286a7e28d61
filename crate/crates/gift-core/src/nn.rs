//! Minimal dense feed-forward network with a hand-written backward pass and
//! an adaptive-moment optimizer. This is the only learning machinery in the
//! repo: everything is plain `f64` on the heap, no autodiff graph.
//!
//! Layout: weights are row-major `(out_dim, in_dim)`, biases are `out_dim`.
//! Hidden layers use tanh; the output layer is linear.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Tanh,
    Linear,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Linear => z,
        }
    }

    /// Derivative expressed through the post-activation value.
    #[inline]
    fn derivative_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Linear => 1.0,
        }
    }
}

/// One dense layer: `y = activation(W x + b)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Layer {
    pub in_dim: usize,
    pub out_dim: usize,
    /// Row-major `(out_dim, in_dim)`.
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
    pub activation: Activation,
}

/// Parameters of a feed-forward network.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Layer>,
}

/// Gradient of a scalar with respect to every [`Mlp`] parameter;
/// shape-congruent with the network it was produced from.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub layers: Vec<LayerGradients>,
}

#[derive(Debug, Clone)]
pub struct LayerGradients {
    pub d_weights: Vec<f64>,
    pub d_biases: Vec<f64>,
}

impl Mlp {
    /// Build a network with the given widths, e.g. `[3, 64, 64, 1]`.
    ///
    /// Weights are scaled-uniform fan-in initialized (`gain * sqrt(3/fan_in)`
    /// half-width); hidden layers use gain 1, the output layer `output_gain`.
    /// Biases start at zero.
    pub fn new<R: Rng + ?Sized>(dims: &[usize], output_gain: f64, rng: &mut R) -> Self {
        assert!(dims.len() >= 2, "need at least input and output widths");
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for (idx, pair) in dims.windows(2).enumerate() {
            let (in_dim, out_dim) = (pair[0], pair[1]);
            let is_last = idx == dims.len() - 2;
            let gain = if is_last { output_gain } else { 1.0 };
            let limit = gain * (3.0 / in_dim as f64).sqrt();
            let weights = (0..in_dim * out_dim)
                .map(|_| rng.random_range(-limit..=limit))
                .collect();
            layers.push(Layer {
                in_dim,
                out_dim,
                weights,
                biases: vec![0.0; out_dim],
                activation: if is_last {
                    Activation::Linear
                } else {
                    Activation::Tanh
                },
            });
        }
        Mlp { layers }
    }

    /// All-zero network with the given widths; handy in tests.
    pub fn zeros(dims: &[usize]) -> Self {
        assert!(dims.len() >= 2, "need at least input and output widths");
        let last = dims.len() - 2;
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(idx, pair)| Layer {
                in_dim: pair[0],
                out_dim: pair[1],
                weights: vec![0.0; pair[0] * pair[1]],
                biases: vec![0.0; pair[1]],
                activation: if idx == last {
                    Activation::Linear
                } else {
                    Activation::Tanh
                },
            })
            .collect();
        Mlp { layers }
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.in_dim)
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.out_dim)
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.biases.len())
            .sum()
    }

    /// Consecutive layer widths agree and every entry is finite.
    pub fn validate(&self) -> Result<()> {
        for pair in self.layers.windows(2) {
            if pair[0].out_dim != pair[1].in_dim {
                return Err(Error::DimensionMismatch {
                    context: "mlp layer chain",
                    expected: pair[0].out_dim,
                    got: pair[1].in_dim,
                });
            }
        }
        for layer in &self.layers {
            if layer.weights.len() != layer.in_dim * layer.out_dim
                || layer.biases.len() != layer.out_dim
            {
                return Err(Error::DimensionMismatch {
                    context: "mlp layer storage",
                    expected: layer.in_dim * layer.out_dim,
                    got: layer.weights.len(),
                });
            }
            if layer
                .weights
                .iter()
                .chain(layer.biases.iter())
                .any(|v| !v.is_finite())
            {
                return Err(Error::NonFinite("mlp parameters".into()));
            }
        }
        Ok(())
    }

    /// Forward pass. Deterministic given `(self, input)`.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        if input.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                context: "mlp forward input",
                expected: self.input_dim(),
                got: input.len(),
            });
        }
        let mut x = input.to_vec();
        for layer in &self.layers {
            x = layer.forward(&x);
        }
        Ok(x)
    }

    /// Reverse-mode pass: gradient of `output_grad . output` with respect to
    /// every parameter. Recomputes the forward activations internally.
    pub fn backward(&self, input: &[f64], output_grad: &[f64]) -> Result<Gradients> {
        if input.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                context: "mlp backward input",
                expected: self.input_dim(),
                got: input.len(),
            });
        }
        if output_grad.len() != self.output_dim() {
            return Err(Error::DimensionMismatch {
                context: "mlp backward output_grad",
                expected: self.output_dim(),
                got: output_grad.len(),
            });
        }

        // activations[i] is the input to layer i; activations[n] is the output.
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(input.to_vec());
        for layer in &self.layers {
            let next = layer.forward(activations.last().unwrap());
            activations.push(next);
        }

        let mut grads: Vec<LayerGradients> = self
            .layers
            .iter()
            .map(|l| LayerGradients {
                d_weights: vec![0.0; l.weights.len()],
                d_biases: vec![0.0; l.out_dim],
            })
            .collect();

        let mut delta = output_grad.to_vec();
        for (idx, layer) in self.layers.iter().enumerate().rev() {
            let out = &activations[idx + 1];
            for j in 0..layer.out_dim {
                delta[j] *= layer.activation.derivative_from_output(out[j]);
            }
            let inp = &activations[idx];
            let lg = &mut grads[idx];
            for j in 0..layer.out_dim {
                let row = &mut lg.d_weights[j * layer.in_dim..(j + 1) * layer.in_dim];
                for (i, g) in row.iter_mut().enumerate() {
                    *g = delta[j] * inp[i];
                }
                lg.d_biases[j] = delta[j];
            }
            if idx > 0 {
                let mut prev = vec![0.0; layer.in_dim];
                for j in 0..layer.out_dim {
                    let row = &layer.weights[j * layer.in_dim..(j + 1) * layer.in_dim];
                    for (i, p) in prev.iter_mut().enumerate() {
                        *p += row[i] * delta[j];
                    }
                }
                delta = prev;
            }
        }
        Ok(Gradients { layers: grads })
    }

    /// Mutable view over every parameter in a fixed order (layer by layer,
    /// weights then biases). The optimizer and gradients use the same order.
    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.biases.iter_mut()))
    }

    pub fn params(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.biases.iter()).copied())
    }
}

impl Layer {
    fn forward(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.in_dim);
        let mut out = Vec::with_capacity(self.out_dim);
        for j in 0..self.out_dim {
            let row = &self.weights[j * self.in_dim..(j + 1) * self.in_dim];
            let mut z = self.biases[j];
            for (w, xi) in row.iter().zip(x) {
                z += w * xi;
            }
            out.push(self.activation.apply(z));
        }
        out
    }
}

impl Gradients {
    pub fn zeros_like(net: &Mlp) -> Self {
        Gradients {
            layers: net
                .layers
                .iter()
                .map(|l| LayerGradients {
                    d_weights: vec![0.0; l.weights.len()],
                    d_biases: vec![0.0; l.out_dim],
                })
                .collect(),
        }
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + Clone + '_ {
        self.layers
            .iter()
            .flat_map(|l| l.d_weights.iter().chain(l.d_biases.iter()).copied())
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.d_weights.iter_mut().chain(l.d_biases.iter_mut()))
    }

    /// Accumulate `scale * other` into `self`.
    pub fn add_scaled(&mut self, other: &Gradients, scale: f64) {
        for (mine, theirs) in self.values_mut().zip(other.values()) {
            *mine += scale * theirs;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for g in self.values_mut() {
            *g *= factor;
        }
    }

    pub fn l2_norm(&self) -> f64 {
        self.values().map(|g| g * g).sum::<f64>().sqrt()
    }
}

/// Adaptive-moment optimizer state over a flat parameter vector.
///
/// Works for any parameter container that can present its values in a stable
/// order; [`adam_step`] is the [`Mlp`]-shaped convenience wrapper.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdamState {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub step: u64,
    first_moment: Vec<f64>,
    second_moment: Vec<f64>,
}

impl AdamState {
    pub fn new(param_count: usize, learning_rate: f64) -> Self {
        AdamState {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            first_moment: vec![0.0; param_count],
            second_moment: vec![0.0; param_count],
        }
    }

    pub fn param_count(&self) -> usize {
        self.first_moment.len()
    }

    /// One update over zipped (parameter, gradient) pairs.
    ///
    /// Rejects non-finite gradients before touching any state, so a bad batch
    /// leaves parameters and moments untouched.
    pub fn step_zipped<'a>(
        &mut self,
        params: impl Iterator<Item = &'a mut f64>,
        grads: impl Iterator<Item = f64> + Clone,
    ) -> Result<()> {
        for (i, g) in grads.clone().enumerate() {
            if !g.is_finite() {
                return Err(Error::NonFinite(format!(
                    "gradient entry {i} ({g}) passed to optimizer"
                )));
            }
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        let mut n = 0;
        for ((p, g), (m, v)) in params.zip(grads).zip(
            self.first_moment
                .iter_mut()
                .zip(self.second_moment.iter_mut()),
        ) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
            n += 1;
        }
        debug_assert_eq!(n, self.param_count());
        Ok(())
    }
}

/// Standard adaptive-moment update of an [`Mlp`]; increments the step counter.
pub fn adam_step(opt: &mut AdamState, params: &mut Mlp, grads: &Gradients) -> Result<()> {
    if opt.param_count() != params.param_count() {
        return Err(Error::DimensionMismatch {
            context: "adam optimizer state",
            expected: params.param_count(),
            got: opt.param_count(),
        });
    }
    opt.step_zipped(params.params_mut(), grads.values())
}
