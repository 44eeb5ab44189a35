//! Fully-connected networks with exact reverse-mode gradients.
//!
//! One [`MlpParams`] type backs the policy mean, the value function and both
//! discriminators. Besides the usual parameter gradients, [`MlpParams::backward`]
//! returns the gradient with respect to the input, and
//! [`MlpParams::directional_param_grad`] differentiates an input-directional
//! derivative with respect to the parameters (double backprop), which is what a
//! gradient penalty on a discriminator needs.
//!
//! Arithmetic is `f64` throughout; the frozen export quantizes to `f32`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Tanh,
    Relu,
    Elu,
    Sigmoid,
}

impl Activation {
    /// Stable numeric id used by the frozen policy format.
    pub fn id(self) -> u32 {
        match self {
            Activation::Identity => 0,
            Activation::Tanh => 1,
            Activation::Relu => 2,
            Activation::Elu => 3,
            Activation::Sigmoid => 4,
        }
    }

    pub fn from_id(id: u32) -> Option<Self> {
        Some(match id {
            0 => Activation::Identity,
            1 => Activation::Tanh,
            2 => Activation::Relu,
            3 => Activation::Elu,
            4 => Activation::Sigmoid,
            _ => return None,
        })
    }

    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Identity => z,
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
            Activation::Elu => {
                if z > 0.0 {
                    z
                } else {
                    z.exp_m1()
                }
            }
            Activation::Sigmoid => sigmoid(z),
        }
    }

    /// First derivative, given pre-activation `z` and output `a`.
    #[inline]
    fn d1(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Tanh => 1.0 - a * a,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Elu => {
                if z > 0.0 {
                    1.0
                } else {
                    a + 1.0
                }
            }
            Activation::Sigmoid => a * (1.0 - a),
        }
    }

    /// Second derivative, given pre-activation `z` and output `a`.
    #[inline]
    fn d2(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Identity | Activation::Relu => 0.0,
            Activation::Tanh => -2.0 * a * (1.0 - a * a),
            Activation::Elu => {
                if z > 0.0 {
                    0.0
                } else {
                    a + 1.0
                }
            }
            Activation::Sigmoid => a * (1.0 - a) * (1.0 - 2.0 * a),
        }
    }
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Weights and biases of a dense feed-forward network.
///
/// `weights[l]` is row-major with shape `layer_dims[l + 1] x layer_dims[l]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub layer_dims: Vec<usize>,
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
    pub hidden_activation: Activation,
    pub output_activation: Activation,
}

/// Per-layer pre-activations and activations from one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// `acts[0]` is the input, `acts[l + 1]` the output of layer `l`.
    pub acts: Vec<Vec<f64>>,
    pub pre: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        self.acts.last().expect("cache has at least the input")
    }

    pub fn input(&self) -> &[f64] {
        &self.acts[0]
    }

    /// Pre-activation of the output layer (logits for a sigmoid head).
    pub fn output_preactivation(&self) -> &[f64] {
        self.pre.last().expect("network has at least one layer")
    }
}

/// Gradients shaped exactly like the parameters of one network.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl ParamGrads {
    pub fn zeros_like(params: &MlpParams) -> Self {
        ParamGrads {
            weights: params.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            biases: params.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &ParamGrads) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.values_mut().for_each(|x| *x *= s);
    }

    pub fn norm_sq(&self) -> f64 {
        self.weights
            .iter()
            .chain(&self.biases)
            .flat_map(|v| v.iter())
            .map(|x| x * x)
            .sum()
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.weights
            .iter_mut()
            .chain(self.biases.iter_mut())
            .flat_map(|v| v.iter_mut())
    }

    /// Index of the first layer holding a non-finite entry, if any.
    pub fn first_non_finite_layer(&self) -> Option<usize> {
        (0..self.weights.len()).find(|&l| {
            self.weights[l]
                .iter()
                .chain(&self.biases[l])
                .any(|x| !x.is_finite())
        })
    }
}

impl MlpParams {
    /// All-zero network.
    pub fn zeros(layer_dims: &[usize], hidden: Activation, output: Activation) -> Self {
        assert!(layer_dims.len() >= 2, "need at least input and output widths");
        assert!(layer_dims.iter().all(|&d| d > 0), "layer widths must be positive");
        let weights = layer_dims
            .windows(2)
            .map(|w| vec![0.0; w[0] * w[1]])
            .collect();
        let biases = layer_dims[1..].iter().map(|&d| vec![0.0; d]).collect();
        MlpParams {
            layer_dims: layer_dims.to_vec(),
            weights,
            biases,
            hidden_activation: hidden,
            output_activation: output,
        }
    }

    /// Scaled-uniform init with variance `gain^2 / fan_in`; the last layer is
    /// further multiplied by `output_gain`. Biases start at zero.
    pub fn init<R: Rng + ?Sized>(
        layer_dims: &[usize],
        hidden: Activation,
        output: Activation,
        output_gain: f64,
        rng: &mut R,
    ) -> Self {
        let mut p = Self::zeros(layer_dims, hidden, output);
        let n_layers = p.num_layers();
        for l in 0..n_layers {
            let fan_in = layer_dims[l] as f64;
            let mut bound = (3.0 / fan_in).sqrt();
            if l + 1 == n_layers {
                bound *= output_gain;
            }
            for w in p.weights[l].iter_mut() {
                *w = rng.random_range(-bound..=bound);
            }
        }
        p
    }

    pub fn num_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }

    pub fn num_params(&self) -> usize {
        self.weights.iter().chain(&self.biases).map(Vec::len).sum()
    }

    fn activation(&self, layer: usize) -> Activation {
        if layer + 1 == self.num_layers() {
            self.output_activation
        } else {
            self.hidden_activation
        }
    }

    pub fn all_finite(&self) -> bool {
        self.weights
            .iter()
            .chain(&self.biases)
            .all(|v| v.iter().all(|x| x.is_finite()))
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                context: "mlp input",
                expected: self.input_dim(),
                actual: x.len(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut a = x.to_vec();
        for l in 0..self.num_layers() {
            let act = self.activation(l);
            let n_in = self.layer_dims[l];
            a = self.weights[l]
                .chunks_exact(n_in)
                .zip(&self.biases[l])
                .map(|(row, b)| act.apply(dot(row, &a) + b))
                .collect();
        }
        Ok(a)
    }

    pub fn forward_cached(&self, x: &[f64]) -> Result<ForwardCache> {
        self.check_input(x)?;
        let n = self.num_layers();
        let mut acts = Vec::with_capacity(n + 1);
        let mut pre = Vec::with_capacity(n);
        acts.push(x.to_vec());
        for l in 0..n {
            let act = self.activation(l);
            let n_in = self.layer_dims[l];
            let z: Vec<f64> = self.weights[l]
                .chunks_exact(n_in)
                .zip(&self.biases[l])
                .map(|(row, b)| dot(row, &acts[l]) + b)
                .collect();
            acts.push(z.iter().map(|&v| act.apply(v)).collect());
            pre.push(z);
        }
        Ok(ForwardCache { acts, pre })
    }

    /// Gradients of `upstream . output` with respect to every parameter and the input.
    pub fn backward(&self, cache: &ForwardCache, upstream: &[f64]) -> Result<(ParamGrads, Vec<f64>)> {
        let mut grads = ParamGrads::zeros_like(self);
        let dx = self.backward_accumulate(cache, upstream, &mut grads)?;
        Ok((grads, dx))
    }

    /// As [`backward`](Self::backward) but accumulates into `grads`.
    pub fn backward_accumulate(
        &self,
        cache: &ForwardCache,
        upstream: &[f64],
        grads: &mut ParamGrads,
    ) -> Result<Vec<f64>> {
        if upstream.len() != self.output_dim() {
            return Err(Error::DimensionMismatch {
                context: "mlp upstream gradient",
                expected: self.output_dim(),
                actual: upstream.len(),
            });
        }
        let last = self.num_layers() - 1;
        let act = self.activation(last);
        let delta: Vec<f64> = upstream
            .iter()
            .zip(&cache.pre[last])
            .zip(&cache.acts[last + 1])
            .map(|((u, &z), &a)| u * act.d1(z, a))
            .collect();
        Ok(self.backward_from_preactivation(cache, delta, grads))
    }

    /// Backpropagates a gradient given with respect to the output layer's
    /// pre-activation. Useful for losses written on logits.
    pub fn backward_from_preactivation(
        &self,
        cache: &ForwardCache,
        mut delta: Vec<f64>,
        grads: &mut ParamGrads,
    ) -> Vec<f64> {
        assert_eq!(cache.acts.len(), self.num_layers() + 1, "cache/network depth mismatch");
        for l in (0..self.num_layers()).rev() {
            let n_in = self.layer_dims[l];
            let a_prev = &cache.acts[l];
            let mut d_prev = vec![0.0; n_in];
            for (i, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                let row = &self.weights[l][i * n_in..(i + 1) * n_in];
                let grow = &mut grads.weights[l][i * n_in..(i + 1) * n_in];
                axpy(d, a_prev, grow);
                axpy(d, row, &mut d_prev);
                grads.biases[l][i] += d;
            }
            if l > 0 {
                let act = self.hidden_activation;
                for ((dp, &z), &a) in d_prev.iter_mut().zip(&cache.pre[l - 1]).zip(&cache.acts[l]) {
                    *dp *= act.d1(z, a);
                }
            }
            delta = d_prev;
        }
        delta
    }

    /// For a scalar-output network, accumulates `scale * d/dθ [ ∇ₓf(x) · v ]`
    /// into `grads` and returns the directional derivative `∇ₓf(x) · v`.
    ///
    /// Forward-mode tangents are pushed through the cached pass, then the
    /// tangent-augmented graph is reversed.
    pub fn directional_param_grad(
        &self,
        cache: &ForwardCache,
        v: &[f64],
        scale: f64,
        grads: &mut ParamGrads,
    ) -> Result<f64> {
        if self.output_dim() != 1 {
            return Err(Error::DimensionMismatch {
                context: "directional gradient (scalar output required)",
                expected: 1,
                actual: self.output_dim(),
            });
        }
        self.check_input(v)?;
        let n = self.num_layers();

        // Tangents: tz[l] = d pre[l], ta[l] = d acts[l].
        let mut ta: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
        let mut tz: Vec<Vec<f64>> = Vec::with_capacity(n);
        ta.push(v.to_vec());
        for l in 0..n {
            let act = self.activation(l);
            let n_in = self.layer_dims[l];
            let z_dot: Vec<f64> = self.weights[l]
                .chunks_exact(n_in)
                .map(|row| dot(row, &ta[l]))
                .collect();
            let a_dot = z_dot
                .iter()
                .zip(&cache.pre[l])
                .zip(&cache.acts[l + 1])
                .map(|((zd, &z), &a)| zd * act.d1(z, a))
                .collect();
            tz.push(z_dot);
            ta.push(a_dot);
        }
        let directional = ta[n][0];

        // Adjoints of the primal activations and of the tangents.
        let mut adj_a = vec![0.0; 1];
        let mut adj_ta = vec![scale; 1];
        for l in (0..n).rev() {
            let act = self.activation(l);
            let n_out = self.layer_dims[l + 1];
            let n_in = self.layer_dims[l];
            let mut adj_z = vec![0.0; n_out];
            let mut adj_zdot = vec![0.0; n_out];
            for i in 0..n_out {
                let z = cache.pre[l][i];
                let a = cache.acts[l + 1][i];
                let d1 = act.d1(z, a);
                adj_zdot[i] = adj_ta[i] * d1;
                adj_z[i] = adj_ta[i] * act.d2(z, a) * tz[l][i] + adj_a[i] * d1;
            }
            let mut next_adj_a = vec![0.0; n_in];
            let mut next_adj_ta = vec![0.0; n_in];
            for i in 0..n_out {
                let row = &self.weights[l][i * n_in..(i + 1) * n_in];
                let grow = &mut grads.weights[l][i * n_in..(i + 1) * n_in];
                if adj_z[i] != 0.0 {
                    axpy(adj_z[i], &cache.acts[l], grow);
                    axpy(adj_z[i], row, &mut next_adj_a);
                    grads.biases[l][i] += adj_z[i];
                }
                if adj_zdot[i] != 0.0 {
                    axpy(adj_zdot[i], &ta[l], grow);
                    axpy(adj_zdot[i], row, &mut next_adj_ta);
                }
            }
            adj_a = next_adj_a;
            adj_ta = next_adj_ta;
        }
        Ok(directional)
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    y.iter_mut().zip(x).for_each(|(yi, xi)| *yi += alpha * xi);
}

pub fn mlp_forward(params: &MlpParams, x: &[f64]) -> Result<Vec<f64>> {
    params.forward(x)
}

/// Exact gradients of `upstream . f(x)` with respect to parameters and input.
pub fn mlp_backward(params: &MlpParams, x: &[f64], upstream: &[f64]) -> Result<(ParamGrads, Vec<f64>)> {
    let cache = params.forward_cached(x)?;
    params.backward(&cache, upstream)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub first_moment: ParamGrads,
    pub second_moment: ParamGrads,
    pub step: u64,
    pub config: AdamConfig,
}

impl AdamState {
    pub fn new(params: &MlpParams, config: AdamConfig) -> Self {
        AdamState {
            first_moment: ParamGrads::zeros_like(params),
            second_moment: ParamGrads::zeros_like(params),
            step: 0,
            config,
        }
    }
}

/// One bias-corrected Adam update, in place.
pub fn adam_step(params: &mut MlpParams, grads: &ParamGrads, state: &mut AdamState) -> Result<()> {
    if grads.weights.len() != params.weights.len()
        || state.first_moment.weights.len() != params.weights.len()
    {
        return Err(Error::DimensionMismatch {
            context: "adam layer count",
            expected: params.weights.len(),
            actual: grads.weights.len(),
        });
    }
    for l in 0..params.weights.len() {
        for (g, p) in [(&grads.weights[l], &params.weights[l]), (&grads.biases[l], &params.biases[l])] {
            if g.len() != p.len() {
                return Err(Error::DimensionMismatch {
                    context: "adam layer shape",
                    expected: p.len(),
                    actual: g.len(),
                });
            }
        }
    }
    if let Some(layer) = grads.first_non_finite_layer() {
        return Err(Error::NonFiniteGradient { layer });
    }

    state.step += 1;
    let AdamConfig { lr, beta1, beta2, eps } = state.config;
    let t = state.step as i32;
    let bc1 = 1.0 - beta1.powi(t);
    let bc2 = 1.0 - beta2.powi(t);
    let update = |p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]| {
        for i in 0..p.len() {
            m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
            v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    };
    for l in 0..params.weights.len() {
        update(
            &mut params.weights[l],
            &grads.weights[l],
            &mut state.first_moment.weights[l],
            &mut state.second_moment.weights[l],
        );
        update(
            &mut params.biases[l],
            &grads.biases[l],
            &mut state.first_moment.biases[l],
            &mut state.second_moment.biases[l],
        );
    }
    Ok(())
}

/// Adam for a bare parameter vector (the policy's log-std).
#[derive(Debug, Clone, PartialEq)]
pub struct VecAdam {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
    pub config: AdamConfig,
}

impl VecAdam {
    pub fn new(n: usize, config: AdamConfig) -> Self {
        VecAdam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
            config,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        for i in 0..params.len() {
            self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * grads[i];
            self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * grads[i] * grads[i];
            params[i] -= lr * (self.m[i] / bc1) / ((self.v[i] / bc2).sqrt() + eps);
        }
    }
}
