//! Dense ReLU networks with exact reverse-mode gradients.
//!
//! Every learned function in the crate (forward models, the policy) is one of
//! these: hidden layers apply ReLU, the final layer is linear. Weights are
//! stored row-major with shape `(out, in)`.
//!
//! ```
//! use synergy::nn::NetworkParams;
//!
//! let net = NetworkParams::init(&[2, 3, 1], 7).unwrap();
//! assert_eq!(net.param_count(), 13);
//! let (out, cache) = net.forward(&[0.5, -1.0]).unwrap();
//! let (grads, input_grad) = net.backward(&cache, &[1.0]).unwrap();
//! assert_eq!(out.len(), 1);
//! assert_eq!(input_grad.len(), 2);
//! assert_eq!(grads.param_count(), 13);
//! ```

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Parameters of a fully connected network. Also used as the container for
/// gradients and optimizer moments, which share its shape.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkParams {
    layer_sizes: Vec<usize>,
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
}

/// Activations recorded by [`NetworkParams::forward`] for the backward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    /// `activations[0]` is the input, `activations[l]` the output of layer `l`.
    activations: Vec<Vec<f64>>,
    /// Pre-activations of every layer.
    pre_activations: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn input(&self) -> &[f64] {
        &self.activations[0]
    }

    pub fn output(&self) -> &[f64] {
        self.activations.last().expect("cache always holds the input")
    }
}

fn check_sizes(layer_sizes: &[usize]) -> Result<()> {
    if layer_sizes.len() < 2 {
        return Err(invalid(format!(
            "a network needs at least an input and an output layer, got sizes {layer_sizes:?}"
        )));
    }
    if layer_sizes.contains(&0) {
        return Err(invalid(format!("layer sizes must be positive, got {layer_sizes:?}")));
    }
    Ok(())
}

impl NetworkParams {
    /// Uniform fan-in initialization: weights in `±1/sqrt(fan_in)`, biases zero.
    pub fn init(layer_sizes: &[usize], seed: u64) -> Result<Self> {
        check_sizes(layer_sizes)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Self::zeros(layer_sizes)?;
        for (l, w) in params.weights.iter_mut().enumerate() {
            let scale = 1.0 / (layer_sizes[l] as f64).sqrt();
            for v in w.iter_mut() {
                *v = rng.random_range(-scale..scale);
            }
        }
        Ok(params)
    }

    pub fn zeros(layer_sizes: &[usize]) -> Result<Self> {
        check_sizes(layer_sizes)?;
        let weights = layer_sizes.windows(2).map(|p| vec![0.0; p[0] * p[1]]).collect();
        let biases = layer_sizes[1..].iter().map(|&n| vec![0.0; n]).collect();
        Ok(Self {
            layer_sizes: layer_sizes.to_vec(),
            weights,
            biases,
        })
    }

    /// Builds a network from explicit row-major weights and biases.
    pub fn from_parts(layer_sizes: &[usize], weights: Vec<Vec<f64>>, biases: Vec<Vec<f64>>) -> Result<Self> {
        check_sizes(layer_sizes)?;
        let n = layer_sizes.len() - 1;
        if weights.len() != n || biases.len() != n {
            return Err(invalid("weight/bias layer count does not match layer sizes"));
        }
        for l in 0..n {
            if weights[l].len() != layer_sizes[l] * layer_sizes[l + 1] {
                return Err(invalid(format!("weight matrix {l} has the wrong shape")));
            }
            if biases[l].len() != layer_sizes[l + 1] {
                return Err(invalid(format!("bias vector {l} has the wrong length")));
            }
        }
        let params = Self {
            layer_sizes: layer_sizes.to_vec(),
            weights,
            biases,
        };
        if !params.is_finite() {
            return Err(Error::Numeric("network parameters must be finite".into()));
        }
        Ok(params)
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(&self.layer_sizes).expect("shape already validated")
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn num_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn param_count(&self) -> usize {
        self.weights.iter().map(Vec::len).sum::<usize>() + self.biases.iter().map(Vec::len).sum::<usize>()
    }

    /// Row-major weights of layer `l`, shape `(layer_sizes[l+1], layer_sizes[l])`.
    pub fn weight(&self, l: usize) -> &[f64] {
        &self.weights[l]
    }

    pub fn weight_mut(&mut self, l: usize) -> &mut [f64] {
        &mut self.weights[l]
    }

    pub fn bias(&self, l: usize) -> &[f64] {
        &self.biases[l]
    }

    pub fn bias_mut(&mut self, l: usize) -> &mut [f64] {
        &mut self.biases[l]
    }

    /// Iterates every parameter in a fixed order: per layer, weights then bias.
    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| w.iter().chain(b.iter()))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.weights
            .iter_mut()
            .zip(self.biases.iter_mut())
            .flat_map(|(w, b)| w.iter_mut().chain(b.iter_mut()))
    }

    pub fn is_finite(&self) -> bool {
        self.iter().all(|v| v.is_finite())
    }

    fn same_shape(&self, other: &Self) -> bool {
        self.layer_sizes == other.layer_sizes
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &Self, scale: f64) -> Result<()> {
        if !self.same_shape(other) {
            return Err(invalid("parameter shapes differ"));
        }
        for (a, b) in self.iter_mut().zip(other.iter()) {
            *a += scale * b;
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: f64) {
        for v in self.iter_mut() {
            *v *= factor;
        }
    }

    pub fn l2_norm(&self) -> f64 {
        self.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Forward pass recording the activations needed by [`Self::backward`].
    pub fn forward(&self, input: &[f64]) -> Result<(Vec<f64>, ForwardCache)> {
        if input.len() != self.input_dim() {
            return Err(invalid(format!(
                "input has length {}, network expects {}",
                input.len(),
                self.input_dim()
            )));
        }
        let n = self.num_layers();
        let mut activations = Vec::with_capacity(n + 1);
        let mut pre_activations = Vec::with_capacity(n);
        activations.push(input.to_vec());
        for l in 0..n {
            let z = affine(
                &self.weights[l],
                &self.biases[l],
                &activations[l],
                self.layer_sizes[l + 1],
            );
            let a = if l + 1 < n {
                z.iter().map(|&v| v.max(0.0)).collect()
            } else {
                z.clone()
            };
            pre_activations.push(z);
            activations.push(a);
        }
        let out = activations[n].clone();
        Ok((
            out,
            ForwardCache {
                activations,
                pre_activations,
            },
        ))
    }

    /// Forward pass without a cache.
    pub fn predict(&self, input: &[f64]) -> Result<Vec<f64>> {
        if input.len() != self.input_dim() {
            return Err(invalid(format!(
                "input has length {}, network expects {}",
                input.len(),
                self.input_dim()
            )));
        }
        let n = self.num_layers();
        let mut x = input.to_vec();
        for l in 0..n {
            let mut z = affine(&self.weights[l], &self.biases[l], &x, self.layer_sizes[l + 1]);
            if l + 1 < n {
                for v in z.iter_mut() {
                    *v = v.max(0.0);
                }
            }
            x = z;
        }
        Ok(x)
    }

    /// Reverse-mode gradients of `output_grad · f(x)` with respect to the
    /// parameters and to the input.
    pub fn backward(&self, cache: &ForwardCache, output_grad: &[f64]) -> Result<(Self, Vec<f64>)> {
        let mut grads = self.zeros_like();
        let input_grad = self.backward_into(cache, output_grad, &mut grads)?;
        Ok((grads, input_grad))
    }

    /// Like [`Self::backward`] but accumulates parameter gradients into `grads`.
    pub fn backward_into(&self, cache: &ForwardCache, output_grad: &[f64], grads: &mut Self) -> Result<Vec<f64>> {
        self.check_cache(cache)?;
        if output_grad.len() != self.output_dim() {
            return Err(invalid(format!(
                "output gradient has length {}, network output is {}",
                output_grad.len(),
                self.output_dim()
            )));
        }
        if !self.same_shape(grads) {
            return Err(invalid("gradient accumulator has the wrong shape"));
        }
        let mut delta = output_grad.to_vec();
        for l in (0..self.num_layers()).rev() {
            let fan_in = self.layer_sizes[l];
            let a_in = &cache.activations[l];
            let w = &self.weights[l];
            let gw = &mut grads.weights[l];
            let gb = &mut grads.biases[l];
            let mut g_in = vec![0.0; fan_in];
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                gb[o] += d;
                let row = o * fan_in;
                for i in 0..fan_in {
                    gw[row + i] += d * a_in[i];
                    g_in[i] += d * w[row + i];
                }
            }
            if l > 0 {
                // ReLU subgradient at exactly zero is zero.
                for (g, &z) in g_in.iter_mut().zip(&cache.pre_activations[l - 1]) {
                    if z <= 0.0 {
                        *g = 0.0;
                    }
                }
            }
            delta = g_in;
        }
        Ok(delta)
    }

    fn check_cache(&self, cache: &ForwardCache) -> Result<()> {
        let ok = cache.activations.len() == self.num_layers() + 1
            && cache
                .activations
                .iter()
                .zip(&self.layer_sizes)
                .all(|(a, &n)| a.len() == n);
        if ok {
            Ok(())
        } else {
            Err(invalid("forward cache does not match the network shape"))
        }
    }

    pub fn to_checkpoint(&self) -> NetworkCheckpoint {
        NetworkCheckpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            layer_sizes: self.layer_sizes.clone(),
            weights: self.weights.clone(),
            biases: self.biases.clone(),
        }
    }

    pub fn from_checkpoint(ckpt: NetworkCheckpoint) -> Result<Self> {
        if ckpt.format != CHECKPOINT_FORMAT {
            return Err(Error::Format(format!("unknown network format {:?}", ckpt.format)));
        }
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!(
                "unsupported network checkpoint version {}",
                ckpt.version
            )));
        }
        Self::from_parts(&ckpt.layer_sizes, ckpt.weights, ckpt.biases)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.to_checkpoint()).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ckpt: NetworkCheckpoint = serde_json::from_str(text).map_err(|e| Error::Format(e.to_string()))?;
        Self::from_checkpoint(ckpt)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

fn affine(w: &[f64], b: &[f64], x: &[f64], out: usize) -> Vec<f64> {
    let fan_in = x.len();
    (0..out)
        .map(|o| {
            let row = &w[o * fan_in..(o + 1) * fan_in];
            b[o] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
        })
        .collect()
}

pub const CHECKPOINT_FORMAT: &str = "synergy-mlp";
pub const CHECKPOINT_VERSION: u32 = 1;

/// On-disk network container (JSON). Weights are row-major `(out, in)` per
/// layer; floats are written with shortest round-trip formatting, so a
/// save/load cycle is bit-exact.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct NetworkCheckpoint {
    pub format: String,
    pub version: u32,
    pub layer_sizes: Vec<usize>,
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Bias-corrected Adam.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub config: AdamConfig,
    step_count: u64,
    first_moment: NetworkParams,
    second_moment: NetworkParams,
}

impl AdamState {
    pub fn new(params: &NetworkParams, config: AdamConfig) -> Self {
        Self {
            config,
            step_count: 0,
            first_moment: params.zeros_like(),
            second_moment: params.zeros_like(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn step(&mut self, params: &mut NetworkParams, grads: &NetworkParams) -> Result<()> {
        if !params.same_shape(grads) || !params.same_shape(&self.first_moment) {
            return Err(invalid("Adam: parameter and gradient shapes differ"));
        }
        if !grads.is_finite() {
            return Err(Error::Numeric("Adam: non-finite gradient".into()));
        }
        let AdamConfig {
            lr,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        self.step_count += 1;
        let t = self.step_count as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for (((p, &g), m), v) in params
            .iter_mut()
            .zip(grads.iter())
            .zip(self.first_moment.iter_mut())
            .zip(self.second_moment.iter_mut())
        {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + epsilon);
        }
        Ok(())
    }
}

/// Rescales `grads` so its global L2 norm is at most `threshold`. Returns the
/// norm before clipping.
pub fn clip_gradients(grads: &mut NetworkParams, threshold: f64) -> f64 {
    let norm = grads.l2_norm();
    if norm > threshold {
        grads.scale(threshold / norm);
    }
    norm
}

#[cfg(test)]
#[allow(clippy::needless_range_loop)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Plain matrix-vector oracle, independent of `affine`.
    fn oracle_forward(net: &NetworkParams, x: &[f64]) -> Vec<f64> {
        let sizes = net.layer_sizes();
        let mut a = x.to_vec();
        for l in 0..net.num_layers() {
            let (rows, cols) = (sizes[l + 1], sizes[l]);
            let w = net.weight(l);
            let mut z = net.bias(l).to_vec();
            for r in 0..rows {
                for c in 0..cols {
                    z[r] += w[r * cols + c] * a[c];
                }
            }
            if l + 1 < net.num_layers() {
                z.iter_mut().for_each(|v| *v = if *v > 0.0 { *v } else { 0.0 });
            }
            a = z;
        }
        a
    }

    fn random_input(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random_range(-2.0..2.0)).collect()
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-7)
    }

    #[test]
    fn init_counts_and_determinism() {
        let a = NetworkParams::init(&[2, 3, 1], 5).unwrap();
        assert_eq!(a.param_count(), 13);
        assert_eq!(a, NetworkParams::init(&[2, 3, 1], 5).unwrap());
        assert_ne!(a, NetworkParams::init(&[2, 3, 1], 6).unwrap());
        assert!(a.biases.iter().flatten().all(|&b| b == 0.0));
        let bound = 1.0 / 2f64.sqrt();
        assert!(a.weight(0).iter().all(|w| w.abs() <= bound));
    }

    #[test]
    fn init_rejects_bad_sizes() {
        assert!(matches!(NetworkParams::init(&[4], 0), Err(Error::InvalidArgument(_))));
        assert!(matches!(NetworkParams::init(&[], 0), Err(Error::InvalidArgument(_))));
        assert!(matches!(
            NetworkParams::init(&[2, 0, 1], 0),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn zero_network_outputs_zero() {
        let net = NetworkParams::zeros(&[3, 4, 4, 2]).unwrap();
        let (out, _) = net.forward(&[1.0, -2.0, 3.0]).unwrap();
        assert_eq!(out, vec![0.0, 0.0]);
    }

    #[test]
    fn relu_clamps_negative_hidden_unit() {
        let net =
            NetworkParams::from_parts(&[1, 1, 1], vec![vec![-1.0], vec![1.0]], vec![vec![0.0], vec![0.0]]).unwrap();
        let (out, _) = net.forward(&[2.0]).unwrap();
        assert_eq!(out, vec![0.0]);
    }

    #[test]
    fn forward_rejects_wrong_length() {
        let net = NetworkParams::init(&[3, 2], 0).unwrap();
        assert!(matches!(net.forward(&[1.0]), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn forward_matches_matmul_oracle() {
        for seed in 0..20 {
            let net = NetworkParams::init(&[5, 7, 3], seed).unwrap();
            let x = random_input(5, seed + 100);
            let (out, cache) = net.forward(&x).unwrap();
            for (a, b) in out.iter().zip(oracle_forward(&net, &x)) {
                assert!((a - b).abs() < 1e-12);
            }
            assert_eq!(net.predict(&x).unwrap(), out);
            // Replaying the cached input reproduces the cached output exactly.
            assert_eq!(net.forward(cache.input()).unwrap().0, cache.output());
        }
    }

    #[test]
    fn backward_chain_rule_by_hand() {
        // f(x) = relu(w x + b) with an identity linear head.
        let net =
            NetworkParams::from_parts(&[1, 1, 1], vec![vec![2.0], vec![1.0]], vec![vec![1.0], vec![0.0]]).unwrap();
        let (_, cache) = net.forward(&[3.0]).unwrap();
        let (g, gx) = net.backward(&cache, &[1.0]).unwrap();
        assert_eq!(gx, vec![2.0]);
        assert_eq!(g.weight(0), &[3.0]);
        assert_eq!(g.bias(0), &[1.0]);
    }

    #[test]
    fn zero_output_grad_gives_zero_gradients() {
        let net = NetworkParams::init(&[3, 5, 2], 1).unwrap();
        let (_, cache) = net.forward(&[0.1, 0.2, 0.3]).unwrap();
        let (g, gx) = net.backward(&cache, &[0.0, 0.0]).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
        assert!(gx.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backward_rejects_shape_mismatch() {
        let net = NetworkParams::init(&[3, 5, 2], 1).unwrap();
        let (_, cache) = net.forward(&[0.1, 0.2, 0.3]).unwrap();
        assert!(net.backward(&cache, &[1.0]).is_err());
        let other = NetworkParams::init(&[3, 4, 2], 1).unwrap();
        assert!(other.backward(&cache, &[1.0, 1.0]).is_err());
    }

    /// Central finite differences of `c · f(x)` against reverse mode.
    pub(crate) fn check_gradients(net: &NetworkParams, x: &[f64], c: &[f64]) {
        let h = 1e-5;
        let dot =
            |net: &NetworkParams, x: &[f64]| -> f64 { net.predict(x).unwrap().iter().zip(c).map(|(a, b)| a * b).sum() };
        let (_, cache) = net.forward(x).unwrap();
        let (g, gx) = net.backward(&cache, c).unwrap();
        for i in 0..x.len() {
            let mut xp = x.to_vec();
            let mut xm = x.to_vec();
            xp[i] += h;
            xm[i] -= h;
            let fd = (dot(net, &xp) - dot(net, &xm)) / (2.0 * h);
            assert!(rel_err(fd, gx[i]) < 1e-4, "input {i}: fd {fd} vs {}", gx[i]);
        }
        let analytic: Vec<f64> = g.iter().copied().collect();
        for (k, &want) in analytic.iter().enumerate() {
            let mut np = net.clone();
            let mut nm = net.clone();
            *np.iter_mut().nth(k).unwrap() += h;
            *nm.iter_mut().nth(k).unwrap() -= h;
            let fd = (dot(&np, x) - dot(&nm, x)) / (2.0 * h);
            assert!(rel_err(fd, want) < 1e-4, "param {k}: fd {fd} vs {want}");
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        for seed in 0..10 {
            let net = NetworkParams::init(&[4, 6, 5, 3], seed).unwrap();
            let x = random_input(4, seed + 7);
            let c = random_input(3, seed + 11);
            check_gradients(&net, &x, &c);
        }
    }

    #[test]
    fn backprop_is_linear_in_the_head() {
        // Input gradient through a frozen linear head equals the head-weighted
        // combination of per-output input gradients.
        let net = NetworkParams::init(&[3, 8, 4], 3).unwrap();
        let x = random_input(3, 9);
        let head = [0.5, -1.5, 2.0, 0.25];
        let (_, cache) = net.forward(&x).unwrap();
        let (_, combined) = net.backward(&cache, &head).unwrap();
        let mut summed = [0.0; 3];
        for (k, &hk) in head.iter().enumerate() {
            let mut e = vec![0.0; 4];
            e[k] = 1.0;
            let (_, gk) = net.backward(&cache, &e).unwrap();
            for i in 0..3 {
                summed[i] += hk * gk[i];
            }
        }
        for i in 0..3 {
            assert!((combined[i] - summed[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn adam_zero_gradient_is_noop() {
        let mut net = NetworkParams::init(&[2, 2], 0).unwrap();
        let before = net.clone();
        let mut adam = AdamState::new(&net, AdamConfig::default());
        adam.step(&mut net, &before.zeros_like()).unwrap();
        assert_eq!(net, before);
        assert_eq!(adam.step_count(), 1);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut net = NetworkParams::zeros(&[1, 1]).unwrap();
        let mut g = net.zeros_like();
        g.weight_mut(0)[0] = 3.7;
        g.bias_mut(0)[0] = -0.2;
        let mut adam = AdamState::new(&net, AdamConfig::default());
        adam.step(&mut net, &g).unwrap();
        assert!((net.weight(0)[0] + 1e-3).abs() < 1e-9);
        assert!((net.bias(0)[0] - 1e-3).abs() < 1e-9);
    }

    #[test]
    fn adam_rejects_non_finite() {
        let mut net = NetworkParams::zeros(&[1, 1]).unwrap();
        let mut g = net.zeros_like();
        g.weight_mut(0)[0] = f64::NAN;
        let mut adam = AdamState::new(&net, AdamConfig::default());
        assert!(matches!(adam.step(&mut net, &g), Err(Error::Numeric(_))));
    }

    #[test]
    fn adam_matches_reference_on_quadratic() {
        // Minimize 0.5 * sum(k_i * p_i^2) for three steps; reference written
        // scalar by scalar.
        let mut net = NetworkParams::from_parts(&[2, 1], vec![vec![1.0, -2.0]], vec![vec![0.5]]).unwrap();
        let k = [1.0, 3.0, 10.0];
        let cfg = AdamConfig::default();
        let mut adam = AdamState::new(&net, cfg);
        let mut p = [1.0f64, -2.0, 0.5];
        let mut m = [0.0f64; 3];
        let mut v = [0.0f64; 3];
        for t in 1..=3 {
            let mut g = net.zeros_like();
            for (i, (gi, pi)) in g.iter_mut().zip(net.iter()).enumerate() {
                *gi = k[i] * pi;
            }
            adam.step(&mut net, &g).unwrap();
            for i in 0..3 {
                let gi = k[i] * p[i];
                m[i] = 0.9 * m[i] + 0.1 * gi;
                v[i] = 0.999 * v[i] + 0.001 * gi * gi;
                let mh = m[i] / (1.0 - 0.9f64.powi(t));
                let vh = v[i] / (1.0 - 0.999f64.powi(t));
                p[i] -= 1e-3 * mh / (vh.sqrt() + 1e-8);
            }
        }
        for (a, b) in net.iter().zip(p) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    fn grads_from(values: &[f64]) -> NetworkParams {
        let mut g = NetworkParams::zeros(&[values.len(), 1]).unwrap();
        g.weight_mut(0).copy_from_slice(values);
        g
    }

    #[test]
    fn clip_examples() {
        let mut g = grads_from(&[3.0, 4.0]);
        let n = clip_gradients(&mut g, 1.0);
        assert_eq!(n, 5.0);
        assert!((g.weight(0)[0] - 0.6).abs() < 1e-15 && (g.weight(0)[1] - 0.8).abs() < 1e-15);

        let mut g = grads_from(&[0.6, 0.8]);
        clip_gradients(&mut g, 0.5);
        assert!((g.weight(0)[0] - 0.3).abs() < 1e-15 && (g.weight(0)[1] - 0.4).abs() < 1e-15);

        let mut g = grads_from(&[0.18, 0.24]);
        clip_gradients(&mut g, 0.5);
        assert_eq!(g.weight(0), &[0.18, 0.24]);
    }

    #[test]
    fn checkpoint_round_trips_bit_exactly() {
        let net = NetworkParams::init(&[3, 64, 64, 7], 42).unwrap();
        let back = NetworkParams::from_json(&net.to_json()).unwrap();
        assert!(net.iter().zip(back.iter()).all(|(a, b)| a.to_bits() == b.to_bits()));
        assert_eq!(net, back);
    }

    #[test]
    fn checkpoint_rejects_wrong_version() {
        let mut ckpt = NetworkParams::init(&[2, 2], 0).unwrap().to_checkpoint();
        ckpt.version = 99;
        assert!(matches!(NetworkParams::from_checkpoint(ckpt), Err(Error::Format(_))));
    }

    proptest! {
        #[test]
        fn clipping_is_idempotent(values in proptest::collection::vec(-10.0f64..10.0, 1..20), thr in 0.01f64..5.0) {
            let mut once = grads_from(&values);
            clip_gradients(&mut once, thr);
            let mut twice = once.clone();
            clip_gradients(&mut twice, thr);
            for (a, b) in once.iter().zip(twice.iter()) {
                prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
            }
        }

        #[test]
        fn training_sequence_is_deterministic(seed in 0u64..1000) {
            let run = || {
                let mut net = NetworkParams::init(&[3, 4, 2], seed).unwrap();
                let mut adam = AdamState::new(&net, AdamConfig::default());
                for step in 0..3 {
                    let x = random_input(3, seed + step);
                    let (_, cache) = net.forward(&x).unwrap();
                    let (g, _) = net.backward(&cache, &[1.0, -1.0]).unwrap();
                    adam.step(&mut net, &g).unwrap();
                }
                net
            };
            prop_assert_eq!(run(), run());
        }
    }
}
