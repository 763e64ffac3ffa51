//! Fully-connected network with tanh hidden layers and a linear output,
//! plus reverse-mode gradients computed by hand.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Orthogonal-init gain for the policy head, keeps initial logits small
/// so the starting policy is near uniform.
pub const POLICY_OUTPUT_GAIN: f64 = 0.01;

/// Orthogonal-init gain for the value head.
pub const VALUE_OUTPUT_GAIN: f64 = 1.0;

const HIDDEN_GAIN: f64 = 5.0 / 3.0;

/// One dense layer. Weights are row-major `[out][in]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

/// The network: `sizes` lists layer widths input-first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    sizes: Vec<usize>,
    layers: Vec<Layer>,
}

/// Forward-pass activations kept for the backward pass. `acts[0]` is the
/// input; `acts.last()` is the network output.
#[derive(Debug, Clone)]
pub struct Cache {
    acts: Vec<Vec<f64>>,
}

impl Cache {
    pub fn output(&self) -> &[f64] {
        self.acts.last().expect("cache always holds the input")
    }

    pub fn input(&self) -> &[f64] {
        &self.acts[0]
    }
}

/// Parameter gradients with the same shapes as the network.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Layer>,
}

impl Mlp {
    /// Builds a network with orthogonally initialized weights and zero
    /// biases. Hidden layers use gain 5/3 (tanh); the output layer uses
    /// `output_gain`.
    pub fn orthogonal(sizes: &[usize], output_gain: f64, seed: u64) -> Result<Mlp> {
        if sizes.len() < 2 {
            return Err(Error::config("a network needs at least input and output sizes"));
        }
        if sizes.iter().any(|&s| s == 0) {
            return Err(Error::config(format!("zero-width layer in {sizes:?}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let last = sizes.len() - 2;
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(l, io)| {
                let gain = if l == last { output_gain } else { HIDDEN_GAIN };
                Layer {
                    w: orthogonal_matrix(io[1], io[0], gain, &mut rng),
                    b: vec![0.0; io[1]],
                }
            })
            .collect();
        Ok(Mlp { sizes: sizes.to_vec(), layers })
    }

    /// Builds a network from explicit layers, deriving `sizes` from
    /// their shapes.
    pub fn from_layers(layers: Vec<Layer>) -> Result<Mlp> {
        if layers.is_empty() {
            return Err(Error::config("a network needs at least one layer"));
        }
        let mut sizes = Vec::with_capacity(layers.len() + 1);
        for (i, l) in layers.iter().enumerate() {
            if l.b.is_empty() || l.w.len() % l.b.len() != 0 {
                return Err(Error::config(format!("layer {i} has inconsistent shapes")));
            }
            let input = l.w.len() / l.b.len();
            if input == 0 {
                return Err(Error::config(format!("layer {i} has zero input width")));
            }
            match sizes.last() {
                None => sizes.push(input),
                Some(&prev) if prev != input => {
                    return Err(Error::config(format!(
                        "layer {i} expects {input} inputs but the previous layer emits {prev}"
                    )));
                }
                Some(_) => {}
            }
            sizes.push(l.b.len());
        }
        let mlp = Mlp { sizes, layers };
        mlp.validate()?;
        Ok(mlp)
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

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    /// The output layer, exposed for value-normalization rescaling.
    pub fn output_layer_mut(&mut self) -> &mut Layer {
        self.layers.last_mut().unwrap()
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    /// Shape and finiteness check, used after deserialization.
    pub fn validate(&self) -> Result<()> {
        if self.sizes.len() < 2 || self.layers.len() != self.sizes.len() - 1 {
            return Err(Error::checkpoint("layer count does not match sizes"));
        }
        for (l, io) in self.layers.iter().zip(self.sizes.windows(2)) {
            if l.w.len() != io[0] * io[1] || l.b.len() != io[1] {
                return Err(Error::checkpoint(format!(
                    "layer shape {}x{} does not match sizes {:?}",
                    l.b.len(),
                    if l.b.is_empty() { 0 } else { l.w.len() / l.b.len() },
                    self.sizes
                )));
            }
            if l.w.iter().chain(&l.b).any(|v| !v.is_finite()) {
                return Err(Error::checkpoint("non-finite parameter"));
            }
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_cached(x)?.acts.pop().unwrap())
    }

    /// Forward pass keeping every activation for backprop.
    pub fn forward_cached(&self, x: &[f64]) -> Result<Cache> {
        if x.len() != self.input_dim() {
            return Err(Error::config(format!(
                "input length {} does not match network input {}",
                x.len(),
                self.input_dim()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::config("non-finite network input"));
        }
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.to_vec());
        for (l, layer) in self.layers.iter().enumerate() {
            let a = &acts[l];
            let n_out = layer.b.len();
            let n_in = a.len();
            let mut z = layer.b.clone();
            for (o, zo) in z.iter_mut().enumerate() {
                let row = &layer.w[o * n_in..(o + 1) * n_in];
                *zo += row.iter().zip(a).map(|(w, x)| w * x).sum::<f64>();
            }
            if l + 1 < self.layers.len() {
                for zo in &mut z {
                    *zo = zo.tanh();
                }
            }
            debug_assert_eq!(z.len(), n_out);
            acts.push(z);
        }
        Ok(Cache { acts })
    }

    /// Backpropagates `out_grad` (dLoss/d output) through the cached
    /// pass, accumulating parameter gradients into `grads` and returning
    /// the gradient with respect to the input.
    pub fn backward(&self, cache: &Cache, out_grad: &[f64], grads: &mut Gradients) -> Result<Vec<f64>> {
        if out_grad.len() != self.output_dim() {
            return Err(Error::config("output gradient length mismatch"));
        }
        if grads.layers.len() != self.layers.len() {
            return Err(Error::config("gradient accumulator shape mismatch"));
        }
        let mut g = out_grad.to_vec();
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let a_in = &cache.acts[l];
            let n_in = a_in.len();
            // dLoss/dz for this layer: the output layer is linear, hidden
            // activations need the tanh derivative 1 - a².
            let dz: Vec<f64> = if l == self.layers.len() - 1 {
                g
            } else {
                g.iter().zip(&cache.acts[l + 1]).map(|(gi, a)| gi * (1.0 - a * a)).collect()
            };
            let gl = &mut grads.layers[l];
            for (o, d) in dz.iter().enumerate() {
                gl.b[o] += d;
                let row = &mut gl.w[o * n_in..(o + 1) * n_in];
                for (wi, x) in row.iter_mut().zip(a_in) {
                    *wi += d * x;
                }
            }
            let mut prev = vec![0.0; n_in];
            for (o, d) in dz.iter().enumerate() {
                let row = &layer.w[o * n_in..(o + 1) * n_in];
                for (p, w) in prev.iter_mut().zip(row) {
                    *p += d * w;
                }
            }
            g = prev;
        }
        Ok(g)
    }
}

impl Gradients {
    pub fn zeros_like(net: &Mlp) -> Gradients {
        Gradients {
            layers: net
                .layers
                .iter()
                .map(|l| Layer { w: vec![0.0; l.w.len()], b: vec![0.0; l.b.len()] })
                .collect(),
        }
    }

    pub fn scale(&mut self, s: f64) {
        for l in &mut self.layers {
            for v in l.w.iter_mut().chain(&mut l.b) {
                *v *= s;
            }
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.layers
            .iter()
            .flat_map(|l| l.w.iter().chain(&l.b))
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    /// Rescales so the global norm is at most `max_norm`; returns the
    /// pre-clip norm.
    pub fn clip_global_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.global_norm();
        if norm > max_norm && norm > 0.0 {
            self.scale(max_norm / norm);
        }
        norm
    }
}

/// Row-major `rows x cols` matrix with orthonormal rows (or columns when
/// rows > cols), scaled by `gain`.
fn orthogonal_matrix(rows: usize, cols: usize, gain: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    if rows <= cols {
        let m = gram_schmidt_rows(rows, cols, rng);
        m.into_iter().map(|v| v * gain).collect()
    } else {
        // Orthonormalize in the transposed orientation, then transpose.
        let t = gram_schmidt_rows(cols, rows, rng);
        let mut m = vec![0.0; rows * cols];
        for r in 0..rows {
            for c in 0..cols {
                m[r * cols + c] = gain * t[c * rows + r];
            }
        }
        m
    }
}

/// Gram-Schmidt on gaussian rows; requires rows <= cols.
fn gram_schmidt_rows(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut m = vec![0.0; rows * cols];
    for r in 0..rows {
        loop {
            for c in 0..cols {
                m[r * cols + c] = StandardNormal.sample(rng);
            }
            for prev in 0..r {
                let dot: f64 = (0..cols).map(|c| m[r * cols + c] * m[prev * cols + c]).sum();
                for c in 0..cols {
                    m[r * cols + c] -= dot * m[prev * cols + c];
                }
            }
            let norm: f64 = (0..cols).map(|c| m[r * cols + c].powi(2)).sum::<f64>().sqrt();
            if norm > 1e-8 {
                for c in 0..cols {
                    m[r * cols + c] /= norm;
                }
                break;
            }
        }
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
    }

    /// Central-difference gradient of loss(params) = dot(output, c).
    fn finite_diff_check(sizes: &[usize], seed: u64, tol: f64) {
        let mut net = Mlp::orthogonal(sizes, 0.7, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcd);
        let x: Vec<f64> = (0..sizes[0]).map(|_| rng.random_range(-1.5..1.5)).collect();
        let c: Vec<f64> = (0..*sizes.last().unwrap()).map(|_| rng.random_range(-1.0..1.0)).collect();

        let mut grads = Gradients::zeros_like(&net);
        let cache = net.forward_cached(&x).unwrap();
        let input_grad = net.backward(&cache, &c, &mut grads).unwrap();

        let loss = |net: &Mlp, x: &[f64]| -> f64 {
            net.forward(x).unwrap().iter().zip(&c).map(|(o, ci)| o * ci).sum()
        };
        let h = 1e-6;
        let mut max_err = 0.0f64;
        for l in 0..net.layers.len() {
            for k in 0..net.layers[l].w.len() {
                let orig = net.layers[l].w[k];
                net.layers[l].w[k] = orig + h;
                let up = loss(&net, &x);
                net.layers[l].w[k] = orig - h;
                let down = loss(&net, &x);
                net.layers[l].w[k] = orig;
                max_err = max_err.max(rel_err(grads.layers[l].w[k], (up - down) / (2.0 * h)));
            }
            for k in 0..net.layers[l].b.len() {
                let orig = net.layers[l].b[k];
                net.layers[l].b[k] = orig + h;
                let up = loss(&net, &x);
                net.layers[l].b[k] = orig - h;
                let down = loss(&net, &x);
                net.layers[l].b[k] = orig;
                max_err = max_err.max(rel_err(grads.layers[l].b[k], (up - down) / (2.0 * h)));
            }
        }
        // Input gradient against the same oracle.
        let mut xv = x.clone();
        for i in 0..xv.len() {
            let orig = xv[i];
            xv[i] = orig + h;
            let up = loss(&net, &xv);
            xv[i] = orig - h;
            let down = loss(&net, &xv);
            xv[i] = orig;
            max_err = max_err.max(rel_err(input_grad[i], (up - down) / (2.0 * h)));
        }
        assert!(max_err <= tol, "max relative gradient error {max_err} for sizes {sizes:?}");
    }

    #[test]
    fn gradients_match_central_differences_small_nets() {
        finite_diff_check(&[3, 8, 4], 1, 1e-5);
        finite_diff_check(&[5, 16, 16, 5], 2, 1e-5);
        finite_diff_check(&[2, 1], 3, 1e-5);
    }

    #[test]
    fn forward_matches_hand_computation() {
        let mut net = Mlp::orthogonal(&[2, 2, 1], 1.0, 0).unwrap();
        net.layers[0] = Layer { w: vec![0.5, -0.25, 1.0, 0.75], b: vec![0.1, -0.2] };
        net.layers[1] = Layer { w: vec![2.0, -1.0], b: vec![0.05] };
        let x = [0.4, -0.6];
        let h1 = (0.5 * 0.4 + (-0.25) * (-0.6) + 0.1f64).tanh();
        let h2 = (1.0 * 0.4 + 0.75 * (-0.6) - 0.2f64).tanh();
        let expected = 2.0 * h1 - 1.0 * h2 + 0.05;
        let y = net.forward(&x).unwrap();
        assert!((y[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn orthogonal_init_rows_are_orthonormal_times_gain() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for (rows, cols) in [(4, 9), (8, 8), (9, 4)] {
            let gain = 5.0 / 3.0;
            let m = orthogonal_matrix(rows, cols, gain, &mut rng);
            // Gram matrix along the short dimension should be gain² I.
            let (n, stride, outer) =
                if rows <= cols { (rows, cols, true) } else { (cols, rows, false) };
            for i in 0..n {
                for j in 0..n {
                    let dot: f64 = (0..stride)
                        .map(|k| {
                            if outer {
                                m[i * stride + k] * m[j * stride + k]
                            } else {
                                m[k * n + i] * m[k * n + j]
                            }
                        })
                        .sum();
                    let expect = if i == j { gain * gain } else { 0.0 };
                    assert!((dot - expect).abs() < 1e-10, "gram[{i}][{j}] = {dot}");
                }
            }
        }
    }

    #[test]
    fn init_is_deterministic_in_the_seed() {
        let a = Mlp::orthogonal(&[5, 64, 64, 5], 0.01, 9).unwrap();
        let b = Mlp::orthogonal(&[5, 64, 64, 5], 0.01, 9).unwrap();
        let c = Mlp::orthogonal(&[5, 64, 64, 5], 0.01, 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn backward_accumulates_across_calls() {
        let net = Mlp::orthogonal(&[3, 4, 2], 1.0, 5).unwrap();
        let x = [0.3, -0.1, 0.8];
        let g = [1.0, -0.5];
        let cache = net.forward_cached(&x).unwrap();
        let mut once = Gradients::zeros_like(&net);
        net.backward(&cache, &g, &mut once).unwrap();
        let mut twice = Gradients::zeros_like(&net);
        net.backward(&cache, &g, &mut twice).unwrap();
        net.backward(&cache, &g, &mut twice).unwrap();
        for (a, b) in once.layers.iter().zip(&twice.layers) {
            for (x, y) in a.w.iter().zip(&b.w) {
                assert!((2.0 * x - y).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn zero_output_gradient_means_zero_parameter_gradient() {
        let net = Mlp::orthogonal(&[4, 8, 3], 1.0, 6).unwrap();
        let cache = net.forward_cached(&[0.1, 0.2, 0.3, 0.4]).unwrap();
        let mut grads = Gradients::zeros_like(&net);
        net.backward(&cache, &[0.0, 0.0, 0.0], &mut grads).unwrap();
        assert_eq!(grads.global_norm(), 0.0);
    }

    #[test]
    fn clip_global_norm_caps_and_preserves_direction() {
        let net = Mlp::orthogonal(&[2, 2], 1.0, 7).unwrap();
        let mut g = Gradients::zeros_like(&net);
        g.layers[0].w = vec![3.0, 0.0, 0.0, 4.0];
        let pre = g.clip_global_norm(1.0);
        assert!((pre - 5.0).abs() < 1e-12);
        assert!((g.global_norm() - 1.0).abs() < 1e-12);
        assert!((g.layers[0].w[0] - 0.6).abs() < 1e-12);
        // Below the cap nothing changes.
        let mut h = Gradients::zeros_like(&net);
        h.layers[0].w = vec![0.3, 0.0, 0.0, 0.4];
        let pre = h.clip_global_norm(10.0);
        assert!((pre - 0.5).abs() < 1e-12);
        assert_eq!(h.layers[0].w[0], 0.3);
    }

    #[test]
    fn forward_rejects_bad_inputs() {
        let net = Mlp::orthogonal(&[3, 2], 1.0, 8).unwrap();
        assert!(net.forward(&[1.0, 2.0]).is_err());
        assert!(net.forward(&[1.0, f64::NAN, 0.0]).is_err());
        assert!(Mlp::orthogonal(&[5], 1.0, 0).is_err());
        assert!(Mlp::orthogonal(&[5, 0, 2], 1.0, 0).is_err());
    }

    #[test]
    fn validate_catches_corrupted_shapes() {
        let mut net = Mlp::orthogonal(&[3, 4, 2], 1.0, 12).unwrap();
        assert!(net.validate().is_ok());
        net.layers[0].w.pop();
        assert!(net.validate().is_err());
        let mut net = Mlp::orthogonal(&[3, 2], 1.0, 12).unwrap();
        net.layers[0].b[0] = f64::INFINITY;
        assert!(net.validate().is_err());
    }

    #[test]
    fn policy_gain_keeps_initial_logits_near_zero() {
        let net = Mlp::orthogonal(&[5, 64, 64, 5], POLICY_OUTPUT_GAIN, 3).unwrap();
        let logits = net.forward(&[0.9, 0.5, 0.1, 0.6, 0.2]).unwrap();
        for z in &logits {
            assert!(z.abs() < 0.05, "initial logit {z} too large");
        }
        let probs = crate::nn::softmax(&logits);
        for p in &probs {
            assert!((p - 0.2).abs() < 0.01);
        }
    }
}
