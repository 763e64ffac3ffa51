//! Input attribution for the policy network: path-integrated gradients
//! of one action's probability from a baseline observation to the actual
//! one.

use crate::error::{Error, Result};
use crate::nn::{softmax, Gradients, Mlp};

/// Gradient of softmax(logits)[target] with respect to the network
/// input.
pub fn prob_input_gradient(policy: &Mlp, input: &[f64], target: usize) -> Result<Vec<f64>> {
    if target >= policy.output_dim() {
        return Err(Error::config(format!(
            "target action {target} outside 0..{}",
            policy.output_dim()
        )));
    }
    let cache = policy.forward_cached(input)?;
    let probs = softmax(cache.output());
    // d p_t / d z_j = p_t (δ_tj - p_j).
    let out_grad: Vec<f64> = probs
        .iter()
        .enumerate()
        .map(|(j, pj)| probs[target] * (if j == target { 1.0 } else { 0.0 } - pj))
        .collect();
    let mut sink = Gradients::zeros_like(policy);
    policy.backward(&cache, &out_grad, &mut sink)
}

/// Attribution of `probs[target]` to each input feature, integrating the
/// gradient along the straight path from `baseline` to `input` with the
/// trapezoid rule over `steps` segments. Attributions sum to
/// p(input) - p(baseline) up to quadrature error.
pub fn integrated_gradients(
    policy: &Mlp,
    baseline: &[f64],
    input: &[f64],
    target: usize,
    steps: usize,
) -> Result<Vec<f64>> {
    if baseline.len() != input.len() || input.len() != policy.input_dim() {
        return Err(Error::config(format!(
            "baseline/input lengths {}/{} do not match network input {}",
            baseline.len(),
            input.len(),
            policy.input_dim()
        )));
    }
    if steps < 2 {
        return Err(Error::config("integration needs at least 2 steps"));
    }
    let dim = input.len();
    let mut integral = vec![0.0; dim];
    let mut point = vec![0.0; dim];
    for k in 0..=steps {
        let alpha = k as f64 / steps as f64;
        for j in 0..dim {
            point[j] = baseline[j] + alpha * (input[j] - baseline[j]);
        }
        let grad = prob_input_gradient(policy, &point, target)?;
        let weight = if k == 0 || k == steps { 0.5 } else { 1.0 } / steps as f64;
        for j in 0..dim {
            integral[j] += weight * grad[j];
        }
    }
    Ok((0..dim).map(|j| (input[j] - baseline[j]) * integral[j]).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn prob(policy: &Mlp, x: &[f64], target: usize) -> f64 {
        softmax(&policy.forward(x).unwrap())[target]
    }

    #[test]
    fn input_gradient_matches_central_differences() {
        let policy = Mlp::orthogonal(&[5, 16, 16, 5], 0.7, 1).unwrap();
        let x = [0.9, 0.4, 0.15, 0.6, 0.05];
        for target in 0..5 {
            let g = prob_input_gradient(&policy, &x, target).unwrap();
            let h = 1e-6;
            for j in 0..5 {
                let mut up = x;
                up[j] += h;
                let mut down = x;
                down[j] -= h;
                let fd = (prob(&policy, &up, target) - prob(&policy, &down, target)) / (2.0 * h);
                assert!((g[j] - fd).abs() < 1e-8, "target {target} dim {j}: {} vs {fd}", g[j]);
            }
        }
    }

    #[test]
    fn attributions_satisfy_completeness() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for seed in 0..5 {
            let policy = Mlp::orthogonal(&[5, 32, 5], 0.8, seed).unwrap();
            let baseline: Vec<f64> = (0..5).map(|_| rng.random_range(-0.5..0.5)).collect();
            let input: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
            let target = (seed % 5) as usize;
            let attr = integrated_gradients(&policy, &baseline, &input, target, 512).unwrap();
            let total: f64 = attr.iter().sum();
            let expect = prob(&policy, &input, target) - prob(&policy, &baseline, target);
            assert!((total - expect).abs() < 1e-4, "completeness gap {}", (total - expect).abs());
        }
    }

    #[test]
    fn baseline_equal_to_input_gives_zero_attribution() {
        let policy = Mlp::orthogonal(&[5, 8, 5], 0.5, 3).unwrap();
        let x = [0.2, 0.4, 0.6, 0.8, 1.0];
        let attr = integrated_gradients(&policy, &x, &x, 2, 16).unwrap();
        assert!(attr.iter().all(|a| *a == 0.0));
    }

    #[test]
    fn unused_input_gets_zero_attribution() {
        // Zero the first input column of the first layer so feature 0
        // cannot influence the output.
        let mut policy = Mlp::orthogonal(&[3, 4, 3], 0.5, 4).unwrap();
        {
            let l0 = &mut policy.layers_mut()[0];
            for o in 0..4 {
                l0.w[o * 3] = 0.0;
            }
        }
        let attr =
            integrated_gradients(&policy, &[0.0, 0.0, 0.0], &[0.9, 0.3, -0.4], 0, 64).unwrap();
        assert_eq!(attr[0], 0.0);
        assert!(attr[1] != 0.0 || attr[2] != 0.0);
    }

    #[test]
    fn rejects_invalid_requests() {
        let policy = Mlp::orthogonal(&[3, 4, 3], 0.5, 5).unwrap();
        let x = [0.1, 0.2, 0.3];
        assert!(integrated_gradients(&policy, &[0.0; 2], &x, 0, 16).is_err());
        assert!(integrated_gradients(&policy, &[0.0; 3], &x, 3, 16).is_err());
        assert!(integrated_gradients(&policy, &[0.0; 3], &x, 0, 1).is_err());
    }
}
