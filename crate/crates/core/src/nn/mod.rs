//! Minimal dense neural network stack: tanh MLPs with explicit
//! backpropagation, Adam, value-target normalization, input attribution,
//! and JSON checkpoints. Everything is f64 and single-threaded; the
//! networks here are two hidden layers of 64 units, so clarity beats
//! vectorization tricks.

mod adam;
mod attrib;
mod checkpoint;
mod mlp;
mod popart;

pub use adam::Adam;
pub use attrib::{integrated_gradients, prob_input_gradient};
pub use checkpoint::{config_hash, Checkpoint, CheckpointMeta, CHECKPOINT_FORMAT};
pub use mlp::{Gradients, Layer, Mlp, POLICY_OUTPUT_GAIN, VALUE_OUTPUT_GAIN};
pub use popart::PopArt;

use crate::error::{Error, Result};

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|e| e / sum).collect()
}

/// Numerically stable log-softmax.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln() + max;
    logits.iter().map(|z| z - lse).collect()
}

/// Shannon entropy of a distribution in nats, treating 0·ln 0 as 0.
pub fn entropy(probs: &[f64]) -> f64 {
    -probs.iter().filter(|&&p| p > 0.0).map(|&p| p * p.ln()).sum::<f64>()
}

/// Softmax restricted to entries with `mask[i] == true`; masked entries
/// get probability exactly 0. Equivalent to setting their logits to
/// negative infinity.
pub fn masked_softmax(logits: &[f64], mask: &[bool]) -> Result<Vec<f64>> {
    if logits.len() != mask.len() {
        return Err(Error::config("mask length does not match logits"));
    }
    if !mask.iter().any(|&v| v) {
        return Err(Error::config("action mask leaves no valid action"));
    }
    let max = logits
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(z, _)| *z)
        .fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> =
        logits.iter().zip(mask).map(|(z, &m)| if m { (z - max).exp() } else { 0.0 }).collect();
    let sum: f64 = exps.iter().sum();
    Ok(exps.iter().map(|e| e / sum).collect())
}

/// Draws an index from a categorical distribution.
pub fn sample_categorical<R: rand::Rng>(rng: &mut R, probs: &[f64]) -> usize {
    let u: f64 = rng.random_range(0.0..1.0);
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Checks that `probs` is a finite distribution summing to 1.
pub fn validate_distribution(probs: &[f64]) -> Result<()> {
    if probs.is_empty() {
        return Err(Error::config("empty probability vector"));
    }
    if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(Error::config(format!("probabilities must be finite and ≥ 0: {probs:?}")));
    }
    let sum: f64 = probs.iter().sum();
    if (sum - 1.0).abs() > 1e-6 {
        return Err(Error::config(format!("probabilities sum to {sum}, not 1")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn softmax_matches_direct_computation() {
        let logits = [1.0, 2.0, 3.0];
        let p = softmax(&logits);
        let denom: f64 = logits.iter().map(|z| z.exp()).sum();
        for (pi, zi) in p.iter().zip(&logits) {
            assert!((pi - zi.exp() / denom).abs() < 1e-12);
        }
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn softmax_is_shift_invariant_and_overflow_safe() {
        let a = softmax(&[1.0, 2.0, 3.0]);
        let b = softmax(&[1001.0, 1002.0, 1003.0]);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
        let c = softmax(&[-1e9, 0.0, 1e9]);
        assert!(c.iter().all(|p| p.is_finite()));
        assert!((c[2] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn log_softmax_agrees_with_softmax_log() {
        let logits = [0.3, -1.2, 2.2, 0.0];
        let lp = log_softmax(&logits);
        let p = softmax(&logits);
        for (l, q) in lp.iter().zip(&p) {
            assert!((l.exp() - q).abs() < 1e-12);
        }
    }

    #[test]
    fn entropy_known_values() {
        assert!((entropy(&[0.25; 4]) - (4.0f64).ln()).abs() < 1e-12);
        assert_eq!(entropy(&[1.0, 0.0, 0.0]), 0.0);
        let p = [0.5, 0.5];
        assert!((entropy(&p) - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn categorical_sampling_matches_frequencies() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let probs = [0.1, 0.2, 0.3, 0.4];
        let mut counts = [0usize; 4];
        let n = 200_000;
        for _ in 0..n {
            counts[sample_categorical(&mut rng, &probs)] += 1;
        }
        for (c, p) in counts.iter().zip(&probs) {
            let freq = *c as f64 / n as f64;
            assert!((freq - p).abs() < 0.01, "freq {freq} vs p {p}");
        }
    }

    #[test]
    fn masked_softmax_suppresses_and_renormalizes() {
        let logits = [1.0, 2.0, 3.0, 4.0];
        let p = masked_softmax(&logits, &[true, false, true, false]).unwrap();
        assert_eq!(p[1], 0.0);
        assert_eq!(p[3], 0.0);
        // Equals softmax over the valid logits only.
        let sub = softmax(&[1.0, 3.0]);
        assert!((p[0] - sub[0]).abs() < 1e-12);
        assert!((p[2] - sub[1]).abs() < 1e-12);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);

        let all = masked_softmax(&logits, &[true; 4]).unwrap();
        let plain = softmax(&logits);
        for (a, b) in all.iter().zip(&plain) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(masked_softmax(&logits, &[false; 4]).is_err());
        assert!(masked_softmax(&logits, &[true; 3]).is_err());
    }

    #[test]
    fn distribution_validation_catches_bad_vectors() {
        assert!(validate_distribution(&[0.5, 0.5]).is_ok());
        assert!(validate_distribution(&[]).is_err());
        assert!(validate_distribution(&[0.5, 0.6]).is_err());
        assert!(validate_distribution(&[f64::NAN, 1.0]).is_err());
        assert!(validate_distribution(&[-0.1, 1.1]).is_err());
    }
}
