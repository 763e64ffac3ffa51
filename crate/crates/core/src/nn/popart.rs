//! Running normalization of value targets with output-preserving
//! rescaling of the critic head. The critic is trained against
//! normalized targets while its denormalized predictions stay unchanged
//! whenever the running statistics move.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Mlp;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PopArt {
    mean: f64,
    /// Running second moment E[y²].
    sq_mean: f64,
    beta: f64,
    sigma_min: f64,
    initialized: bool,
}

impl PopArt {
    pub fn new(beta: f64) -> PopArt {
        PopArt { mean: 0.0, sq_mean: 1.0, beta, sigma_min: 1e-4, initialized: false }
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn std(&self) -> f64 {
        (self.sq_mean - self.mean * self.mean).max(0.0).sqrt().max(self.sigma_min)
    }

    pub fn normalize(&self, y: f64) -> f64 {
        (y - self.mean) / self.std()
    }

    pub fn denormalize(&self, z: f64) -> f64 {
        z * self.std() + self.mean
    }

    /// Folds a batch of raw targets into the running statistics and
    /// rescales the critic's output layer so denormalized predictions
    /// are unchanged. The first batch adopts the batch moments outright
    /// instead of blending them with the arbitrary initial state.
    pub fn update(&mut self, critic: &mut Mlp, targets: &[f64]) -> Result<()> {
        if targets.is_empty() {
            return Err(Error::config("empty target batch"));
        }
        if targets.iter().any(|t| !t.is_finite()) {
            return Err(Error::config("non-finite value target"));
        }
        let n = targets.len() as f64;
        let batch_mean = targets.iter().sum::<f64>() / n;
        let batch_sq = targets.iter().map(|t| t * t).sum::<f64>() / n;

        let old_mean = self.mean;
        let old_std = self.std();
        if self.initialized {
            self.mean = (1.0 - self.beta) * self.mean + self.beta * batch_mean;
            self.sq_mean = (1.0 - self.beta) * self.sq_mean + self.beta * batch_sq;
        } else {
            self.mean = batch_mean;
            self.sq_mean = batch_sq;
            self.initialized = true;
        }
        let new_mean = self.mean;
        let new_std = self.std();

        let out = critic.output_layer_mut();
        for w in &mut out.w {
            *w *= old_std / new_std;
        }
        for b in &mut out.b {
            *b = (*b * old_std + old_mean - new_mean) / new_std;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mean.is_finite() && self.sq_mean.is_finite()) {
            return Err(Error::checkpoint("non-finite normalizer state"));
        }
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return Err(Error::checkpoint("normalizer beta outside (0, 1]"));
        }
        Ok(())
    }
}

impl Default for PopArt {
    fn default() -> Self {
        PopArt::new(0.1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn first_update_adopts_batch_moments() {
        let mut critic = Mlp::orthogonal(&[4, 8, 1], 1.0, 0).unwrap();
        let mut pa = PopArt::new(0.1);
        let targets = [2.0, 4.0, 6.0, 8.0];
        pa.update(&mut critic, &targets).unwrap();
        assert!((pa.mean() - 5.0).abs() < 1e-12);
        // Population std of {2,4,6,8} is sqrt(5).
        assert!((pa.std() - 5.0f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn running_moments_track_a_stationary_stream() {
        let mut critic = Mlp::orthogonal(&[4, 8, 1], 1.0, 1).unwrap();
        let mut pa = PopArt::new(0.1);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..500 {
            let batch: Vec<f64> = (0..256).map(|_| 5.0 + 2.0 * gaussian(&mut rng)).collect();
            pa.update(&mut critic, &batch).unwrap();
        }
        assert!((pa.mean() - 5.0).abs() < 0.15, "mean {}", pa.mean());
        assert!((pa.std() - 2.0).abs() < 0.15, "std {}", pa.std());
    }

    #[test]
    fn rescaling_preserves_denormalized_outputs() {
        let mut critic = Mlp::orthogonal(&[5, 16, 1], 1.0, 2).unwrap();
        let mut pa = PopArt::new(0.1);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let inputs: Vec<Vec<f64>> =
            (0..20).map(|_| (0..5).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();

        // Initialize statistics, then snapshot predictions.
        pa.update(&mut critic, &[0.5, 1.5, -2.0]).unwrap();
        let before: Vec<f64> =
            inputs.iter().map(|x| pa.denormalize(critic.forward(x).unwrap()[0])).collect();

        for round in 0..50 {
            let batch: Vec<f64> =
                (0..64).map(|_| 100.0 * gaussian(&mut rng) + round as f64).collect();
            pa.update(&mut critic, &batch).unwrap();
        }
        let after: Vec<f64> =
            inputs.iter().map(|x| pa.denormalize(critic.forward(x).unwrap()[0])).collect();
        for (a, b) in before.iter().zip(&after) {
            assert!((a - b).abs() < 1e-6, "prediction drifted {a} -> {b}");
        }
    }

    #[test]
    fn normalize_denormalize_are_inverse() {
        let mut critic = Mlp::orthogonal(&[2, 2, 1], 1.0, 5).unwrap();
        let mut pa = PopArt::new(0.1);
        pa.update(&mut critic, &[10.0, 20.0, 40.0]).unwrap();
        for y in [-3.0, 0.0, 17.5, 100.0] {
            assert!((pa.denormalize(pa.normalize(y)) - y).abs() < 1e-10);
        }
    }

    #[test]
    fn constant_targets_hit_the_sigma_floor() {
        let mut critic = Mlp::orthogonal(&[2, 2, 1], 1.0, 6).unwrap();
        let mut pa = PopArt::new(0.1);
        pa.update(&mut critic, &[7.0; 32]).unwrap();
        assert_eq!(pa.std(), 1e-4);
        assert_eq!(pa.normalize(7.0), 0.0);
    }

    #[test]
    fn rejects_bad_batches() {
        let mut critic = Mlp::orthogonal(&[2, 2, 1], 1.0, 7).unwrap();
        let mut pa = PopArt::new(0.1);
        assert!(pa.update(&mut critic, &[]).is_err());
        assert!(pa.update(&mut critic, &[1.0, f64::NAN]).is_err());
    }

    fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
        use rand_distr::{Distribution, StandardNormal};
        StandardNormal.sample(rng)
    }
}
