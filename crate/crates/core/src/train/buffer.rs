//! On-policy trajectory storage for one update batch, flattened so a
//! sample index addresses (control step, agent).

use crate::error::{Error, Result};

/// Batch of experience. Arrays are time-major: sample `t * n_agents + a`
/// belongs to agent `a` at step `t`.
#[derive(Debug, Clone)]
pub struct TrajectoryBuffer {
    pub n_agents: usize,
    pub obs_dim: usize,
    pub global_dim: usize,
    pub n_actions: usize,
    /// Per-sample local observation, normalized.
    pub obs: Vec<f64>,
    /// Per-step global state (concatenated local observations).
    pub global: Vec<f64>,
    pub actions: Vec<usize>,
    /// Log-probability of the taken action under the behavior policy.
    pub log_probs: Vec<f64>,
    /// Per-sample action-validity mask as used at decision time.
    pub masks: Vec<bool>,
    /// Weighted total reward per sample.
    pub rewards: Vec<f64>,
    /// Unweighted reward terms per sample, for curve logging.
    pub terms: Vec<[f64; 3]>,
    /// State-value estimates in raw (denormalized) return scale.
    pub values: Vec<f64>,
    /// Whether the episode ended after step t.
    pub dones: Vec<bool>,
    /// Value of the state after the final step, zero if terminal.
    pub bootstrap: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl TrajectoryBuffer {
    pub fn new(n_agents: usize, obs_dim: usize, global_dim: usize, n_actions: usize) -> Self {
        TrajectoryBuffer {
            n_agents,
            obs_dim,
            global_dim,
            n_actions,
            obs: Vec::new(),
            global: Vec::new(),
            actions: Vec::new(),
            log_probs: Vec::new(),
            masks: Vec::new(),
            rewards: Vec::new(),
            terms: Vec::new(),
            values: Vec::new(),
            dones: Vec::new(),
            bootstrap: Vec::new(),
            advantages: Vec::new(),
            returns: Vec::new(),
        }
    }

    pub fn steps(&self) -> usize {
        self.dones.len()
    }

    pub fn samples(&self) -> usize {
        self.steps() * self.n_agents
    }

    #[allow(clippy::too_many_arguments)]
    pub fn push_step(
        &mut self,
        obs: &[Vec<f64>],
        global: &[f64],
        actions: &[usize],
        log_probs: &[f64],
        masks: &[Vec<bool>],
        totals: &[f64],
        terms: &[[f64; 3]],
        values: &[f64],
        done: bool,
    ) -> Result<()> {
        let n = self.n_agents;
        if obs.len() != n
            || actions.len() != n
            || log_probs.len() != n
            || masks.len() != n
            || totals.len() != n
            || terms.len() != n
            || values.len() != n
        {
            return Err(Error::config("per-agent arrays must all have n_agents entries"));
        }
        if global.len() != self.global_dim {
            return Err(Error::config("global state length mismatch"));
        }
        for (o, m) in obs.iter().zip(masks) {
            if o.len() != self.obs_dim || m.len() != self.n_actions {
                return Err(Error::config("observation or mask length mismatch"));
            }
        }
        for o in obs {
            self.obs.extend_from_slice(o);
        }
        self.global.extend_from_slice(global);
        self.actions.extend_from_slice(actions);
        self.log_probs.extend_from_slice(log_probs);
        for m in masks {
            self.masks.extend_from_slice(m);
        }
        self.rewards.extend_from_slice(totals);
        self.terms.extend_from_slice(terms);
        self.values.extend_from_slice(values);
        self.dones.push(done);
        Ok(())
    }

    pub fn set_bootstrap(&mut self, values: Vec<f64>) -> Result<()> {
        if values.len() != self.n_agents {
            return Err(Error::config("bootstrap needs one value per agent"));
        }
        self.bootstrap = values;
        Ok(())
    }

    pub fn obs_at(&self, sample: usize) -> &[f64] {
        &self.obs[sample * self.obs_dim..(sample + 1) * self.obs_dim]
    }

    pub fn global_at(&self, step: usize) -> &[f64] {
        &self.global[step * self.global_dim..(step + 1) * self.global_dim]
    }

    pub fn mask_at(&self, sample: usize) -> &[bool] {
        &self.masks[sample * self.n_actions..(sample + 1) * self.n_actions]
    }

    /// Advantage per sample (step-major), valid after [`Self::compute_gae`].
    pub fn advantages(&self) -> &[f64] {
        &self.advantages
    }

    /// Value target per sample, valid after [`Self::compute_gae`].
    pub fn returns(&self) -> &[f64] {
        &self.returns
    }

    /// Generalized advantage estimation over the stored trajectory,
    /// resetting across episode boundaries and bootstrapping the final
    /// state with `bootstrap` unless it was terminal. Also fills
    /// `returns = advantages + values`.
    pub fn compute_gae(&mut self, gamma: f64, lambda: f64) -> Result<()> {
        let t_max = self.steps();
        if t_max == 0 {
            return Err(Error::config("empty trajectory buffer"));
        }
        if self.bootstrap.len() != self.n_agents {
            return Err(Error::config("bootstrap not set"));
        }
        let n = self.n_agents;
        self.advantages = vec![0.0; self.samples()];
        self.returns = vec![0.0; self.samples()];
        for a in 0..n {
            let mut gae = 0.0;
            for t in (0..t_max).rev() {
                let s = t * n + a;
                let mask = if self.dones[t] { 0.0 } else { 1.0 };
                let next_v = if t + 1 == t_max { self.bootstrap[a] } else { self.values[s + n] };
                let delta = self.rewards[s] + gamma * mask * next_v - self.values[s];
                gae = delta + gamma * lambda * mask * gae;
                self.advantages[s] = gae;
                self.returns[s] = gae + self.values[s];
            }
        }
        Ok(())
    }

    /// Standardizes advantages in place; returns the pre-normalization
    /// (mean, std). Degenerate batches (std below 1e-8) are only
    /// centered.
    pub fn normalize_advantages(&mut self) -> (f64, f64) {
        let m = self.advantages.len() as f64;
        let mean = self.advantages.iter().sum::<f64>() / m;
        let var = self.advantages.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / m;
        let std = var.sqrt();
        let denom = if std > 1e-8 { std } else { 1.0 };
        for a in &mut self.advantages {
            *a = (*a - mean) / denom;
        }
        (mean, std)
    }
}
