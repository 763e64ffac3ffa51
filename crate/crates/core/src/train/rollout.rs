//! Experience collection: anything that exposes the sequential decision
//! protocol can feed the trainer.

use rand_chacha::ChaCha8Rng;

use crate::control::ActionMask;
use crate::env::{SpeedLimit, VslEnv, N_ACTIONS};
use crate::error::{Error, Result};
use crate::nn::{masked_softmax, sample_categorical, validate_distribution, Mlp, PopArt};
use crate::train::{Algorithm, TrainConfig, TrajectoryBuffer};

/// Rewards produced by one environment control step.
#[derive(Debug, Clone)]
pub struct StepRewards {
    /// Weighted total per agent.
    pub totals: Vec<f64>,
    /// Unweighted (r1, r2, r3) per agent.
    pub terms: Vec<[f64; 3]>,
    pub done: bool,
}

/// Environment interface for rollout collection. `step` runs one control
/// interval, invoking `decide(agent, normalized_obs, valid)` downstream
/// first; `valid` is the environment's action-validity mask (the policy
/// may ignore it when masking is disabled).
pub trait RolloutEnv {
    fn n_agents(&self) -> usize;
    fn obs_dim(&self) -> usize;
    fn n_actions(&self) -> usize;
    fn reset(&mut self, seed: u64) -> Result<()>;
    fn needs_reset(&self) -> bool;
    fn step(
        &mut self,
        decide: &mut dyn FnMut(usize, &[f64], &[bool]) -> Result<usize>,
    ) -> Result<StepRewards>;
    /// Normalized observations the next decision would see, assuming
    /// every agent keeps its previous action; used to bootstrap values
    /// at a batch boundary.
    fn peek(&self) -> Result<Vec<Vec<f64>>>;
}

impl RolloutEnv for VslEnv {
    fn n_agents(&self) -> usize {
        VslEnv::n_agents(self)
    }

    fn obs_dim(&self) -> usize {
        crate::env::OBS_DIM
    }

    fn n_actions(&self) -> usize {
        N_ACTIONS
    }

    fn reset(&mut self, seed: u64) -> Result<()> {
        VslEnv::reset(self, seed).map(|_| ())
    }

    fn needs_reset(&self) -> bool {
        self.latest_readings().is_empty() || self.is_done()
    }

    fn step(
        &mut self,
        decide: &mut dyn FnMut(usize, &[f64], &[bool]) -> Result<usize>,
    ) -> Result<StepRewards> {
        let a_diff = self.weights().a_diff;
        let decided = self.decide_sequential(|agent, obs| {
            let mask = if agent == 0 {
                ActionMask::all_valid()
            } else {
                ActionMask::step_down(obs.prev_action, a_diff)
            };
            let idx = decide(agent, &obs.normalized(), mask.valid())?;
            SpeedLimit::from_index(idx)
        })?;
        let actions: Vec<SpeedLimit> = decided.iter().map(|(_, a)| *a).collect();
        let outcome = VslEnv::step(self, &actions)?;
        Ok(StepRewards {
            totals: outcome.rewards.iter().map(|r| r.total).collect(),
            terms: outcome.rewards.iter().map(|r| [r.r1, r.r2, r.r3]).collect(),
            done: outcome.done,
        })
    }

    fn peek(&self) -> Result<Vec<Vec<f64>>> {
        if self.latest_readings().is_empty() {
            return Err(Error::sim("peek before reset"));
        }
        Ok(self.current_observations().iter().map(|o| o.normalized().to_vec()).collect())
    }
}

/// Collects `steps` control steps of on-policy experience, resetting the
/// environment at episode boundaries, and bootstraps the final state
/// with the critic unless it is terminal.
#[allow(clippy::too_many_arguments)]
pub fn collect_rollout<E: RolloutEnv + ?Sized>(
    env: &mut E,
    actor: &Mlp,
    critic: &Mlp,
    popart: &PopArt,
    cfg: &TrainConfig,
    steps: usize,
    rng: &mut ChaCha8Rng,
    next_episode_seed: &mut dyn FnMut() -> u64,
) -> Result<TrajectoryBuffer> {
    let n = env.n_agents();
    let obs_dim = env.obs_dim();
    let n_actions = env.n_actions();
    let mut buf = TrajectoryBuffer::new(n, obs_dim, obs_dim * n, n_actions);

    for _ in 0..steps {
        if env.needs_reset() {
            env.reset(next_episode_seed())?;
        }
        let mut obs_step: Vec<Vec<f64>> = Vec::with_capacity(n);
        let mut masks_step: Vec<Vec<bool>> = Vec::with_capacity(n);
        let mut actions: Vec<usize> = Vec::with_capacity(n);
        let mut log_probs: Vec<f64> = Vec::with_capacity(n);

        let rewards = env.step(&mut |_agent, z, valid| {
            let logits = actor.forward(z)?;
            let used: Vec<bool> =
                if cfg.action_masking { valid.to_vec() } else { vec![true; valid.len()] };
            let probs = masked_softmax(&logits, &used)?;
            validate_distribution(&probs)?;
            let idx = sample_categorical(rng, &probs);
            obs_step.push(z.to_vec());
            masks_step.push(used);
            actions.push(idx);
            log_probs.push(probs[idx].ln());
            Ok(idx)
        })?;

        let global: Vec<f64> = obs_step.concat();
        let values = state_values(critic, popart, &obs_step, &global, cfg.algorithm)?;
        buf.push_step(
            &obs_step,
            &global,
            &actions,
            &log_probs,
            &masks_step,
            &rewards.totals,
            &rewards.terms,
            &values,
            rewards.done,
        )?;
    }

    let bootstrap = if buf.dones.last().copied().unwrap_or(true) {
        vec![0.0; n]
    } else {
        let obs = env.peek()?;
        let global: Vec<f64> = obs.concat();
        state_values(critic, popart, &obs, &global, cfg.algorithm)?
    };
    buf.set_bootstrap(bootstrap)?;
    Ok(buf)
}

/// Denormalized state values: the centralized critic reads the global
/// state (same value for every agent), the independent critic reads each
/// agent's own observation.
fn state_values(
    critic: &Mlp,
    popart: &PopArt,
    obs: &[Vec<f64>],
    global: &[f64],
    algorithm: Algorithm,
) -> Result<Vec<f64>> {
    match algorithm {
        Algorithm::Mappo => {
            let v = popart.denormalize(critic.forward(global)?[0]);
            Ok(vec![v; obs.len()])
        }
        Algorithm::Ippo => obs
            .iter()
            .map(|o| Ok(popart.denormalize(critic.forward(o)?[0])))
            .collect(),
    }
}

#[cfg(test)]
pub(crate) mod toy {
    use super::*;

    /// Single-agent test environment: constant observation, reward 1 for
    /// action 3 and 0 otherwise, fixed-length episodes.
    pub(crate) struct BanditEnv {
        pub episode_len: usize,
        t: usize,
        started: bool,
        done: bool,
        pub mask: Vec<bool>,
    }

    impl BanditEnv {
        pub(crate) fn new(episode_len: usize) -> BanditEnv {
            BanditEnv { episode_len, t: 0, started: false, done: false, mask: vec![true; 5] }
        }

        pub(crate) const OBS: [f64; 3] = [0.5, -0.25, 1.0];
    }

    impl RolloutEnv for BanditEnv {
        fn n_agents(&self) -> usize {
            1
        }

        fn obs_dim(&self) -> usize {
            3
        }

        fn n_actions(&self) -> usize {
            5
        }

        fn reset(&mut self, _seed: u64) -> Result<()> {
            self.t = 0;
            self.started = true;
            self.done = false;
            Ok(())
        }

        fn needs_reset(&self) -> bool {
            !self.started || self.done
        }

        fn step(
            &mut self,
            decide: &mut dyn FnMut(usize, &[f64], &[bool]) -> Result<usize>,
        ) -> Result<StepRewards> {
            let mask = self.mask.clone();
            let idx = decide(0, &Self::OBS, &mask)?;
            let r = if idx == 3 { 1.0 } else { 0.0 };
            self.t += 1;
            self.done = self.t >= self.episode_len;
            Ok(StepRewards { totals: vec![r], terms: vec![[0.0, 0.0, r]], done: self.done })
        }

        fn peek(&self) -> Result<Vec<Vec<f64>>> {
            Ok(vec![Self::OBS.to_vec()])
        }
    }
}
