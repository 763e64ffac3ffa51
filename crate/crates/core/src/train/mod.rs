//! Multi-agent PPO training with parameter sharing: one actor and one
//! critic serve every agent. The centralized variant trains the critic
//! on the concatenated joint observation; the independent variant trains
//! it on each agent's own observation. Everything else is identical.

mod buffer;
mod ppo;
mod rollout;

pub use buffer::TrajectoryBuffer;
pub use ppo::{ppo_update, surrogate_logit_gradient, LossReport};
pub use rollout::{collect_rollout, RolloutEnv, StepRewards};

use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Adam, Checkpoint, Mlp, PopArt, POLICY_OUTPUT_GAIN, VALUE_OUTPUT_GAIN};

/// Critic input selection; the actor side is identical in both.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    /// Centralized critic over the concatenated joint observation.
    Mappo,
    /// Critic sees only the local observation.
    Ippo,
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Algorithm::Mappo => write!(f, "mappo"),
            Algorithm::Ippo => write!(f, "ippo"),
        }
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Algorithm> {
        match s {
            "mappo" => Ok(Algorithm::Mappo),
            "ippo" => Ok(Algorithm::Ippo),
            other => Err(Error::config(format!("unknown algorithm '{other}'"))),
        }
    }
}

/// Training hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub algorithm: Algorithm,
    pub seed: u64,
    /// Control steps collected per update (one episode by default).
    pub batch_steps: usize,
    pub ppo_epochs: usize,
    pub minibatches: usize,
    pub clip_eps: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub max_grad_norm: f64,
    pub popart_beta: f64,
    pub action_masking: bool,
    pub hidden: Vec<usize>,
    pub total_env_steps: u64,
    /// Env steps between mid-run checkpoints; 0 keeps only the final one.
    pub checkpoint_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            algorithm: Algorithm::Mappo,
            seed: 0,
            batch_steps: 120,
            ppo_epochs: 15,
            minibatches: 1,
            clip_eps: 0.2,
            entropy_coef: 0.05,
            value_coef: 1.0,
            gamma: 0.99,
            gae_lambda: 0.95,
            actor_lr: 7e-4,
            critic_lr: 5e-4,
            max_grad_norm: 10.0,
            popart_beta: 0.1,
            action_masking: true,
            hidden: vec![64, 64],
            total_env_steps: 5_000_000,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_steps == 0 || self.ppo_epochs == 0 || self.minibatches == 0 {
            return Err(Error::config("batch_steps, ppo_epochs and minibatches must be positive"));
        }
        if self.minibatches > self.batch_steps {
            return Err(Error::config("more minibatches than batch steps"));
        }
        if !(self.clip_eps > 0.0 && self.clip_eps < 1.0) {
            return Err(Error::config("clip_eps must lie in (0, 1)"));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::config("gamma must lie in (0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return Err(Error::config("gae_lambda must lie in [0, 1]"));
        }
        for (name, v) in [
            ("actor_lr", self.actor_lr),
            ("critic_lr", self.critic_lr),
            ("max_grad_norm", self.max_grad_norm),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(format!("{name} must be positive")));
            }
        }
        if self.entropy_coef < 0.0 || self.value_coef < 0.0 {
            return Err(Error::config("loss coefficients must be non-negative"));
        }
        if !(self.popart_beta > 0.0 && self.popart_beta <= 1.0) {
            return Err(Error::config("popart_beta must lie in (0, 1]"));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::config("hidden layer widths must be positive"));
        }
        Ok(())
    }
}

/// One learning-curve row, written after every update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    /// Cumulative env control steps collected so far.
    pub step: u64,
    pub seed: u64,
    pub mean_total: f64,
    pub mean_r1: f64,
    pub mean_r2: f64,
    pub mean_r3: f64,
    pub actor_loss: f64,
    pub critic_loss: f64,
    pub entropy: f64,
}

pub const CURVE_HEADER: &str =
    "step,seed,mean_total,mean_r1,mean_r2,mean_r3,actor_loss,critic_loss,entropy";

pub fn write_curve_csv<W: std::io::Write>(out: W, points: &[CurvePoint]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CURVE_HEADER.split(','))?;
    for p in points {
        w.write_record(&[
            p.step.to_string(),
            p.seed.to_string(),
            p.mean_total.to_string(),
            p.mean_r1.to_string(),
            p.mean_r2.to_string(),
            p.mean_r3.to_string(),
            p.actor_loss.to_string(),
            p.critic_loss.to_string(),
            p.entropy.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_curve_csv<R: std::io::Read>(input: R) -> Result<Vec<CurvePoint>> {
    let mut reader = csv::Reader::from_reader(input);
    let expected: Vec<&str> = CURVE_HEADER.split(',').collect();
    if reader.headers()?.iter().collect::<Vec<_>>() != expected {
        return Err(Error::config("unexpected learning-curve header"));
    }
    let mut points = Vec::new();
    for record in reader.records() {
        let record = record?;
        let field = |i: usize| -> Result<f64> {
            record
                .get(i)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::config(format!("bad curve field {i}")))
        };
        points.push(CurvePoint {
            step: field(0)? as u64,
            seed: field(1)? as u64,
            mean_total: field(2)?,
            mean_r1: field(3)?,
            mean_r2: field(4)?,
            mean_r3: field(5)?,
            actor_loss: field(6)?,
            critic_loss: field(7)?,
            entropy: field(8)?,
        });
    }
    Ok(points)
}

/// Deterministic per-episode seed stream (splitmix64 over a counter).
pub fn episode_seed(base: u64, counter: u64) -> u64 {
    let mut z = base ^ counter.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const ACTOR_SEED_SALT: u64 = 0xA0A0;
const CRITIC_SEED_SALT: u64 = 0xC1C1;
const SAMPLER_SEED_SALT: u64 = 0x5A5A;

/// Owns the shared networks and optimizer state for one training run.
pub struct Trainer {
    pub cfg: TrainConfig,
    pub actor: Mlp,
    pub critic: Mlp,
    pub actor_opt: Adam,
    pub critic_opt: Adam,
    pub popart: PopArt,
    pub env_steps: u64,
    pub updates: u64,
    rng: ChaCha8Rng,
    episode_counter: u64,
}

impl Trainer {
    pub fn new(cfg: TrainConfig, obs_dim: usize, n_agents: usize, n_actions: usize) -> Result<Trainer> {
        cfg.validate()?;
        let mut actor_sizes = vec![obs_dim];
        actor_sizes.extend_from_slice(&cfg.hidden);
        actor_sizes.push(n_actions);
        let actor = Mlp::orthogonal(&actor_sizes, POLICY_OUTPUT_GAIN, cfg.seed ^ ACTOR_SEED_SALT)?;

        let critic_in = match cfg.algorithm {
            Algorithm::Mappo => obs_dim * n_agents,
            Algorithm::Ippo => obs_dim,
        };
        let mut critic_sizes = vec![critic_in];
        critic_sizes.extend_from_slice(&cfg.hidden);
        critic_sizes.push(1);
        let critic =
            Mlp::orthogonal(&critic_sizes, VALUE_OUTPUT_GAIN, cfg.seed ^ CRITIC_SEED_SALT)?;

        let actor_opt = Adam::new(cfg.actor_lr, &actor);
        let critic_opt = Adam::new(cfg.critic_lr, &critic);
        let popart = PopArt::new(cfg.popart_beta);
        let rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ SAMPLER_SEED_SALT);
        Ok(Trainer {
            cfg,
            actor,
            critic,
            actor_opt,
            critic_opt,
            popart,
            env_steps: 0,
            updates: 0,
            rng,
            episode_counter: 0,
        })
    }

    /// Restores networks and optimizer state from a checkpoint. The
    /// sampler stream is reseeded from (seed, train_step), so a resumed
    /// run is reproducible but not bit-identical to an uninterrupted one.
    pub fn from_checkpoint(cfg: TrainConfig, ck: &Checkpoint) -> Result<Trainer> {
        cfg.validate()?;
        ck.validate()?;
        let algorithm: Algorithm = ck.algorithm.parse()?;
        if algorithm != cfg.algorithm {
            return Err(Error::checkpoint(format!(
                "checkpoint algorithm {} does not match configured {}",
                ck.algorithm, cfg.algorithm
            )));
        }
        let rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ SAMPLER_SEED_SALT ^ ck.train_step);
        Ok(Trainer {
            cfg,
            actor: ck.actor.clone(),
            critic: ck.critic.clone(),
            actor_opt: ck.actor_opt.clone(),
            critic_opt: ck.critic_opt.clone(),
            popart: ck.popart,
            env_steps: ck.train_step,
            updates: 0,
            rng,
            episode_counter: ck.train_step,
        })
    }

    /// Collects one batch and applies one PPO update.
    pub fn iteration(&mut self, env: &mut dyn RolloutEnv) -> Result<CurvePoint> {
        if env.obs_dim() != self.actor.input_dim() || env.n_actions() != self.actor.output_dim() {
            return Err(Error::config("environment dimensions do not match the networks"));
        }
        let base = self.cfg.seed;
        let mut counter = self.episode_counter;
        let mut buf = collect_rollout(
            env,
            &self.actor,
            &self.critic,
            &self.popart,
            &self.cfg,
            self.cfg.batch_steps,
            &mut self.rng,
            &mut || {
                let s = episode_seed(base, counter);
                counter += 1;
                s
            },
        )?;
        self.episode_counter = counter;

        let m = buf.samples() as f64;
        let mean_total = buf.rewards.iter().sum::<f64>() / m;
        let mean_term =
            |k: usize| -> f64 { buf.terms.iter().map(|t| t[k]).sum::<f64>() / m };
        let (r1, r2, r3) = (mean_term(0), mean_term(1), mean_term(2));

        let report = ppo_update(
            &mut self.actor,
            &mut self.critic,
            &mut self.actor_opt,
            &mut self.critic_opt,
            &mut self.popart,
            &mut buf,
            &self.cfg,
            &mut self.rng,
        )?;

        self.env_steps += buf.steps() as u64;
        self.updates += 1;
        Ok(CurvePoint {
            step: self.env_steps,
            seed: self.cfg.seed,
            mean_total,
            mean_r1: r1,
            mean_r2: r2,
            mean_r3: r3,
            actor_loss: report.actor_loss,
            critic_loss: report.critic_loss,
            entropy: report.entropy,
        })
    }

    /// Runs until `total_env_steps`, reporting each curve point and
    /// invoking `on_checkpoint` at the configured cadence plus once at
    /// the end (the flag marks the final call).
    pub fn run(
        &mut self,
        env: &mut dyn RolloutEnv,
        mut sink: impl FnMut(&CurvePoint),
        mut on_checkpoint: impl FnMut(&Trainer, bool) -> Result<()>,
    ) -> Result<()> {
        let mut last_ck = self.env_steps;
        while self.env_steps < self.cfg.total_env_steps {
            let point = self.iteration(env)?;
            sink(&point);
            if self.cfg.checkpoint_every > 0 && self.env_steps - last_ck >= self.cfg.checkpoint_every
            {
                on_checkpoint(self, false)?;
                last_ck = self.env_steps;
            }
        }
        on_checkpoint(self, true)
    }

    pub fn to_checkpoint(&self, config_hash: String, scenario: String) -> Checkpoint {
        Checkpoint::new(
            config_hash,
            scenario,
            self.cfg.algorithm.to_string(),
            self.cfg.seed,
            self.env_steps,
            self.actor.clone(),
            self.critic.clone(),
            self.actor_opt.clone(),
            self.critic_opt.clone(),
            self.popart,
        )
    }
}
