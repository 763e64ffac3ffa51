//! Deployable decision-makers behind one interface: fixed 70s, the
//! rule-based speed-matching benchmark, and learned-policy execution
//! with optional invalid-action masking.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{observation_from_readings, SpeedLimit, MAX_SPEED_MPH, N_ACTIONS};
use crate::error::{Error, Result};
use crate::nn::{masked_softmax, sample_categorical, validate_distribution, Mlp};
use crate::sensing::SensorReading;

/// Validity mask over the five actions, derived from the downstream
/// neighbor's action and the step-down allowance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ActionMask {
    valid: [bool; N_ACTIONS],
}

impl ActionMask {
    pub fn all_valid() -> ActionMask {
        ActionMask { valid: [true; N_ACTIONS] }
    }

    /// Marks action `a` invalid iff `a > a_prev + a_diff`. Since 30 mph
    /// never exceeds any `a_prev + a_diff` with `a_prev ≥ 30`, at least
    /// one action is always valid.
    pub fn step_down(a_prev_mph: f64, a_diff_mph: f64) -> ActionMask {
        let mut valid = [true; N_ACTIONS];
        for (slot, a) in valid.iter_mut().zip(SpeedLimit::ALL) {
            *slot = a.mph() <= a_prev_mph + a_diff_mph;
        }
        ActionMask { valid }
    }

    pub fn valid(&self) -> &[bool] {
        &self.valid
    }

    pub fn is_valid(&self, index: usize) -> bool {
        self.valid[index]
    }

    /// Zeros invalid entries and renormalizes the rest. Equivalent to
    /// suppressing invalid logits to negative infinity before softmax.
    pub fn apply(&self, probs: &[f64]) -> Result<Vec<f64>> {
        if probs.len() != N_ACTIONS {
            return Err(Error::config("expected one probability per action"));
        }
        let mass: f64 = probs.iter().zip(&self.valid).filter(|(_, &v)| v).map(|(p, _)| p).sum();
        if mass <= 0.0 {
            return Err(Error::config("no probability mass on valid actions"));
        }
        Ok(probs
            .iter()
            .zip(&self.valid)
            .map(|(p, &v)| if v { p / mass } else { 0.0 })
            .collect())
    }

    /// Highest-probability valid action (lowest index wins ties).
    pub fn argmax(&self, probs: &[f64]) -> usize {
        let mut best = usize::MAX;
        let mut best_p = f64::NEG_INFINITY;
        for (i, (&p, &v)) in probs.iter().zip(&self.valid).enumerate() {
            if v && p > best_p {
                best = i;
                best_p = p;
            }
        }
        best
    }
}

/// How a stochastic policy is turned into an action.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecisionMode {
    /// Deterministic; the evaluation default.
    Argmax,
    Sample,
}

/// Static facts a controller needs about the corridor.
#[derive(Debug, Clone)]
pub struct ControlContext {
    /// All gantry positions, miles, downstream-first.
    pub gantry_positions: Vec<f64>,
    /// Gantry index of the most downstream agent.
    pub agent_offset: usize,
    pub n_agents: usize,
}

impl ControlContext {
    pub fn agent_gantry(&self, agent: usize) -> usize {
        self.agent_offset + agent
    }
}

/// A speed-limit decision maker invoked once per control step with the
/// fresh per-gantry critical readings. Controllers are pure functions of
/// (history, state, config, rng); Speed-Matching keeps per-run latch
/// state, reset between runs.
pub trait Controller {
    fn name(&self) -> &str;

    fn reset(&mut self);

    fn decide(
        &mut self,
        readings: &[SensorReading],
        ctx: &ControlContext,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<SpeedLimit>>;
}

/// Posts the default 70 everywhere, always.
#[derive(Debug, Clone, Default)]
pub struct NoControl;

impl Controller for NoControl {
    fn name(&self) -> &str {
        "no-control"
    }

    fn reset(&mut self) {}

    fn decide(
        &mut self,
        _readings: &[SensorReading],
        ctx: &ControlContext,
        _rng: &mut ChaCha8Rng,
    ) -> Result<Vec<SpeedLimit>> {
        Ok(vec![SpeedLimit::S70; ctx.n_agents])
    }
}

/// Thresholds for the reactive speed-matching benchmark.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpeedMatchConfig {
    pub trigger_speed: f64,
    pub trigger_occ: f64,
    /// Consecutive violating windows before a gantry latches active.
    pub persistence: usize,
    pub release_speed: f64,
    /// Consecutive recovered windows before an active gantry releases.
    pub release_persistence: usize,
    /// How far downstream (miles) an active gantry looks for the slowest
    /// speed to match.
    pub distance_limit: f64,
}

impl Default for SpeedMatchConfig {
    fn default() -> Self {
        SpeedMatchConfig {
            trigger_speed: 45.0,
            trigger_occ: 0.18,
            persistence: 2,
            release_speed: 55.0,
            release_persistence: 3,
            distance_limit: 1.0,
        }
    }
}

impl SpeedMatchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.release_speed <= self.trigger_speed {
            return Err(Error::config("release_speed must exceed trigger_speed for hysteresis"));
        }
        if self.persistence == 0 || self.release_persistence == 0 {
            return Err(Error::config("persistence windows must be positive"));
        }
        if !(self.trigger_occ > 0.0 && self.trigger_occ < 1.0) {
            return Err(Error::config("trigger_occ must lie in (0, 1)"));
        }
        if self.distance_limit <= 0.0 {
            return Err(Error::config("distance_limit must be positive"));
        }
        Ok(())
    }
}

/// Reactive benchmark: a gantry whose own sensed speed or occupancy
/// violates the trigger thresholds for `persistence` consecutive windows
/// latches active and posts the slowest sensed speed within
/// `distance_limit` downstream, rounded to 10 and clamped to [30, 70].
/// Gantries upstream of any active one step up by at most 10 mph per
/// gantry, so emitted profiles satisfy the step-down rule by
/// construction. Missing history simply means the counters start at
/// zero, which is free-flow behavior.
#[derive(Debug, Clone)]
pub struct SpeedMatching {
    cfg: SpeedMatchConfig,
    consec_violation: Vec<usize>,
    consec_clear: Vec<usize>,
    active: Vec<bool>,
}

impl SpeedMatching {
    pub fn new(cfg: SpeedMatchConfig) -> Result<SpeedMatching> {
        cfg.validate()?;
        Ok(SpeedMatching {
            cfg,
            consec_violation: Vec::new(),
            consec_clear: Vec::new(),
            active: Vec::new(),
        })
    }

    /// Full-corridor posted profile, one value per gantry.
    pub fn gantry_profile(&mut self, readings: &[SensorReading], positions: &[f64]) -> Result<Vec<f64>> {
        if readings.len() != positions.len() {
            return Err(Error::config("one reading per gantry required"));
        }
        let n = positions.len();
        if self.active.len() != n {
            self.consec_violation = vec![0; n];
            self.consec_clear = vec![0; n];
            self.active = vec![false; n];
        }

        for g in 0..n {
            let r = &readings[g];
            let violating = r.mean_speed < self.cfg.trigger_speed || r.occupancy > self.cfg.trigger_occ;
            if violating {
                self.consec_violation[g] += 1;
            } else {
                self.consec_violation[g] = 0;
            }
            if r.mean_speed >= self.cfg.release_speed {
                self.consec_clear[g] += 1;
            } else {
                self.consec_clear[g] = 0;
            }
            if !self.active[g] && self.consec_violation[g] >= self.cfg.persistence {
                self.active[g] = true;
            }
            if self.active[g] && self.consec_clear[g] >= self.cfg.release_persistence {
                self.active[g] = false;
            }
        }

        let mut profile = vec![MAX_SPEED_MPH; n];
        for g in 0..n {
            if !self.active[g] {
                continue;
            }
            // Slowest sensed speed within the downstream match window,
            // own gantry included.
            let mut slowest = readings[g].mean_speed;
            for j in 0..g {
                if positions[g] - positions[j] <= self.cfg.distance_limit {
                    slowest = slowest.min(readings[j].mean_speed);
                }
            }
            profile[g] = ((slowest / 10.0).round() * 10.0).clamp(30.0, MAX_SPEED_MPH);
        }
        // Step-down cap: each gantry may exceed its downstream neighbor
        // by at most 10.
        for g in 1..n {
            profile[g] = profile[g].min(profile[g - 1] + 10.0);
        }
        debug_assert!((1..n).all(|g| profile[g] <= profile[g - 1] + 10.0));
        Ok(profile)
    }
}

impl Controller for SpeedMatching {
    fn name(&self) -> &str {
        "speed-matching"
    }

    fn reset(&mut self) {
        self.consec_violation.clear();
        self.consec_clear.clear();
        self.active.clear();
    }

    fn decide(
        &mut self,
        readings: &[SensorReading],
        ctx: &ControlContext,
        _rng: &mut ChaCha8Rng,
    ) -> Result<Vec<SpeedLimit>> {
        let profile = self.gantry_profile(readings, &ctx.gantry_positions)?;
        (ctx.agent_offset..ctx.agent_offset + ctx.n_agents)
            .map(|g| SpeedLimit::from_mph(profile[g]))
            .collect()
    }
}

/// Executes a trained policy network under the sequential protocol.
pub struct PolicyController {
    actor: Mlp,
    masking: bool,
    mode: DecisionMode,
    a_diff: f64,
    name: String,
}

impl PolicyController {
    pub fn new(actor: Mlp, masking: bool, mode: DecisionMode) -> Result<PolicyController> {
        if actor.output_dim() != N_ACTIONS {
            return Err(Error::config(format!(
                "policy outputs {} values, not a distribution over {N_ACTIONS} actions",
                actor.output_dim()
            )));
        }
        actor.validate().map_err(|e| Error::config(format!("bad policy network: {e}")))?;
        let name = if masking { "policy" } else { "policy-unmasked" };
        Ok(PolicyController { actor, masking, mode, a_diff: 10.0, name: name.to_string() })
    }

    /// Decide one agent given its observation and mask.
    fn pick(&self, obs_norm: &[f64], mask: &ActionMask, rng: &mut ChaCha8Rng) -> Result<usize> {
        let logits = self.actor.forward(obs_norm)?;
        let probs = masked_softmax(&logits, mask.valid())?;
        validate_distribution(&probs)?;
        Ok(match self.mode {
            DecisionMode::Argmax => mask.argmax(&probs),
            DecisionMode::Sample => sample_categorical(rng, &probs),
        })
    }
}

impl Controller for PolicyController {
    fn name(&self) -> &str {
        &self.name
    }

    fn reset(&mut self) {}

    fn decide(
        &mut self,
        readings: &[SensorReading],
        ctx: &ControlContext,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<SpeedLimit>> {
        let mut actions: Vec<SpeedLimit> = Vec::with_capacity(ctx.n_agents);
        for i in 0..ctx.n_agents {
            let prev = if i == 0 { MAX_SPEED_MPH } else { actions[i - 1].mph() };
            let obs = observation_from_readings(readings, ctx.agent_gantry(i), prev);
            let mask = if self.masking && i > 0 {
                ActionMask::step_down(prev, self.a_diff)
            } else {
                ActionMask::all_valid()
            };
            let idx = self.pick(&obs.normalized(), &mask, rng)?;
            actions.push(SpeedLimit::from_index(idx)?);
        }
        Ok(actions)
    }
}
