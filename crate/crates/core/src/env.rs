//! Cooperative Markov game over the corridor simulator.
//!
//! Each gantry in the controlled block hosts one agent. Agents decide in
//! sequence once per 60-second control step, starting from the most
//! downstream agent (index 0); each agent sees the action its downstream
//! neighbor just chose, plus local and upstream sensor readings. Limits
//! are applied simultaneously after every agent has decided, the
//! simulator advances one window, and rewards are computed on the fresh
//! readings.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sensing::{SensorBank, SensorReading};
use crate::sim::{CorridorLayout, DemandProfile, DriverParams, World};
use crate::units::{CONTROL_INTERVAL_S, SIM_DT_S, STEPS_PER_CONTROL};

/// Number of discrete speed-limit actions.
pub const N_ACTIONS: usize = 5;

/// Observation vector length.
pub const OBS_DIM: usize = 5;

/// Speed normalizer and the default/most-downstream previous action, mph.
pub const MAX_SPEED_MPH: f64 = 70.0;

/// A postable speed limit. Values are 30 + 10 × index mph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SpeedLimit {
    S30,
    S40,
    S50,
    S60,
    S70,
}

impl SpeedLimit {
    pub const ALL: [SpeedLimit; N_ACTIONS] =
        [SpeedLimit::S30, SpeedLimit::S40, SpeedLimit::S50, SpeedLimit::S60, SpeedLimit::S70];

    pub fn index(self) -> usize {
        match self {
            SpeedLimit::S30 => 0,
            SpeedLimit::S40 => 1,
            SpeedLimit::S50 => 2,
            SpeedLimit::S60 => 3,
            SpeedLimit::S70 => 4,
        }
    }

    pub fn mph(self) -> f64 {
        30.0 + 10.0 * self.index() as f64
    }

    pub fn from_index(i: usize) -> Result<SpeedLimit> {
        SpeedLimit::ALL
            .get(i)
            .copied()
            .ok_or_else(|| Error::config(format!("action index {i} outside 0..{N_ACTIONS}")))
    }

    pub fn from_mph(mph: f64) -> Result<SpeedLimit> {
        SpeedLimit::ALL
            .into_iter()
            .find(|a| a.mph() == mph)
            .ok_or_else(|| Error::config(format!("{mph} mph is not a postable limit")))
    }
}

/// The five-element state tuple of one agent, external units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgentObservation {
    /// Downstream agent's action this step, mph (70 for the most
    /// downstream agent).
    pub prev_action: f64,
    /// Local critical-sensor mean speed, mph.
    pub local_speed: f64,
    /// Local occupancy fraction.
    pub local_occ: f64,
    /// Upstream neighbor's mean speed, mph.
    pub up_speed: f64,
    /// Upstream neighbor's occupancy fraction.
    pub up_occ: f64,
}

impl AgentObservation {
    /// Network input: speed-like entries divided by 70, occupancies raw.
    pub fn normalized(&self) -> [f64; OBS_DIM] {
        [
            self.prev_action / MAX_SPEED_MPH,
            self.local_speed / MAX_SPEED_MPH,
            self.local_occ,
            self.up_speed / MAX_SPEED_MPH,
            self.up_occ,
        ]
    }
}

/// Builds agent observations from per-gantry critical readings. The most
/// upstream gantry has no upstream neighbor and duplicates its local
/// reading in the upstream slots.
pub fn observation_from_readings(
    critical: &[SensorReading],
    gantry: usize,
    prev_action_mph: f64,
) -> AgentObservation {
    let local = &critical[gantry];
    let up = critical.get(gantry + 1).unwrap_or(local);
    AgentObservation {
        prev_action: prev_action_mph,
        local_speed: local.mean_speed,
        local_occ: local.occupancy,
        up_speed: up.mean_speed,
        up_occ: up.occupancy,
    }
}

/// Reward shaping constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardWeights {
    pub w1: f64,
    pub w2: f64,
    pub w3: f64,
    /// Largest allowed increase over the downstream limit, mph.
    pub a_diff: f64,
    /// Mobility normalizer, mph.
    pub nu_max: f64,
    /// Speed at or below which a gantry counts as congested, mph.
    pub congestion_speed: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        RewardWeights {
            w1: 0.2,
            w2: 0.3,
            w3: 0.5,
            a_diff: 10.0,
            nu_max: 70.0,
            congestion_speed: 35.0,
        }
    }
}

impl RewardWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("w1", self.w1), ("w2", self.w2), ("w3", self.w3)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(format!("reward weight {name} must be finite and ≥ 0")));
            }
        }
        for (name, v) in [
            ("a_diff", self.a_diff),
            ("nu_max", self.nu_max),
            ("congestion_speed", self.congestion_speed),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(format!("reward parameter {name} must be positive")));
            }
        }
        Ok(())
    }
}

/// Per-agent reward terms for one control step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardBreakdown {
    pub r1: f64,
    pub r2: f64,
    pub r3: f64,
    pub total: f64,
}

/// Congestion-adaptation term: posting anything but 30 while the sensed
/// speed is at or below the congestion threshold costs 10.
pub fn adaptability_reward(nu_mph: f64, action: SpeedLimit, congestion_speed_mph: f64) -> f64 {
    if nu_mph <= congestion_speed_mph && action != SpeedLimit::S30 {
        -10.0
    } else {
        0.0
    }
}

/// Step-down adherence term, judged against the downstream neighbor's
/// action this step. Pairs matching no listed branch score 0.
pub fn stepdown_reward(a_prev_mph: f64, a_mph: f64, most_downstream: bool, a_diff: f64) -> f64 {
    if most_downstream {
        return 0.0;
    }
    if a_prev_mph == 30.0 && (a_mph == 30.0 || a_mph == 40.0) {
        return 0.0;
    }
    let ascending = (a_prev_mph == 40.0 && a_mph == 50.0)
        || (a_prev_mph == 50.0 && a_mph == 60.0)
        || ((a_prev_mph == 60.0 || a_prev_mph == 70.0) && a_mph == 70.0);
    if ascending {
        return 2.0;
    }
    if a_mph > a_prev_mph + a_diff {
        return -2.0 * (a_mph - a_prev_mph) / a_diff;
    }
    0.0
}

/// Mobility term: saturating exponential of the sensed speed, in [0, 1].
pub fn mobility_reward(nu_mph: f64, nu_max_mph: f64) -> f64 {
    let clipped = nu_mph.clamp(0.0, nu_max_mph);
    ((clipped / nu_max_mph).exp() - 1.0) / (std::f64::consts::E - 1.0)
}

/// Composes the weighted three-term reward for every agent. `nus` holds
/// each agent's critical-sensor mean speed, downstream-first.
pub fn compute_rewards(
    actions: &[SpeedLimit],
    nus: &[f64],
    weights: &RewardWeights,
) -> Result<Vec<RewardBreakdown>> {
    if actions.len() != nus.len() {
        return Err(Error::config(format!(
            "{} actions for {} readings",
            actions.len(),
            nus.len()
        )));
    }
    let mut out = Vec::with_capacity(actions.len());
    for (i, (&a, &nu)) in actions.iter().zip(nus).enumerate() {
        let most_downstream = i == 0;
        let a_prev = if most_downstream { MAX_SPEED_MPH } else { actions[i - 1].mph() };
        let r1 = adaptability_reward(nu, a, weights.congestion_speed);
        let r2 = stepdown_reward(a_prev, a.mph(), most_downstream, weights.a_diff);
        let r3 = mobility_reward(nu, weights.nu_max);
        out.push(RewardBreakdown {
            r1,
            r2,
            r3,
            total: weights.w1 * r1 + weights.w2 * r2 + weights.w3 * r3,
        });
    }
    Ok(out)
}

/// Which gantries are agents and how long an episode runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    pub n_agents: usize,
    /// Gantry index of the most downstream agent; gantries below it stay
    /// at 70.
    pub agent_offset: usize,
    /// Control steps per episode.
    #[serde(default = "default_episode_steps")]
    pub episode_steps: usize,
    /// 60-second windows simulated at all-70 before the episode starts.
    #[serde(default = "default_warmup_windows")]
    pub warmup_windows: usize,
}

fn default_episode_steps() -> usize {
    120
}

fn default_warmup_windows() -> usize {
    10
}

impl EnvConfig {
    pub fn validate(&self, gantry_count: usize) -> Result<()> {
        if self.n_agents == 0 {
            return Err(Error::config("need at least one agent"));
        }
        if self.agent_offset + self.n_agents > gantry_count {
            return Err(Error::config(format!(
                "agents {}..{} exceed the {} gantries",
                self.agent_offset,
                self.agent_offset + self.n_agents,
                gantry_count
            )));
        }
        if self.episode_steps == 0 {
            return Err(Error::config("episode_steps must be positive"));
        }
        Ok(())
    }
}

/// One exported row of the per-episode log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeLogRow {
    pub step: usize,
    pub agent: usize,
    pub action_mph: f64,
    /// Critical-sensor mean speed the rewards used, mph.
    pub nu: f64,
    pub occ: f64,
    pub r1: f64,
    pub r2: f64,
    pub r3: f64,
    pub total: f64,
}

pub const EPISODE_LOG_HEADER: &str = "step,agent,action_mph,nu,occ,r1,r2,r3,total";

pub fn write_episode_csv<W: std::io::Write>(out: W, rows: &[EpisodeLogRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(EPISODE_LOG_HEADER.split(','))?;
    for r in rows {
        w.write_record(&[
            r.step.to_string(),
            r.agent.to_string(),
            r.action_mph.to_string(),
            r.nu.to_string(),
            r.occ.to_string(),
            r.r1.to_string(),
            r.r2.to_string(),
            r.r3.to_string(),
            r.total.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_episode_csv<R: std::io::Read>(input: R) -> Result<Vec<EpisodeLogRow>> {
    let mut reader = csv::Reader::from_reader(input);
    let expected: Vec<&str> = EPISODE_LOG_HEADER.split(',').collect();
    let headers = reader.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(Error::config(format!("unexpected episode log header: {headers:?}")));
    }
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record?;
        let field = |i: usize| -> Result<f64> {
            record
                .get(i)
                .and_then(|s| s.parse::<f64>().ok())
                .ok_or_else(|| Error::config(format!("bad episode log field {i} in {record:?}")))
        };
        rows.push(EpisodeLogRow {
            step: field(0)? as usize,
            agent: field(1)? as usize,
            action_mph: field(2)?,
            nu: field(3)?,
            occ: field(4)?,
            r1: field(5)?,
            r2: field(6)?,
            r3: field(7)?,
            total: field(8)?,
        });
    }
    Ok(rows)
}

/// Result of one control step.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub rewards: Vec<RewardBreakdown>,
    pub done: bool,
}

/// The multi-agent VSL environment: simulator + sensors + rewards.
pub struct VslEnv {
    layout: CorridorLayout,
    demand: DemandProfile,
    driver: DriverParams,
    compliance_rate: f64,
    cfg: EnvConfig,
    weights: RewardWeights,
    world: Option<World>,
    bank: SensorBank,
    latest: Vec<SensorReading>,
    applied: Vec<SpeedLimit>,
    step_count: usize,
    done: bool,
    log: Vec<EpisodeLogRow>,
}

impl VslEnv {
    pub fn new(
        layout: CorridorLayout,
        demand: DemandProfile,
        driver: DriverParams,
        compliance_rate: f64,
        cfg: EnvConfig,
        weights: RewardWeights,
    ) -> Result<VslEnv> {
        layout.validate()?;
        demand.validate(layout.ramps.len())?;
        driver.validate()?;
        cfg.validate(layout.gantry_positions.len())?;
        weights.validate()?;
        let episode_min = (cfg.warmup_windows + cfg.episode_steps) as f64 * CONTROL_INTERVAL_S / 60.0;
        if demand.horizon_min() < episode_min {
            return Err(Error::config(format!(
                "demand schedule covers {} min but warmup + episode needs {} min",
                demand.horizon_min(),
                episode_min
            )));
        }
        let n_sensors = layout.sensor_positions.len();
        Ok(VslEnv {
            layout,
            demand,
            driver,
            compliance_rate,
            cfg,
            weights,
            world: None,
            bank: SensorBank::new(n_sensors, CONTROL_INTERVAL_S),
            latest: Vec::new(),
            applied: vec![SpeedLimit::S70; cfg.n_agents],
            step_count: 0,
            done: false,
            log: Vec::new(),
        })
    }

    pub fn n_agents(&self) -> usize {
        self.cfg.n_agents
    }

    pub fn agent_offset(&self) -> usize {
        self.cfg.agent_offset
    }

    pub fn gantry_count(&self) -> usize {
        self.layout.gantry_positions.len()
    }

    pub fn agent_gantry(&self, agent: usize) -> usize {
        self.cfg.agent_offset + agent
    }

    pub fn episode_steps(&self) -> usize {
        self.cfg.episode_steps
    }

    pub fn step_count(&self) -> usize {
        self.step_count
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn weights(&self) -> &RewardWeights {
        &self.weights
    }

    pub fn layout(&self) -> &CorridorLayout {
        &self.layout
    }

    /// Per-gantry critical readings from the last completed window.
    pub fn latest_readings(&self) -> &[SensorReading] {
        &self.latest
    }

    /// Rows logged since the last reset, one per (step, agent).
    pub fn episode_log(&self) -> &[EpisodeLogRow] {
        &self.log
    }

    /// Rebuilds the simulator with `seed`, warms it up under all-70
    /// limits, and returns initial observations with prev_action = 70.
    pub fn reset(&mut self, seed: u64) -> Result<Vec<AgentObservation>> {
        self.world = Some(World::new(
            &self.layout,
            &self.demand,
            &self.driver,
            self.compliance_rate,
            seed,
        )?);
        self.bank = SensorBank::new(self.layout.sensor_positions.len(), CONTROL_INTERVAL_S);
        self.applied = vec![SpeedLimit::S70; self.cfg.n_agents];
        self.step_count = 0;
        self.done = false;
        self.log.clear();
        let all70 = vec![MAX_SPEED_MPH; self.gantry_count()];
        for _ in 0..self.cfg.warmup_windows.max(1) {
            self.latest = self.advance_window(&all70)?;
        }
        Ok(self.current_observations())
    }

    /// Observations for the next decision, with prev_action taken from
    /// the last applied joint action (all 70 right after reset).
    pub fn current_observations(&self) -> Vec<AgentObservation> {
        (0..self.cfg.n_agents)
            .map(|i| {
                let prev = if i == 0 { MAX_SPEED_MPH } else { self.applied[i - 1].mph() };
                observation_from_readings(&self.latest, self.agent_gantry(i), prev)
            })
            .collect()
    }

    /// Runs the downstream-first sequential protocol: agent 0 decides
    /// with prev_action 70, agent i sees agent i-1's fresh choice. No
    /// limit is applied here; feed the result to [`VslEnv::step`].
    pub fn decide_sequential<F>(&self, mut policy: F) -> Result<Vec<(AgentObservation, SpeedLimit)>>
    where
        F: FnMut(usize, &AgentObservation) -> Result<SpeedLimit>,
    {
        if self.latest.is_empty() {
            return Err(Error::sim("decide_sequential before reset"));
        }
        let mut out: Vec<(AgentObservation, SpeedLimit)> = Vec::with_capacity(self.cfg.n_agents);
        for i in 0..self.cfg.n_agents {
            let prev = if i == 0 { MAX_SPEED_MPH } else { out[i - 1].1.mph() };
            let obs = observation_from_readings(&self.latest, self.agent_gantry(i), prev);
            let action = policy(i, &obs)?;
            out.push((obs, action));
        }
        Ok(out)
    }

    /// Full-gantry limit profile for a joint agent action: 70 everywhere
    /// except the agent block.
    pub fn gantry_limits(&self, actions: &[SpeedLimit]) -> Vec<f64> {
        let mut limits = vec![MAX_SPEED_MPH; self.gantry_count()];
        for (i, a) in actions.iter().enumerate() {
            limits[self.cfg.agent_offset + i] = a.mph();
        }
        limits
    }

    /// Applies the joint action for one 60-second control interval and
    /// scores it against the readings that interval produces.
    pub fn step(&mut self, actions: &[SpeedLimit]) -> Result<StepOutcome> {
        if self.done {
            return Err(Error::sim("step called on a finished episode"));
        }
        if actions.len() != self.cfg.n_agents {
            return Err(Error::config(format!(
                "{} actions for {} agents",
                actions.len(),
                self.cfg.n_agents
            )));
        }
        let limits = self.gantry_limits(actions);
        self.latest = self.advance_window(&limits)?;

        let nus: Vec<f64> = (0..self.cfg.n_agents)
            .map(|i| self.latest[self.agent_gantry(i)].mean_speed)
            .collect();
        let rewards = compute_rewards(actions, &nus, &self.weights)?;

        for (i, (a, r)) in actions.iter().zip(&rewards).enumerate() {
            let reading = &self.latest[self.agent_gantry(i)];
            self.log.push(EpisodeLogRow {
                step: self.step_count,
                agent: i,
                action_mph: a.mph(),
                nu: reading.mean_speed,
                occ: reading.occupancy,
                r1: r.r1,
                r2: r.r2,
                r3: r.r3,
                total: r.total,
            });
        }

        self.applied = actions.to_vec();
        self.step_count += 1;
        self.done = self.step_count >= self.cfg.episode_steps;
        Ok(StepOutcome { rewards, done: self.done })
    }

    fn advance_window(&mut self, limits: &[f64]) -> Result<Vec<SensorReading>> {
        let world = self.world.as_mut().ok_or_else(|| Error::sim("env used before reset"))?;
        for _ in 0..STEPS_PER_CONTROL {
            let events = world.step(limits, SIM_DT_S)?;
            for c in &events.crossings {
                self.bank.record(c)?;
            }
        }
        Ok(self.bank.end_window(world.time_s()))
    }
}
