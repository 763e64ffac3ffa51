//! Named experiment setups bundling corridor geometry, demand, driver
//! population, agent placement, and reward shaping, loadable from TOML.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::env::{EnvConfig, RewardWeights, VslEnv};
use crate::error::{Error, Result};
use crate::sim::{CorridorLayout, DemandPhase, DemandProfile, DriverParams, Ramp};
use crate::units::CONTROL_INTERVAL_S;

/// Everything needed to build a runnable environment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub name: String,
    pub corridor: CorridorLayout,
    pub demand: DemandProfile,
    #[serde(default)]
    pub driver: DriverParams,
    /// Fraction of drivers that cap desired speed at the posted limit.
    #[serde(default = "default_compliance")]
    pub compliance_rate: f64,
    pub env: EnvConfig,
    #[serde(default)]
    pub reward: RewardWeights,
}

fn default_compliance() -> f64 {
    0.05
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if self.name.trim().is_empty() {
            return Err(Error::config("scenario needs a name"));
        }
        self.corridor.validate()?;
        self.demand.validate(self.corridor.ramps.len())?;
        self.driver.validate()?;
        if !(0.0..=1.0).contains(&self.compliance_rate) {
            return Err(Error::config(format!(
                "compliance_rate {} outside [0, 1]",
                self.compliance_rate
            )));
        }
        self.env.validate(self.corridor.gantry_positions.len())?;
        self.reward.validate()?;
        let needed_min =
            (self.env.warmup_windows + self.env.episode_steps) as f64 * CONTROL_INTERVAL_S / 60.0;
        if self.demand.horizon_min() < needed_min {
            return Err(Error::config(format!(
                "demand schedule covers {} min but warmup + episode needs {} min",
                self.demand.horizon_min(),
                needed_min
            )));
        }
        Ok(())
    }

    pub fn build_env(&self) -> Result<VslEnv> {
        VslEnv::new(
            self.corridor.clone(),
            self.demand.clone(),
            self.driver,
            self.compliance_rate,
            self.env,
            self.reward,
        )
    }

    pub fn from_toml_str(text: &str) -> Result<ScenarioConfig> {
        let sc: ScenarioConfig = toml::from_str(text)?;
        sc.validate()?;
        Ok(sc)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self)
            .map_err(|e| Error::config(format!("cannot serialize scenario: {e}")))
    }

    pub fn load(path: &Path) -> Result<ScenarioConfig> {
        let text = std::fs::read_to_string(path)?;
        ScenarioConfig::from_toml_str(&text)
            .map_err(|e| Error::data(path, e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml_string()?)?;
        Ok(())
    }
}

fn evenly_spaced_gantries(count: usize) -> (Vec<f64>, Vec<f64>) {
    let gantries: Vec<f64> = (0..count).map(|k| 0.25 + 0.5 * k as f64).collect();
    let sensors: Vec<f64> = gantries.iter().map(|g| g + 0.1).collect();
    (gantries, sensors)
}

/// Small single-bottleneck training profile: 3 miles, one lane, six
/// gantries, a two-lane on-ramp merging at 0.6 mi, and four agents on
/// the congestion approach. A 20-minute demand spike overloads the
/// merge, builds a queue that spills upstream, then light demand lets
/// it dissipate, all within one episode.
pub fn desk_train() -> ScenarioConfig {
    let (gantry_positions, sensor_positions) = evenly_spaced_gantries(6);
    ScenarioConfig {
        name: "desk-train".to_string(),
        corridor: CorridorLayout {
            length: 3.0,
            lanes: 1,
            gantry_positions,
            sensor_positions,
            ramps: vec![Ramp { merge_position: 0.6, ramp_lanes: 2 }],
        },
        demand: DemandProfile {
            mainline: vec![
                DemandPhase { until_min: 25.0, rate: 1100.0 },
                DemandPhase { until_min: 40.0, rate: 1600.0 },
                DemandPhase { until_min: 130.0, rate: 700.0 },
            ],
            per_ramp: vec![vec![
                DemandPhase { until_min: 40.0, rate: 350.0 },
                DemandPhase { until_min: 130.0, rate: 150.0 },
            ]],
        },
        driver: DriverParams::default(),
        compliance_rate: default_compliance(),
        env: EnvConfig { n_agents: 4, agent_offset: 2, episode_steps: 120, warmup_windows: 10 },
        reward: RewardWeights::default(),
    }
}

/// Long-corridor execution profile: 34 gantries over 17.25 miles, every
/// gantry an agent. Used to exercise a desk-trained policy at scale; the
/// bottleneck sits at 2.0 mi so a clear congestion tail forms. The
/// mainline stays below single-lane capacity so merge shockwaves decay
/// instead of filling the corridor; the overload arrives via the ramp.
pub fn corridor_34() -> ScenarioConfig {
    let (gantry_positions, sensor_positions) = evenly_spaced_gantries(34);
    ScenarioConfig {
        name: "corridor-34".to_string(),
        corridor: CorridorLayout {
            length: 17.25,
            lanes: 1,
            gantry_positions,
            sensor_positions,
            ramps: vec![Ramp { merge_position: 2.0, ramp_lanes: 2 }],
        },
        demand: DemandProfile {
            mainline: vec![
                DemandPhase { until_min: 25.0, rate: 1100.0 },
                DemandPhase { until_min: 40.0, rate: 1400.0 },
                DemandPhase { until_min: 130.0, rate: 650.0 },
            ],
            per_ramp: vec![vec![
                DemandPhase { until_min: 25.0, rate: 250.0 },
                DemandPhase { until_min: 40.0, rate: 500.0 },
                DemandPhase { until_min: 130.0, rate: 150.0 },
            ]],
        },
        driver: DriverParams::default(),
        compliance_rate: default_compliance(),
        env: EnvConfig { n_agents: 34, agent_offset: 0, episode_steps: 120, warmup_windows: 10 },
        reward: RewardWeights::default(),
    }
}

/// Larger multi-lane reference profile: 7.5 miles, four lanes, fifteen
/// gantries, eight agents straddling a heavy merge at 3.4 mi.
pub fn full_scale() -> ScenarioConfig {
    let (gantry_positions, sensor_positions) = evenly_spaced_gantries(15);
    ScenarioConfig {
        name: "full-scale".to_string(),
        corridor: CorridorLayout {
            length: 7.5,
            lanes: 4,
            gantry_positions,
            sensor_positions,
            ramps: vec![Ramp { merge_position: 3.4, ramp_lanes: 2 }],
        },
        demand: DemandProfile {
            mainline: vec![
                DemandPhase { until_min: 60.0, rate: 1850.0 },
                DemandPhase { until_min: 130.0, rate: 925.0 },
            ],
            per_ramp: vec![vec![
                DemandPhase { until_min: 60.0, rate: 1000.0 },
                DemandPhase { until_min: 130.0, rate: 500.0 },
            ]],
        },
        driver: DriverParams::default(),
        compliance_rate: default_compliance(),
        env: EnvConfig { n_agents: 8, agent_offset: 6, episode_steps: 120, warmup_windows: 10 },
        reward: RewardWeights::default(),
    }
}

/// Built-in profile lookup by name, for CLI convenience.
pub fn preset(name: &str) -> Result<ScenarioConfig> {
    match name {
        "desk-train" => Ok(desk_train()),
        "corridor-34" => Ok(corridor_34()),
        "full-scale" => Ok(full_scale()),
        other => Err(Error::config(format!(
            "unknown scenario preset {other:?}; built-ins are desk-train, corridor-34, full-scale"
        ))),
    }
}
