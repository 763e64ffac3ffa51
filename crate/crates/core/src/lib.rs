//! Freeway corridor microsimulation with variable-speed-limit gantries,
//! a cooperative multi-agent policy-gradient trainer, rule-based and
//! learned controllers, and an evaluation/replay harness.
//!
//! The crate is organised around the control loop of a VSL corridor:
//!
//! * [`sim`] — deterministic-seeded microscopic traffic simulator
//!   (car following, ramp merges, partial driver compliance).
//! * [`sensing`] — roadside detector emulation: 60-second
//!   speed/occupancy/volume aggregates, the only thing controllers see.
//! * [`env`] — the cooperative Markov game wrapping simulator + sensors:
//!   sequential per-step decisions, five-element observations, and the
//!   three-term reward.
//! * [`nn`] — self-contained MLP numerics: forward/backward, Adam,
//!   value-target normalization, integrated-gradients attribution.
//! * [`train`] — rollout collection, GAE, clipped-surrogate updates with
//!   shared parameters and a centralized critic.
//! * [`control`] — deployable controllers behind one interface, including
//!   invalid-action masking.
//! * [`metrics`] — safety/mobility metrics and batch evaluation reports.
//! * [`replay`] — empirical detector-data ingestion and open-loop policy
//!   replay.
//! * [`scenario`] — corridor/demand scenario configuration files.

pub mod control;
pub mod env;
pub mod error;
pub mod metrics;
pub mod nn;
pub mod replay;
pub mod scenario;
pub mod sensing;
pub mod sim;
pub mod train;
pub mod units;

pub use env::{AgentObservation, RewardBreakdown, RewardWeights, SpeedLimit, VslEnv};
pub use error::{Error, Result};
pub use scenario::ScenarioConfig;
pub use sensing::SensorReading;
pub use sim::{CorridorLayout, DemandProfile, DriverParams, VehicleState};
pub use train::{TrainConfig, TrajectoryBuffer};
