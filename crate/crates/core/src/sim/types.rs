//! Corridor geometry, demand, and driver-parameter types.
//!
//! Positions follow the milemarker convention: mile 0 is the downstream
//! exit and positions increase in the upstream direction. Vehicles enter
//! at `length` and drive toward 0. The vehicle ahead of you has the
//! smaller milemarker.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::units;

/// Snapshot of one vehicle in external units.
#[derive(Debug, Clone, PartialEq)]
pub struct VehicleState {
    pub id: u64,
    pub lane: usize,
    /// Milemarker, miles.
    pub position: f64,
    /// Current speed, mph.
    pub speed: f64,
    /// Desired speed absent any posted limit, mph.
    pub free_speed: f64,
    /// Whether the driver caps desired speed at the posted limit.
    pub compliant: bool,
    /// Vehicle length, feet.
    pub length: f64,
}

/// An on-ramp feeding the rightmost mainline lane.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ramp {
    /// Milemarker of the merge point, miles.
    pub merge_position: f64,
    /// Number of ramp lanes feeding the merge (scales arrival rate).
    pub ramp_lanes: usize,
}

/// Static corridor geometry. All positions are milemarkers in miles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorridorLayout {
    /// Corridor length, miles. Vehicles enter at `length`, exit at 0.
    pub length: f64,
    /// Mainline lane count.
    pub lanes: usize,
    /// Gantry milemarkers, strictly increasing (index 0 = most downstream).
    pub gantry_positions: Vec<f64>,
    /// One sensor per gantry, within [gantry, gantry + 0.2] mi.
    pub sensor_positions: Vec<f64>,
    #[serde(default)]
    pub ramps: Vec<Ramp>,
}

/// How far upstream of its gantry a sensor may sit, miles.
pub const SENSOR_RANGE_MI: f64 = 0.2;

impl CorridorLayout {
    pub fn validate(&self) -> Result<()> {
        if !(self.length > 0.0 && self.length.is_finite()) {
            return Err(Error::config("corridor length must be positive"));
        }
        if self.lanes == 0 {
            return Err(Error::config("corridor needs at least one lane"));
        }
        if self.sensor_positions.len() != self.gantry_positions.len() {
            return Err(Error::config(format!(
                "{} gantries but {} sensors (need one sensor per gantry)",
                self.gantry_positions.len(),
                self.sensor_positions.len()
            )));
        }
        for (i, pair) in self.gantry_positions.windows(2).enumerate() {
            if pair[1] <= pair[0] {
                return Err(Error::config(format!(
                    "gantry positions must strictly increase upstream: g[{}]={} vs g[{}]={}",
                    i,
                    pair[0],
                    i + 1,
                    pair[1]
                )));
            }
        }
        for (i, (&g, &s)) in self
            .gantry_positions
            .iter()
            .zip(&self.sensor_positions)
            .enumerate()
        {
            if !(0.0..=self.length).contains(&g) {
                return Err(Error::config(format!("gantry {i} at {g} mi is outside the corridor")));
            }
            if !(g..=g + SENSOR_RANGE_MI).contains(&s) {
                return Err(Error::config(format!(
                    "sensor {i} at {s} mi must lie within [{g}, {:.2}] mi",
                    g + SENSOR_RANGE_MI
                )));
            }
        }
        for (i, ramp) in self.ramps.iter().enumerate() {
            if !(0.0 < ramp.merge_position && ramp.merge_position < self.length) {
                return Err(Error::config(format!(
                    "ramp {i} merge position {} mi is outside the corridor",
                    ramp.merge_position
                )));
            }
            if ramp.ramp_lanes == 0 {
                return Err(Error::config(format!("ramp {i} needs at least one lane")));
            }
        }
        Ok(())
    }

    /// Index of the gantry whose control segment [g_i, g_{i+1}) contains
    /// the milemarker, or `None` downstream of the first gantry. The most
    /// upstream segment extends to the corridor entry.
    pub fn governing_gantry(&self, position_mi: f64) -> Option<usize> {
        let n_below = self.gantry_positions.partition_point(|g| *g <= position_mi);
        n_below.checked_sub(1)
    }
}

/// One piece of a piecewise-constant demand schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DemandPhase {
    /// Phase is active for simulation time < `until_min` (minutes).
    pub until_min: f64,
    /// Arrival rate, vehicles per lane per hour.
    pub rate: f64,
}

/// Arrival schedules for the mainline entry and each ramp.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemandProfile {
    pub mainline: Vec<DemandPhase>,
    /// One schedule per ramp, same order as `CorridorLayout::ramps`.
    #[serde(default)]
    pub per_ramp: Vec<Vec<DemandPhase>>,
}

impl DemandProfile {
    pub fn validate(&self, n_ramps: usize) -> Result<()> {
        if self.per_ramp.len() != n_ramps {
            return Err(Error::config(format!(
                "{} ramp demand schedules for {} ramps",
                self.per_ramp.len(),
                n_ramps
            )));
        }
        for (name, phases) in std::iter::once(("mainline", &self.mainline))
            .chain(self.per_ramp.iter().map(|p| ("ramp", p)))
        {
            if phases.is_empty() {
                return Err(Error::config(format!("{name} demand schedule is empty")));
            }
            let mut prev = 0.0;
            for ph in phases {
                if !(ph.until_min > prev) {
                    return Err(Error::config(format!(
                        "{name} demand phases must have strictly increasing end times"
                    )));
                }
                if !(ph.rate >= 0.0 && ph.rate.is_finite()) {
                    return Err(Error::config(format!("{name} demand rate must be a finite value ≥ 0")));
                }
                prev = ph.until_min;
            }
        }
        Ok(())
    }

    /// Total scheduled minutes (shortest schedule across entries).
    pub fn horizon_min(&self) -> f64 {
        let main_end = self.mainline.last().map_or(0.0, |p| p.until_min);
        self.per_ramp
            .iter()
            .filter_map(|p| p.last())
            .map(|p| p.until_min)
            .fold(main_end, f64::min)
    }
}

/// Rate lookup on one schedule, veh/lane/hr. Zero after the last phase.
pub(crate) fn rate_at(phases: &[DemandPhase], t_s: f64) -> f64 {
    let t_min = t_s / 60.0;
    phases
        .iter()
        .find(|p| t_min < p.until_min)
        .map_or(0.0, |p| p.rate)
}

/// Car-following and population parameters shared by all drivers; only
/// the free speed varies per driver.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DriverParams {
    /// Desired time headway T, seconds.
    pub desired_time_headway: f64,
    /// Maximum acceleration, m/s².
    pub max_accel: f64,
    /// Comfortable deceleration, m/s².
    pub comfort_decel: f64,
    /// Standstill bumper gap s0, meters.
    pub jam_gap: f64,
    /// Free-speed population mean, mph.
    pub free_speed_mean: f64,
    /// Free-speed population std, mph.
    pub free_speed_std: f64,
    /// Acceleration exponent δ.
    pub accel_exponent: f64,
}

/// Free-speed draws are truncated to this range, mph.
pub const FREE_SPEED_BOUNDS_MPH: (f64, f64) = (50.0, 85.0);

impl Default for DriverParams {
    fn default() -> Self {
        DriverParams {
            desired_time_headway: 1.4,
            max_accel: 1.5,
            comfort_decel: 2.0,
            jam_gap: 2.5,
            free_speed_mean: 68.0,
            free_speed_std: 5.0,
            accel_exponent: 4.0,
        }
    }
}

impl DriverParams {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("desired_time_headway", self.desired_time_headway),
            ("max_accel", self.max_accel),
            ("comfort_decel", self.comfort_decel),
            ("jam_gap", self.jam_gap),
            ("free_speed_mean", self.free_speed_mean),
            ("free_speed_std", self.free_speed_std),
            ("accel_exponent", self.accel_exponent),
        ];
        for (name, v) in fields {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(format!("driver parameter {name} must be strictly positive")));
            }
        }
        Ok(())
    }
}

/// One vehicle passing over a sensor during a step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Crossing {
    pub sensor: usize,
    /// Speed when crossing, mph.
    pub speed_mph: f64,
    /// Vehicle length, feet.
    pub length_ft: f64,
    /// Simulation time of the step end, seconds.
    pub time_s: f64,
}

/// Per-step bookkeeping returned by the stepper.
#[derive(Debug, Default, Clone)]
pub struct StepEvents {
    pub crossings: Vec<Crossing>,
    /// Vehicles that entered the mainline this step (entry + ramp merges).
    pub spawned: usize,
    /// Vehicles that left at the downstream exit this step.
    pub exited: usize,
}

/// One row of a trajectory CSV export.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryRow {
    pub time_s: f64,
    pub id: u64,
    pub lane: usize,
    pub position_mi: f64,
    pub speed_mph: f64,
}

/// Writes trajectory rows with the `time,id,lane,position_mi,speed_mph` header.
pub fn write_trajectory_csv<W: std::io::Write>(out: W, rows: &[TrajectoryRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["time", "id", "lane", "position_mi", "speed_mph"])?;
    for r in rows {
        w.write_record(&[
            format!("{}", r.time_s),
            format!("{}", r.id),
            format!("{}", r.lane),
            format!("{}", r.position_mi),
            format!("{}", r.speed_mph),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Converts an internal SI vehicle record to the external representation.
pub(crate) fn to_vehicle_state(
    id: u64,
    lane: usize,
    pos_m: f64,
    speed_mps: f64,
    free_speed_mps: f64,
    compliant: bool,
    len_m: f64,
) -> VehicleState {
    VehicleState {
        id,
        lane,
        position: units::meters_to_miles(pos_m),
        speed: units::mps_to_mph(speed_mps),
        free_speed: units::mps_to_mph(free_speed_mps),
        compliant,
        length: len_m * units::FEET_PER_METER,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layout() -> CorridorLayout {
        CorridorLayout {
            length: 3.0,
            lanes: 1,
            gantry_positions: vec![0.25, 0.75, 1.25, 1.75, 2.25, 2.75],
            sensor_positions: vec![0.35, 0.85, 1.35, 1.85, 2.35, 2.85],
            ramps: vec![Ramp { merge_position: 0.6, ramp_lanes: 2 }],
        }
    }

    #[test]
    fn valid_layout_passes() {
        layout().validate().unwrap();
    }

    #[test]
    fn layout_rejects_unsorted_gantries() {
        let mut l = layout();
        l.gantry_positions.swap(1, 2);
        assert!(l.validate().is_err());
    }

    #[test]
    fn layout_rejects_sensor_outside_band() {
        let mut l = layout();
        l.sensor_positions[0] = 0.5; // more than 0.2 mi upstream of gantry at 0.25
        assert!(l.validate().is_err());
        l.sensor_positions[0] = 0.2; // downstream of its gantry
        assert!(l.validate().is_err());
    }

    #[test]
    fn layout_rejects_mismatched_sensor_count() {
        let mut l = layout();
        l.sensor_positions.pop();
        assert!(l.validate().is_err());
    }

    #[test]
    fn governing_gantry_is_segment_containment() {
        let l = layout();
        // Downstream of the first gantry: uncontrolled.
        assert_eq!(l.governing_gantry(0.1), None);
        // Exactly at a gantry: that gantry's segment starts.
        assert_eq!(l.governing_gantry(0.25), Some(0));
        assert_eq!(l.governing_gantry(0.5), Some(0));
        assert_eq!(l.governing_gantry(0.75), Some(1));
        assert_eq!(l.governing_gantry(2.5), Some(4));
        // Most upstream segment extends to the entry.
        assert_eq!(l.governing_gantry(2.9), Some(5));
    }

    #[test]
    fn demand_phase_lookup() {
        let phases = vec![
            DemandPhase { until_min: 60.0, rate: 1850.0 },
            DemandPhase { until_min: 120.0, rate: 925.0 },
        ];
        assert_eq!(rate_at(&phases, 0.0), 1850.0);
        assert_eq!(rate_at(&phases, 59.9 * 60.0), 1850.0);
        assert_eq!(rate_at(&phases, 60.0 * 60.0), 925.0);
        // Past the schedule the demand is zero.
        assert_eq!(rate_at(&phases, 121.0 * 60.0), 0.0);
    }

    #[test]
    fn demand_validation_rejects_bad_schedules() {
        let ok = DemandProfile {
            mainline: vec![DemandPhase { until_min: 10.0, rate: 100.0 }],
            per_ramp: vec![],
        };
        ok.validate(0).unwrap();
        assert!(ok.validate(1).is_err(), "missing ramp schedule");

        let unordered = DemandProfile {
            mainline: vec![
                DemandPhase { until_min: 10.0, rate: 100.0 },
                DemandPhase { until_min: 5.0, rate: 100.0 },
            ],
            per_ramp: vec![],
        };
        assert!(unordered.validate(0).is_err());

        let negative = DemandProfile {
            mainline: vec![DemandPhase { until_min: 10.0, rate: -1.0 }],
            per_ramp: vec![],
        };
        assert!(negative.validate(0).is_err());
    }

    #[test]
    fn driver_params_default_is_valid() {
        DriverParams::default().validate().unwrap();
        let mut p = DriverParams::default();
        p.jam_gap = 0.0;
        assert!(p.validate().is_err());
    }
}
