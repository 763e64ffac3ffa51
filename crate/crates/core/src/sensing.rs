//! Roadside detector emulation.
//!
//! Vehicle crossings are accumulated per sensor and folded into 60-second
//! readings of mean speed, time occupancy, and volume. These readings are
//! the only view of traffic that controllers and rewards ever get.

use crate::error::{Error, Result};
use crate::sim::Crossing;
use crate::units::CONTROL_INTERVAL_S;

/// Reading reported when no vehicle crossed during the window: an empty
/// road is a free-flow road.
pub const EMPTY_WINDOW_SPEED_MPH: f64 = 70.0;

/// Length of the detection zone a vehicle occupies while crossing, feet.
pub const DETECTION_ZONE_FT: f64 = 6.0;

/// Occupancy spread below which a gantry's sensors count as "consistently
/// high or low" and the minimum-speed unit is picked instead of the
/// maximum-occupancy unit.
pub const OCC_SPREAD_THRESHOLD: f64 = 0.05;

/// One 60-second aggregate from one sensor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorReading {
    pub sensor_id: usize,
    /// End of the aggregation window, seconds of simulation time.
    pub window_end: f64,
    /// Arithmetic mean of crossing speeds, mph.
    pub mean_speed: f64,
    /// Fraction of the window the detection zone was occupied, in [0, 1].
    pub occupancy: f64,
    /// Vehicles per hour extrapolated from window crossings.
    pub volume: f64,
}

#[derive(Debug, Default, Clone)]
struct Accumulator {
    crossings: usize,
    speed_sum: f64,
    occupied_s: f64,
}

impl Accumulator {
    fn record(&mut self, speed_mph: f64, length_ft: f64) -> Result<()> {
        if !speed_mph.is_finite() {
            return Err(Error::sim("non-finite crossing speed"));
        }
        self.crossings += 1;
        self.speed_sum += speed_mph;
        // Time the detection zone stays covered: (length + zone) / speed.
        // A crossing implies movement, but guard the division anyway.
        let speed_fps = speed_mph * 5280.0 / 3600.0;
        self.occupied_s += if speed_fps > 1e-9 {
            (length_ft + DETECTION_ZONE_FT) / speed_fps
        } else {
            CONTROL_INTERVAL_S
        };
        Ok(())
    }

    fn aggregate(&self, sensor_id: usize, window_end: f64, window_s: f64) -> SensorReading {
        let mean_speed = if self.crossings == 0 {
            EMPTY_WINDOW_SPEED_MPH
        } else {
            self.speed_sum / self.crossings as f64
        };
        SensorReading {
            sensor_id,
            window_end,
            mean_speed,
            occupancy: (self.occupied_s / window_s).clamp(0.0, 1.0),
            volume: self.crossings as f64 * 3600.0 / window_s,
        }
    }
}

/// Accumulates crossings for every sensor of a corridor and emits one
/// reading per sensor when the window closes.
#[derive(Debug, Clone)]
pub struct SensorBank {
    accs: Vec<Accumulator>,
    window_s: f64,
}

impl SensorBank {
    pub fn new(n_sensors: usize, window_s: f64) -> SensorBank {
        SensorBank {
            accs: vec![Accumulator::default(); n_sensors],
            window_s,
        }
    }

    pub fn len(&self) -> usize {
        self.accs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.accs.is_empty()
    }

    pub fn record(&mut self, crossing: &Crossing) -> Result<()> {
        let acc = self
            .accs
            .get_mut(crossing.sensor)
            .ok_or_else(|| Error::sim(format!("crossing for unknown sensor {}", crossing.sensor)))?;
        acc.record(crossing.speed_mph, crossing.length_ft)
    }

    /// Closes the window ending at `window_end` and resets accumulators.
    pub fn end_window(&mut self, window_end: f64) -> Vec<SensorReading> {
        let readings = self
            .accs
            .iter()
            .enumerate()
            .map(|(i, a)| a.aggregate(i, window_end, self.window_s))
            .collect();
        for a in &mut self.accs {
            *a = Accumulator::default();
        }
        readings
    }
}

/// Picks the reading that best represents a gantry served by several
/// sensors: the maximum-occupancy unit, unless occupancies are within
/// `OCC_SPREAD_THRESHOLD` of each other, in which case speed separates
/// congestion from free flow and the minimum-speed unit is picked.
pub fn select_critical_sensor<'a>(readings: &[&'a SensorReading]) -> Result<&'a SensorReading> {
    select_critical_with_threshold(readings, OCC_SPREAD_THRESHOLD)
}

pub fn select_critical_with_threshold<'a>(
    readings: &[&'a SensorReading],
    occ_spread_threshold: f64,
) -> Result<&'a SensorReading> {
    if readings.is_empty() {
        return Err(Error::sim("critical-sensor selection over an empty reading list"));
    }
    let max_occ = readings.iter().map(|r| r.occupancy).fold(f64::MIN, f64::max);
    let min_occ = readings.iter().map(|r| r.occupancy).fold(f64::MAX, f64::min);
    let pick = if max_occ - min_occ < occ_spread_threshold {
        readings
            .iter()
            .min_by(|a, b| a.mean_speed.total_cmp(&b.mean_speed))
    } else {
        readings
            .iter()
            .max_by(|a, b| a.occupancy.total_cmp(&b.occupancy))
    };
    Ok(pick.expect("non-empty checked above"))
}
