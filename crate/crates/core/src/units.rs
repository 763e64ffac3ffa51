//! Unit conversions between the simulator's internal SI units (meters,
//! meters per second) and the external mile/mph convention used by
//! detector feeds, speed limits, and reports.

pub const METERS_PER_MILE: f64 = 1609.344;
pub const FEET_PER_METER: f64 = 3.280_839_895_013_123;

/// Sensor aggregation window and control decision interval, seconds.
pub const CONTROL_INTERVAL_S: f64 = 60.0;

/// Simulation time step, seconds.
pub const SIM_DT_S: f64 = 0.5;

/// Simulation steps per control interval.
pub const STEPS_PER_CONTROL: usize = (CONTROL_INTERVAL_S / SIM_DT_S) as usize;

pub fn miles_to_meters(mi: f64) -> f64 {
    mi * METERS_PER_MILE
}

pub fn meters_to_miles(m: f64) -> f64 {
    m / METERS_PER_MILE
}

pub fn mph_to_mps(mph: f64) -> f64 {
    mph * METERS_PER_MILE / 3600.0
}

pub fn mps_to_mph(mps: f64) -> f64 {
    mps * 3600.0 / METERS_PER_MILE
}

pub fn feet_to_meters(ft: f64) -> f64 {
    ft / FEET_PER_METER
}
