//! Intelligent-Driver-Model car-following acceleration.
//!
//! All quantities here are SI: meters, m/s, m/s². The law is
//!
//! ```text
//! a = a_max * (1 - (v / v0)^delta - (s* / s)^2)
//! s* = s0 + max(0, v*T + v*(v - v_leader) / (2*sqrt(a_max * b)))
//! ```
//!
//! with the interaction term dropped when there is no leader.

use crate::error::{Error, Result};
use crate::sim::types::DriverParams;

/// Hard deceleration floor, m/s². Accelerations are clamped to
/// [-MAX_BRAKE_MPS2, max_accel].
pub const MAX_BRAKE_MPS2: f64 = 8.0;

/// Leader context for the follower: bumper gap and leader speed, SI.
#[derive(Debug, Clone, Copy)]
pub struct Leader {
    pub gap_m: f64,
    pub speed_mps: f64,
}

/// Acceleration of a vehicle at `speed_mps` chasing `leader` (if any)
/// with effective desired speed `desired_mps`.
pub fn acceleration(
    speed_mps: f64,
    leader: Option<Leader>,
    desired_mps: f64,
    p: &DriverParams,
) -> Result<f64> {
    if !(speed_mps.is_finite() && desired_mps.is_finite()) {
        return Err(Error::sim("non-finite speed in car-following input"));
    }
    let free_term = if desired_mps > 0.0 {
        (speed_mps / desired_mps).powf(p.accel_exponent)
    } else if speed_mps > 0.0 {
        // Desired speed zero while moving: full braking pressure.
        f64::INFINITY
    } else {
        0.0
    };
    let interaction = match leader {
        None => 0.0,
        Some(l) => {
            if l.gap_m <= 0.0 {
                return Err(Error::sim(format!(
                    "non-positive bumper gap {:.3} m handed to car-following law",
                    l.gap_m
                )));
            }
            let closing = speed_mps - l.speed_mps;
            let dynamic = speed_mps * p.desired_time_headway
                + speed_mps * closing / (2.0 * (p.max_accel * p.comfort_decel).sqrt());
            let s_star = p.jam_gap + dynamic.max(0.0);
            (s_star / l.gap_m).powi(2)
        }
    };
    let a = p.max_accel * (1.0 - free_term - interaction);
    Ok(a.clamp(-MAX_BRAKE_MPS2, p.max_accel))
}
