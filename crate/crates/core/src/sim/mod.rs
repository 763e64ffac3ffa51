//! Deterministic-seeded microscopic simulation of a freeway corridor
//! with on-ramp bottlenecks, posted-limit segments, and partial driver
//! compliance.
//!
//! Geometry uses milemarkers (mile 0 = downstream exit, increasing
//! upstream); vehicles enter at `length` and drive toward 0. Lane 0 is
//! the rightmost lane, where ramps merge. Internally everything runs in
//! SI units; the public surface speaks miles and mph.

mod idm;
mod types;

pub use idm::{acceleration, Leader, MAX_BRAKE_MPS2};
pub use types::{
    write_trajectory_csv, CorridorLayout, Crossing, DemandPhase, DemandProfile, DriverParams,
    Ramp, StepEvents, TrajectoryRow, VehicleState, FREE_SPEED_BOUNDS_MPH, SENSOR_RANGE_MI,
};

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};

use crate::error::{Error, Result};
use crate::units::{feet_to_meters, meters_to_miles, miles_to_meters, mph_to_mps, mps_to_mph};

/// Every vehicle is this long.
const VEHICLE_LENGTH_FT: f64 = 15.0;

/// Bumper gap enforced by the post-integration overlap sweep, meters.
const MIN_CLAMP_GAP_M: f64 = 0.1;

/// Speed at which ramp vehicles enter the mainline.
const RAMP_APPROACH_MPH: f64 = 45.0;

/// Candidate insertion offsets around the merge point, meters, tried in order.
const RAMP_SLOT_OFFSETS_M: [f64; 7] = [0.0, 15.0, -15.0, 30.0, -30.0, 45.0, -45.0];

/// Entry speed is capped at leader speed plus this margin, m/s.
const ENTRY_CLOSING_CAP_MPS: f64 = 5.0;

/// Valid posted limits, mph.
pub const POSTED_LIMITS_MPH: [f64; 5] = [30.0, 40.0, 50.0, 60.0, 70.0];

#[derive(Debug, Clone)]
struct Car {
    id: u64,
    /// Milemarker position, meters.
    pos: f64,
    /// Speed, m/s.
    speed: f64,
    /// Length, meters.
    len: f64,
    /// Desired speed absent control, m/s.
    free_speed: f64,
    compliant: bool,
}

#[derive(Debug, Clone, Copy)]
struct RampSi {
    merge_m: f64,
    arrival_lanes: usize,
}

/// One corridor simulation instance. Single-threaded; independent
/// instances are safe to run in parallel.
pub struct World {
    length_m: f64,
    n_lanes: usize,
    gantries_m: Vec<f64>,
    sensors_m: Vec<f64>,
    ramps: Vec<RampSi>,
    demand_main: Vec<DemandPhase>,
    demand_ramp: Vec<Vec<DemandPhase>>,
    params: DriverParams,
    compliance_rate: f64,
    /// Per lane, ascending milemarker (index 0 = closest to the exit).
    lanes: Vec<Vec<Car>>,
    entry_queues: Vec<VecDeque<Car>>,
    ramp_queues: Vec<VecDeque<Car>>,
    rng: ChaCha8Rng,
    time_s: f64,
    next_id: u64,
    total_spawned: u64,
    total_exited: u64,
}

impl World {
    pub fn new(
        layout: &CorridorLayout,
        demand: &DemandProfile,
        params: &DriverParams,
        compliance_rate: f64,
        seed: u64,
    ) -> Result<World> {
        layout.validate()?;
        demand.validate(layout.ramps.len())?;
        params.validate()?;
        if !(0.0..=1.0).contains(&compliance_rate) {
            return Err(Error::config("compliance_rate must be within [0, 1]"));
        }
        Ok(World {
            length_m: miles_to_meters(layout.length),
            n_lanes: layout.lanes,
            gantries_m: layout.gantry_positions.iter().map(|&g| miles_to_meters(g)).collect(),
            sensors_m: layout.sensor_positions.iter().map(|&s| miles_to_meters(s)).collect(),
            ramps: layout
                .ramps
                .iter()
                .map(|r| RampSi {
                    merge_m: miles_to_meters(r.merge_position),
                    arrival_lanes: r.ramp_lanes,
                })
                .collect(),
            demand_main: demand.mainline.clone(),
            demand_ramp: demand.per_ramp.clone(),
            params: *params,
            compliance_rate,
            lanes: vec![Vec::new(); layout.lanes],
            entry_queues: vec![VecDeque::new(); layout.lanes],
            ramp_queues: vec![VecDeque::new(); layout.ramps.len()],
            rng: ChaCha8Rng::seed_from_u64(seed),
            time_s: 0.0,
            next_id: 0,
            total_spawned: 0,
            total_exited: 0,
        })
    }

    pub fn time_s(&self) -> f64 {
        self.time_s
    }

    pub fn gantry_count(&self) -> usize {
        self.gantries_m.len()
    }

    pub fn vehicle_count(&self) -> usize {
        self.lanes.iter().map(Vec::len).sum()
    }

    pub fn total_spawned(&self) -> u64 {
        self.total_spawned
    }

    pub fn total_exited(&self) -> u64 {
        self.total_exited
    }

    /// Vehicles waiting on ramp `i` for an acceptable merge gap.
    pub fn ramp_queue_len(&self, i: usize) -> usize {
        self.ramp_queues.get(i).map_or(0, VecDeque::len)
    }

    /// Demand that arrived at the upstream entry but could not yet insert.
    pub fn entry_queue_len(&self) -> usize {
        self.entry_queues.iter().map(VecDeque::len).sum()
    }

    /// Snapshot of all mainline vehicles in external units, ordered by
    /// lane then position.
    pub fn vehicles(&self) -> Vec<VehicleState> {
        let mut out = Vec::with_capacity(self.vehicle_count());
        for (li, cars) in self.lanes.iter().enumerate() {
            for c in cars {
                out.push(types::to_vehicle_state(
                    c.id, li, c.pos, c.speed, c.free_speed, c.compliant, c.len,
                ));
            }
        }
        out
    }

    /// Current state as trajectory CSV rows.
    pub fn trajectory_rows(&self) -> Vec<TrajectoryRow> {
        self.vehicles()
            .into_iter()
            .map(|v| TrajectoryRow {
                time_s: self.time_s,
                id: v.id,
                lane: v.lane,
                position_mi: v.position,
                speed_mph: v.speed,
            })
            .collect()
    }

    /// Places a vehicle directly (fixtures and diagnostics). Keeps the
    /// lane ordered; rejects overlaps with existing vehicles.
    pub fn seed_vehicle(
        &mut self,
        lane: usize,
        position_mi: f64,
        speed_mph: f64,
        free_speed_mph: f64,
        compliant: bool,
    ) -> Result<u64> {
        if lane >= self.n_lanes {
            return Err(Error::sim(format!("lane {lane} out of range")));
        }
        let car = Car {
            id: self.next_id,
            pos: miles_to_meters(position_mi),
            speed: mph_to_mps(speed_mph),
            len: feet_to_meters(VEHICLE_LENGTH_FT),
            free_speed: mph_to_mps(free_speed_mph),
            compliant,
        };
        let cars = &mut self.lanes[lane];
        let idx = cars.partition_point(|c| c.pos < car.pos);
        if idx > 0 {
            let leader = &cars[idx - 1];
            if car.pos - leader.pos - leader.len <= 0.0 {
                return Err(Error::sim("seeded vehicle overlaps its leader"));
            }
        }
        if let Some(follower) = cars.get(idx) {
            if follower.pos - car.pos - car.len <= 0.0 {
                return Err(Error::sim("seeded vehicle overlaps its follower"));
            }
        }
        cars.insert(idx, car);
        self.next_id += 1;
        self.total_spawned += 1;
        Ok(self.next_id - 1)
    }

    /// Effective desired speed: compliant drivers cap at the posted limit
    /// of the gantry segment containing them.
    fn effective_desired(&self, car: &Car, limits_mps: &[f64]) -> f64 {
        if !car.compliant {
            return car.free_speed;
        }
        let n_below = self.gantries_m.partition_point(|g| *g <= car.pos);
        match n_below.checked_sub(1) {
            Some(g) => car.free_speed.min(limits_mps[g]),
            None => car.free_speed,
        }
    }

    /// Advances the world one time step under the posted limits.
    pub fn step(&mut self, posted_limits_mph: &[f64], dt: f64) -> Result<StepEvents> {
        if posted_limits_mph.len() != self.gantries_m.len() {
            return Err(Error::sim(format!(
                "{} posted limits for {} gantries",
                posted_limits_mph.len(),
                self.gantries_m.len()
            )));
        }
        for &l in posted_limits_mph {
            if !POSTED_LIMITS_MPH.contains(&l) {
                return Err(Error::sim(format!("posted limit {l} mph is not one of {POSTED_LIMITS_MPH:?}")));
            }
        }
        if !(dt > 0.0 && dt <= 1.0) {
            return Err(Error::sim(format!("dt {dt} outside (0, 1] s")));
        }
        let limits_mps: Vec<f64> = posted_limits_mph.iter().map(|&l| mph_to_mps(l)).collect();

        // Accelerations from the pre-step state, synchronously.
        let mut accels: Vec<Vec<f64>> = Vec::with_capacity(self.n_lanes);
        for cars in &self.lanes {
            let mut lane_acc = Vec::with_capacity(cars.len());
            for (k, car) in cars.iter().enumerate() {
                if !(car.pos.is_finite() && car.speed.is_finite()) {
                    return Err(Error::sim(format!("vehicle {} has non-finite state", car.id)));
                }
                let leader = if k > 0 {
                    let l = &cars[k - 1];
                    Some(Leader { gap_m: car.pos - l.pos - l.len, speed_mps: l.speed })
                } else {
                    None
                };
                let desired = self.effective_desired(car, &limits_mps);
                lane_acc.push(idm::acceleration(car.speed, leader, desired, &self.params)?);
            }
            accels.push(lane_acc);
        }

        let mut events = StepEvents::default();
        let t_end = self.time_s + dt;

        // Integrate downstream-first so the overlap clamp can reference the
        // leader's already-updated position.
        for (li, cars) in self.lanes.iter_mut().enumerate() {
            for k in 0..cars.len() {
                let old_pos = cars[k].pos;
                let mut speed = (cars[k].speed + accels[li][k] * dt).max(0.0);
                let mut pos = old_pos - speed * dt;
                if k > 0 {
                    let min_pos = cars[k - 1].pos + cars[k - 1].len + MIN_CLAMP_GAP_M;
                    if pos < min_pos {
                        pos = min_pos;
                        speed = speed.min(cars[k - 1].speed);
                    }
                }
                cars[k].pos = pos;
                cars[k].speed = speed;

                // Sensors passed this step: pos < s <= old_pos.
                let lo = self.sensors_m.partition_point(|s| *s <= pos);
                let hi = self.sensors_m.partition_point(|s| *s <= old_pos);
                for si in lo..hi {
                    events.crossings.push(Crossing {
                        sensor: si,
                        speed_mph: mps_to_mph(speed),
                        length_ft: cars[k].len * crate::units::FEET_PER_METER,
                        time_s: t_end,
                    });
                }
            }
            let n_exit = cars.partition_point(|c| c.pos < 0.0);
            if n_exit > 0 {
                cars.drain(0..n_exit);
                events.exited += n_exit;
            }
        }
        self.total_exited += events.exited as u64;

        self.spawn_mainline(dt, &limits_mps, &mut events)?;
        self.merge_ramps(dt, &mut events)?;

        self.time_s = t_end;
        Ok(events)
    }

    fn sample_car(&mut self) -> Result<Car> {
        let (lo, hi) = FREE_SPEED_BOUNDS_MPH;
        let normal = Normal::new(self.params.free_speed_mean, self.params.free_speed_std)
            .map_err(|e| Error::config(format!("free speed distribution: {e}")))?;
        let mut draw = normal.sample(&mut self.rng);
        for _ in 0..100 {
            if (lo..=hi).contains(&draw) {
                break;
            }
            draw = normal.sample(&mut self.rng);
        }
        let free_mph = draw.clamp(lo, hi);
        let compliant = self.rng.random_bool(self.compliance_rate);
        let car = Car {
            id: self.next_id,
            pos: 0.0,
            speed: 0.0,
            len: feet_to_meters(VEHICLE_LENGTH_FT),
            free_speed: mph_to_mps(free_mph),
            compliant,
        };
        self.next_id += 1;
        Ok(car)
    }

    fn poisson_arrivals(&mut self, lambda: f64) -> Result<usize> {
        if lambda <= 0.0 {
            return Ok(0);
        }
        let dist = Poisson::new(lambda).map_err(|e| Error::config(format!("arrival rate: {e}")))?;
        Ok(dist.sample(&mut self.rng) as usize)
    }

    /// Poisson arrivals per lane at the scheduled rate; one insertion
    /// attempt per lane per step, blocked arrivals carried over.
    fn spawn_mainline(&mut self, dt: f64, limits_mps: &[f64], events: &mut StepEvents) -> Result<()> {
        let rate = types::rate_at(&self.demand_main, self.time_s);
        let lambda = rate / 3600.0 * dt;
        for lane in 0..self.n_lanes {
            let arrivals = self.poisson_arrivals(lambda)?;
            for _ in 0..arrivals {
                let car = self.sample_car()?;
                self.entry_queues[lane].push_back(car);
            }
            let Some(front) = self.entry_queues[lane].front() else { continue };

            let entry = self.length_m;
            let desired = if front.compliant {
                let n_below = self.gantries_m.partition_point(|g| *g <= entry);
                match n_below.checked_sub(1) {
                    Some(g) => front.free_speed.min(limits_mps[g]),
                    None => front.free_speed,
                }
            } else {
                front.free_speed
            };
            let (speed, safe) = match self.lanes[lane].last() {
                None => (desired, true),
                Some(leader) => {
                    let gap = entry - leader.pos - leader.len;
                    let v = desired.min(leader.speed + ENTRY_CLOSING_CAP_MPS);
                    (v, gap >= self.params.jam_gap + v * self.params.desired_time_headway)
                }
            };
            if safe {
                let mut car = self.entry_queues[lane].pop_front().expect("front checked above");
                car.pos = entry;
                car.speed = speed;
                self.lanes[lane].push(car);
                events.spawned += 1;
                self.total_spawned += 1;
            }
        }
        Ok(())
    }

    /// FIFO gap-acceptance insertion into the rightmost lane near each
    /// merge point; at most one merge per ramp per step.
    fn merge_ramps(&mut self, dt: f64, events: &mut StepEvents) -> Result<()> {
        for ri in 0..self.ramps.len() {
            let ramp = self.ramps[ri];
            let rate = types::rate_at(&self.demand_ramp[ri], self.time_s);
            let lambda = rate * ramp.arrival_lanes as f64 / 3600.0 * dt;
            let arrivals = self.poisson_arrivals(lambda)?;
            for _ in 0..arrivals {
                let car = self.sample_car()?;
                self.ramp_queues[ri].push_back(car);
            }
            if self.ramp_queues[ri].is_empty() {
                continue;
            }
            let len = feet_to_meters(VEHICLE_LENGTH_FT);
            let jam = self.params.jam_gap;
            let mut slot = None;
            for off in RAMP_SLOT_OFFSETS_M {
                let p = ramp.merge_m + off;
                if !(0.0 < p && p < self.length_m) {
                    continue;
                }
                let lane = &self.lanes[0];
                let idx = lane.partition_point(|c| c.pos < p);
                let front_ok = match idx.checked_sub(1).map(|i| &lane[i]) {
                    Some(leader) => p - leader.pos - leader.len >= jam,
                    None => true,
                };
                let back_ok = match lane.get(idx) {
                    Some(follower) => follower.pos - p - len >= jam,
                    None => true,
                };
                if front_ok && back_ok {
                    slot = Some((idx, p));
                    break;
                }
            }
            if let Some((idx, p)) = slot {
                let mut car = self.ramp_queues[ri].pop_front().expect("queue checked non-empty");
                car.pos = p;
                car.speed = mph_to_mps(RAMP_APPROACH_MPH);
                self.lanes[0].insert(idx, car);
                events.spawned += 1;
                self.total_spawned += 1;
            }
        }
        Ok(())
    }

    /// Sensor milemarkers, miles, ascending (index matches gantry index).
    pub fn sensor_positions_mi(&self) -> Vec<f64> {
        self.sensors_m.iter().map(|&s| meters_to_miles(s)).collect()
    }

    /// Asserts per-lane ordering and positive bumper gaps; used by fuzz
    /// tests and debug builds.
    pub fn check_no_collision(&self) -> Result<()> {
        for (li, cars) in self.lanes.iter().enumerate() {
            for pair in cars.windows(2) {
                let gap = pair[1].pos - pair[0].pos - pair[0].len;
                if gap <= 0.0 {
                    return Err(Error::sim(format!(
                        "collision in lane {li}: gap {gap:.4} m between ids {} and {}",
                        pair[0].id, pair[1].id
                    )));
                }
            }
        }
        Ok(())
    }
}
