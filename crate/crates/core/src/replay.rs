//! Detector-data ingestion and open-loop policy replay: parse recorded
//! roadside readings, map sensors onto gantries, and re-run a trained
//! policy against the recording without affecting the traffic.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::control::{ControlContext, Controller, DecisionMode, PolicyController};
use crate::error::{Error, Result};
use crate::metrics::TimeSpaceGrid;
use crate::nn::Mlp;
use crate::sensing::{select_critical_sensor, SensorReading};
use crate::units::CONTROL_INTERVAL_S;

pub const RDS_HEADER: &str = "timestamp,sensor_id,milemarker,speed_mph,occupancy,volume";

/// One aggregation-window report from one roadside detector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RdsRecord {
    /// Seconds since midnight.
    pub timestamp: f64,
    pub sensor_id: String,
    pub milemarker: f64,
    pub speed_mph: f64,
    /// Fraction of the window the detection zone was occupied, in [0, 1].
    pub occupancy: f64,
    /// Vehicles per hour.
    pub volume: f64,
}

/// A missing stretch in one sensor's nominal 60-second cadence.
#[derive(Debug, Clone, PartialEq)]
pub struct RdsGap {
    pub sensor_id: String,
    /// Timestamp of the last record before the gap.
    pub after: f64,
    pub missing_windows: usize,
}

/// Validated, time-sorted records plus the cadence gaps found in them.
#[derive(Debug, Clone, PartialEq)]
pub struct RdsSeries {
    pub records: Vec<RdsRecord>,
    pub gaps: Vec<RdsGap>,
}

/// Parses detector records, rejecting malformed rows with their line
/// numbers. The header must match [`RDS_HEADER`] exactly; records come
/// back sorted by (timestamp, milemarker, sensor_id) with per-sensor
/// cadence gaps reported.
pub fn parse_rds_csv<R: Read>(input: R, origin: &str) -> Result<RdsSeries> {
    let mut reader = csv::Reader::from_reader(input);
    let expected: Vec<&str> = RDS_HEADER.split(',').collect();
    let headers = reader.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(Error::data(
            origin,
            format!("header must be exactly {RDS_HEADER:?}, found {headers:?}"),
        ));
    }

    let mut records = Vec::new();
    for row in reader.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        let bad = |what: &str| Error::data(origin, format!("line {line}: {what}"));
        if row.len() != expected.len() {
            return Err(bad(&format!("expected {} columns, found {}", expected.len(), row.len())));
        }
        let num = |idx: usize, name: &str| -> Result<f64> {
            row[idx]
                .trim()
                .parse::<f64>()
                .map_err(|e| Error::data(origin, format!("line {line}: bad {name} {:?}: {e}", &row[idx])))
        };
        let rec = RdsRecord {
            timestamp: num(0, "timestamp")?,
            sensor_id: row[1].trim().to_string(),
            milemarker: num(2, "milemarker")?,
            speed_mph: num(3, "speed_mph")?,
            occupancy: num(4, "occupancy")?,
            volume: num(5, "volume")?,
        };
        if !rec.timestamp.is_finite() || rec.timestamp < 0.0 {
            return Err(bad(&format!("timestamp {} out of range", rec.timestamp)));
        }
        if rec.sensor_id.is_empty() {
            return Err(bad("empty sensor_id"));
        }
        if !rec.milemarker.is_finite() {
            return Err(bad("non-finite milemarker"));
        }
        if !rec.speed_mph.is_finite() || rec.speed_mph < 0.0 {
            return Err(bad(&format!("speed {} out of range", rec.speed_mph)));
        }
        if !(0.0..=1.0).contains(&rec.occupancy) {
            return Err(bad(&format!("occupancy {} outside [0, 1]", rec.occupancy)));
        }
        if !rec.volume.is_finite() || rec.volume < 0.0 {
            return Err(bad(&format!("volume {} out of range", rec.volume)));
        }
        records.push(rec);
    }

    records.sort_by(|a, b| {
        a.timestamp
            .total_cmp(&b.timestamp)
            .then(a.milemarker.total_cmp(&b.milemarker))
            .then(a.sensor_id.cmp(&b.sensor_id))
    });

    let mut last_seen: HashMap<&str, f64> = HashMap::new();
    let mut gaps = Vec::new();
    for rec in &records {
        if let Some(&prev) = last_seen.get(rec.sensor_id.as_str()) {
            let missing = ((rec.timestamp - prev) / CONTROL_INTERVAL_S).round() as i64 - 1;
            if missing > 0 {
                gaps.push(RdsGap {
                    sensor_id: rec.sensor_id.clone(),
                    after: prev,
                    missing_windows: missing as usize,
                });
            }
        }
        last_seen.insert(rec.sensor_id.as_str(), rec.timestamp);
    }
    Ok(RdsSeries { records, gaps })
}

pub fn load_rds_csv(path: &Path) -> Result<RdsSeries> {
    parse_rds_csv(std::fs::File::open(path)?, &path.display().to_string())
}

pub fn write_rds_csv<W: Write>(out: W, records: &[RdsRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(RDS_HEADER.split(','))?;
    for r in records {
        w.write_record([
            r.timestamp.to_string(),
            r.sensor_id.clone(),
            r.milemarker.to_string(),
            r.speed_mph.to_string(),
            r.occupancy.to_string(),
            r.volume.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Which sensors each gantry reads, ordered by milemarker within a
/// gantry. Every sensor appears exactly once.
#[derive(Debug, Clone, PartialEq)]
pub struct GantryAssignment {
    pub per_gantry: Vec<Vec<String>>,
    pub warnings: Vec<String>,
}

impl GantryAssignment {
    /// sensor_id -> gantry index, for record routing.
    pub fn sensor_map(&self) -> HashMap<&str, usize> {
        let mut map = HashMap::new();
        for (g, ids) in self.per_gantry.iter().enumerate() {
            for id in ids {
                map.insert(id.as_str(), g);
            }
        }
        map
    }
}

/// Maps each sensor to the gantry whose segment contains it: the
/// largest gantry milemarker at or below the sensor's. Sensors below
/// the first gantry fall outside any segment and are attached to that
/// end gantry with a warning.
pub fn assign_sensors(gantries: &[f64], sensors: &[(String, f64)]) -> Result<GantryAssignment> {
    if gantries.is_empty() {
        return Err(Error::config("no gantries to assign sensors to"));
    }
    if gantries.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::config("gantry milemarkers must be strictly increasing"));
    }
    if sensors.windows(2).any(|w| w[0].1 > w[1].1) {
        return Err(Error::config("sensor milemarkers must be sorted"));
    }
    let mut seen: HashMap<&str, ()> = HashMap::new();
    for (id, _) in sensors {
        if seen.insert(id.as_str(), ()).is_some() {
            return Err(Error::config(format!("duplicate sensor id {id:?}")));
        }
    }

    let mut per_gantry = vec![Vec::new(); gantries.len()];
    let mut warnings = Vec::new();
    for (id, mm) in sensors {
        let g = match gantries.iter().rposition(|&p| p <= *mm) {
            Some(g) => g,
            None => {
                warnings.push(format!(
                    "sensor {id:?} at mile {mm} lies downstream of the first gantry; attached to it"
                ));
                0
            }
        };
        per_gantry[g].push(id.clone());
    }
    Ok(GantryAssignment { per_gantry, warnings })
}

/// Grids and bookkeeping from one open-loop replay.
#[derive(Debug, Clone)]
pub struct ReplayOutcome {
    /// Posted limit (mph), gantry by window, downstream-first rows.
    pub limit_grid: TimeSpaceGrid,
    /// Critical sensed speed (mph) feeding each decision.
    pub speed_grid: TimeSpaceGrid,
    /// (window, gantry) pairs where no fresh data arrived and the last
    /// observation was held.
    pub held: Vec<(usize, usize)>,
    /// Start of the first 60-second window, seconds since midnight.
    pub start_time: f64,
    pub n_windows: usize,
}

/// Re-runs a trained policy over recorded detector data in 60-second
/// windows. Per window and gantry, the freshest record per assigned
/// sensor becomes a candidate reading and the critical-sensor rule picks
/// one; gantries with no fresh data hold their last observation
/// (initially free flow) and are flagged. Every gantry acts as an agent
/// under the sequential protocol; decisions are argmax and the traffic
/// is never affected.
pub fn open_loop_replay(
    records: &[RdsRecord],
    gantries: &[f64],
    assignment: &GantryAssignment,
    actor: Mlp,
    masking: bool,
) -> Result<ReplayOutcome> {
    if records.is_empty() {
        return Err(Error::config("no records to replay"));
    }
    if assignment.per_gantry.len() != gantries.len() {
        return Err(Error::config("assignment does not match the gantry list"));
    }
    let sensor_to_gantry = assignment.sensor_map();
    for rec in records {
        if !sensor_to_gantry.contains_key(rec.sensor_id.as_str()) {
            return Err(Error::config(format!(
                "record references unassigned sensor {:?}",
                rec.sensor_id
            )));
        }
    }
    let dense: HashMap<&str, usize> = assignment
        .per_gantry
        .iter()
        .flatten()
        .enumerate()
        .map(|(i, id)| (id.as_str(), i))
        .collect();

    let n = gantries.len();
    let start_time = records
        .iter()
        .map(|r| r.timestamp)
        .fold(f64::INFINITY, f64::min);
    let window_of =
        |ts: f64| -> usize { ((ts - start_time) / CONTROL_INTERVAL_S).floor() as usize };
    let n_windows = window_of(records.iter().map(|r| r.timestamp).fold(0.0, f64::max)) + 1;

    let mut by_window: Vec<Vec<&RdsRecord>> = vec![Vec::new(); n_windows];
    for rec in records {
        by_window[window_of(rec.timestamp)].push(rec);
    }

    let mut controller = PolicyController::new(actor, masking, DecisionMode::Argmax)?;
    let ctx = ControlContext {
        gantry_positions: gantries.to_vec(),
        agent_offset: 0,
        n_agents: n,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0);

    let mut latest: Vec<SensorReading> = (0..n)
        .map(|_| SensorReading {
            sensor_id: usize::MAX,
            window_end: start_time,
            mean_speed: crate::env::MAX_SPEED_MPH,
            occupancy: 0.0,
            volume: 0.0,
        })
        .collect();
    let mut limit_grid = TimeSpaceGrid::new(n);
    let mut speed_grid = TimeSpaceGrid::new(n);
    let mut held = Vec::new();

    for (w, window_records) in by_window.iter().enumerate() {
        // Freshest record per sensor this window; records are sorted by
        // timestamp, so later entries overwrite earlier ones.
        let mut fresh: HashMap<usize, &RdsRecord> = HashMap::new();
        for rec in window_records {
            fresh.insert(dense[rec.sensor_id.as_str()], rec);
        }
        let window_end = start_time + CONTROL_INTERVAL_S * (w as f64 + 1.0);
        for g in 0..n {
            let candidates: Vec<SensorReading> = assignment.per_gantry[g]
                .iter()
                .filter_map(|id| fresh.get(&dense[id.as_str()]))
                .map(|rec| SensorReading {
                    sensor_id: dense[rec.sensor_id.as_str()],
                    window_end,
                    mean_speed: rec.speed_mph,
                    occupancy: rec.occupancy,
                    volume: rec.volume,
                })
                .collect();
            if candidates.is_empty() {
                held.push((w, g));
                continue;
            }
            let refs: Vec<&SensorReading> = candidates.iter().collect();
            latest[g] = select_critical_sensor(&refs)?.clone();
        }

        let actions = controller.decide(&latest, &ctx, &mut rng)?;
        let limits: Vec<f64> = actions.iter().map(|a| a.mph()).collect();
        let speeds: Vec<f64> = latest.iter().map(|r| r.mean_speed).collect();
        limit_grid.push_step(&limits)?;
        speed_grid.push_step(&speeds)?;
    }

    Ok(ReplayOutcome { limit_grid, speed_grid, held, start_time, n_windows })
}
