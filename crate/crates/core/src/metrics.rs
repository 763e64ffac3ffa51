//! Safety and mobility metrics over seeded batch runs: speed-variation
//! coefficient, congestion queue length, rule-violation counts, and the
//! report/grid exports that summarize a controller's behavior.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::control::{ControlContext, Controller};
use crate::env::EpisodeLogRow;
use crate::error::{Error, Result};
use crate::scenario::ScenarioConfig;
use crate::sensing::SensorReading;

/// Decorrelates controller sampling streams from environment seeds.
pub const EVAL_SEED_SALT: u64 = 0xE7A1;

/// Thresholds shared by the safety metrics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SafetyMetricConfig {
    /// Truncation threshold for the normalized speed-variation mean.
    pub alpha: f64,
    /// Speeds below this (mph) count a segment as congested.
    pub congestion_speed: f64,
    /// Miles of corridor each gantry's reading represents.
    pub segment_length: f64,
}

impl Default for SafetyMetricConfig {
    fn default() -> Self {
        SafetyMetricConfig { alpha: 0.1, congestion_speed: 35.0, segment_length: 0.5 }
    }
}

impl SafetyMetricConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::config("alpha must lie in (0, 1)"));
        }
        if self.congestion_speed <= 0.0 {
            return Err(Error::config("congestion_speed must be positive"));
        }
        if self.segment_length <= 0.0 {
            return Err(Error::config("segment_length must be positive"));
        }
        Ok(())
    }
}

/// Coefficient of variation between a gantry's speed and its nearest
/// upstream neighbor's. The two-point population std is |v_i - v_up|/2;
/// the value is zero when the local speed is above the pair mean (speeds
/// rising downstream are not a deceleration hazard) and when both speeds
/// are zero.
pub fn cvs_step(v_i: f64, v_up: f64) -> f64 {
    let v_i = v_i.max(0.0);
    let v_up = v_up.max(0.0);
    let mean = 0.5 * (v_i + v_up);
    if mean == 0.0 || v_i > mean {
        return 0.0;
    }
    (0.5 * (v_i - v_up).abs()) / mean
}

/// Mean of the per-step values strictly above `alpha`, with the count of
/// contributing values. An empty exceedance set yields value 0, flagged
/// by `exceedances == 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizedCvs {
    pub value: f64,
    pub exceedances: usize,
}

impl NormalizedCvs {
    pub fn is_flagged(&self) -> bool {
        self.exceedances == 0
    }
}

pub fn normalized_cvs(history: &[f64], alpha: f64) -> Result<NormalizedCvs> {
    if history.is_empty() {
        return Err(Error::config("cannot normalize an empty history"));
    }
    let mut sum = 0.0;
    let mut n = 0usize;
    for &v in history {
        if v > alpha {
            sum += v;
            n += 1;
        }
    }
    Ok(NormalizedCvs { value: if n == 0 { 0.0 } else { sum / n as f64 }, exceedances: n })
}

/// Total congested length: `segment_length` miles per gantry whose
/// sensed mean speed is below `congestion_speed`.
pub fn queue_length(readings: &[SensorReading], cfg: &SafetyMetricConfig) -> f64 {
    let congested = readings.iter().filter(|r| r.mean_speed < cfg.congestion_speed).count();
    cfg.segment_length * congested as f64
}

/// Counts both rule violations over a full episode log: adaptation
/// (sensed speed at or below `congestion_speed` while posting anything
/// other than 30) and step-down (posting more than `a_diff` above the
/// downstream neighbor; the most downstream agent is exempt).
pub fn violation_counts(
    log: &[EpisodeLogRow],
    cfg: &SafetyMetricConfig,
    a_diff: f64,
) -> (usize, usize) {
    let mut adaptation = 0usize;
    let mut by_step: BTreeMap<usize, BTreeMap<usize, f64>> = BTreeMap::new();
    for row in log {
        if row.nu <= cfg.congestion_speed && row.action_mph != 30.0 {
            adaptation += 1;
        }
        by_step.entry(row.step).or_default().insert(row.agent, row.action_mph);
    }
    let mut step_down = 0usize;
    for actions in by_step.values() {
        for (&agent, &a) in actions {
            if agent == 0 {
                continue;
            }
            if let Some(&prev) = actions.get(&(agent - 1)) {
                if a > prev + a_diff {
                    step_down += 1;
                }
            }
        }
    }
    (adaptation, step_down)
}

/// A gantry-by-time matrix (rows downstream-first, one column per
/// control step) exported as a plain CSV matrix without headers.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSpaceGrid {
    rows: Vec<Vec<f64>>,
}

impl TimeSpaceGrid {
    pub fn new(n_rows: usize) -> TimeSpaceGrid {
        TimeSpaceGrid { rows: vec![Vec::new(); n_rows] }
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_steps(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn value(&self, row: usize, step: usize) -> f64 {
        self.rows[row][step]
    }

    /// Appends one control step's values, one per row.
    pub fn push_step(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.rows.len() {
            return Err(Error::config(format!(
                "expected {} values per step, got {}",
                self.rows.len(),
                values.len()
            )));
        }
        for (row, &v) in self.rows.iter_mut().zip(values) {
            row.push(v);
        }
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for row in &self.rows {
            let line: Vec<String> = row.iter().map(f64::to_string).collect();
            out.push_str(&line.join(","));
            out.push('\n');
        }
        out
    }

    pub fn from_csv<R: Read>(input: R) -> Result<TimeSpaceGrid> {
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for (i, line) in BufReader::new(input).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let row: Vec<f64> = line
                .split(',')
                .map(|c| {
                    c.trim().parse::<f64>().map_err(|e| {
                        Error::malformed(format!("grid row {}: bad cell {c:?}: {e}", i + 1))
                    })
                })
                .collect::<Result<_>>()?;
            if let Some(first) = rows.first() {
                if row.len() != first.len() {
                    return Err(Error::malformed(format!(
                        "grid row {} has {} columns, expected {}",
                        i + 1,
                        row.len(),
                        first.len()
                    )));
                }
            }
            rows.push(row);
        }
        Ok(TimeSpaceGrid { rows })
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(self.to_csv().as_bytes())?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<TimeSpaceGrid> {
        TimeSpaceGrid::from_csv(std::fs::File::open(path)?)
    }
}

/// One seed's metric extraction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedMetrics {
    pub seed: u64,
    pub adaptation_violations: usize,
    pub step_down_violations: usize,
    pub normalized_cvs: f64,
    pub cvs_exceedances: usize,
    pub max_queue_mi: f64,
}

/// Mean and population standard deviation over completed seeds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: f64,
    pub std: f64,
}

pub fn summarize(values: &[f64]) -> MetricSummary {
    if values.is_empty() {
        return MetricSummary { mean: f64::NAN, std: f64::NAN };
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    MetricSummary { mean, std: var.max(0.0).sqrt() }
}

/// Per-seed metrics plus their aggregate for one controller.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub controller: String,
    pub per_seed: Vec<SeedMetrics>,
    pub adaptation: MetricSummary,
    pub step_down: MetricSummary,
    pub normalized_cvs: MetricSummary,
    pub max_queue: MetricSummary,
    /// Seeds whose simulation failed, with the reason. Aggregates cover
    /// completed seeds only.
    pub failures: Vec<(u64, String)>,
}

impl EvaluationReport {
    fn from_seed_metrics(
        controller: String,
        per_seed: Vec<SeedMetrics>,
        failures: Vec<(u64, String)>,
    ) -> Result<EvaluationReport> {
        if per_seed.is_empty() {
            return Err(Error::malformed(format!(
                "every seed failed for {controller}: {failures:?}"
            )));
        }
        let col = |f: &dyn Fn(&SeedMetrics) -> f64| -> Vec<f64> { per_seed.iter().map(f).collect() };
        Ok(EvaluationReport {
            adaptation: summarize(&col(&|m| m.adaptation_violations as f64)),
            step_down: summarize(&col(&|m| m.step_down_violations as f64)),
            normalized_cvs: summarize(&col(&|m| m.normalized_cvs)),
            max_queue: summarize(&col(&|m| m.max_queue_mi)),
            controller,
            per_seed,
            failures,
        })
    }
}

pub const REPORT_HEADER: &str =
    "controller,seed,adaptation_violations,step_down_violations,normalized_cvs,max_queue_mi";

/// One row per seed plus `mean` and `std` rows per controller.
pub fn write_report_csv<W: Write>(out: W, reports: &[EvaluationReport]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(REPORT_HEADER.split(','))?;
    for rep in reports {
        for m in &rep.per_seed {
            w.write_record([
                rep.controller.as_str(),
                &m.seed.to_string(),
                &m.adaptation_violations.to_string(),
                &m.step_down_violations.to_string(),
                &m.normalized_cvs.to_string(),
                &m.max_queue_mi.to_string(),
            ])?;
        }
        for (label, a, s, c, q) in [
            ("mean", rep.adaptation.mean, rep.step_down.mean, rep.normalized_cvs.mean, rep.max_queue.mean),
            ("std", rep.adaptation.std, rep.step_down.std, rep.normalized_cvs.std, rep.max_queue.std),
        ] {
            w.write_record([
                rep.controller.as_str(),
                label,
                &a.to_string(),
                &s.to_string(),
                &c.to_string(),
                &q.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Fixed-width human-readable summary, one line per controller.
pub fn render_table(reports: &[EvaluationReport]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<16} {:>6} {:>16} {:>16} {:>15} {:>17}",
        "controller", "seeds", "adaptation", "step-down", "norm. CVS", "max queue (mi)"
    );
    for rep in reports {
        let cell = |s: MetricSummary| format!("{:.2} ± {:.2}", s.mean, s.std);
        let _ = writeln!(
            out,
            "{:<16} {:>6} {:>16} {:>16} {:>15} {:>17}",
            rep.controller,
            rep.per_seed.len(),
            cell(rep.adaptation),
            cell(rep.step_down),
            cell(rep.normalized_cvs),
            cell(rep.max_queue),
        );
        for (seed, reason) in &rep.failures {
            let _ = writeln!(out, "  seed {seed} failed: {reason}");
        }
    }
    out
}

/// Everything one seeded run produced beyond its scalar metrics.
#[derive(Debug, Clone)]
pub struct SeedRun {
    pub seed: u64,
    /// Post-step sensed mean speed, gantry by control step.
    pub speed_grid: TimeSpaceGrid,
    /// Posted limit applied that step, gantry by control step.
    pub limit_grid: TimeSpaceGrid,
    pub log: Vec<EpisodeLogRow>,
}

/// Report plus the per-seed grids and logs that back it.
#[derive(Debug)]
pub struct EvaluationOutcome {
    pub report: EvaluationReport,
    pub runs: Vec<SeedRun>,
}

fn evaluate_seed(
    scenario: &ScenarioConfig,
    controller: &mut dyn Controller,
    cfg: &SafetyMetricConfig,
    seed: u64,
) -> Result<(SeedMetrics, SeedRun)> {
    let mut env = scenario.build_env()?;
    let ctx = ControlContext {
        gantry_positions: env.layout().gantry_positions.clone(),
        agent_offset: env.agent_offset(),
        n_agents: env.n_agents(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ EVAL_SEED_SALT);
    controller.reset();
    env.reset(seed)?;

    let gantries = env.gantry_count();
    let mut speed_grid = TimeSpaceGrid::new(gantries);
    let mut limit_grid = TimeSpaceGrid::new(gantries);
    let mut max_queue = 0.0f64;
    let mut cvs_history = Vec::with_capacity(env.n_agents() * env.episode_steps());

    while !env.is_done() {
        let readings = env.latest_readings().to_vec();
        let actions = controller.decide(&readings, &ctx, &mut rng)?;
        let limits = env.gantry_limits(&actions);
        env.step(&actions)?;

        let post = env.latest_readings();
        let speeds: Vec<f64> = post.iter().map(|r| r.mean_speed).collect();
        speed_grid.push_step(&speeds)?;
        limit_grid.push_step(&limits)?;
        max_queue = max_queue.max(queue_length(post, cfg));
        for agent in 0..env.n_agents() {
            let g = env.agent_gantry(agent);
            let up = if g + 1 < gantries { speeds[g + 1] } else { speeds[g] };
            cvs_history.push(cvs_step(speeds[g], up));
        }
    }

    let (adaptation, step_down) = violation_counts(env.episode_log(), cfg, env.weights().a_diff);
    let ncvs = normalized_cvs(&cvs_history, cfg.alpha)?;
    let metrics = SeedMetrics {
        seed,
        adaptation_violations: adaptation,
        step_down_violations: step_down,
        normalized_cvs: ncvs.value,
        cvs_exceedances: ncvs.exceedances,
        max_queue_mi: max_queue,
    };
    let run = SeedRun { seed, speed_grid, limit_grid, log: env.episode_log().to_vec() };
    Ok((metrics, run))
}

/// Runs one controller over every seed in parallel and aggregates the
/// four metrics. `make_controller` builds a fresh controller per seed so
/// stateful controllers cannot leak latches across runs.
pub fn run_evaluation<F>(
    scenario: &ScenarioConfig,
    make_controller: F,
    cfg: &SafetyMetricConfig,
    seeds: &[u64],
) -> Result<EvaluationOutcome>
where
    F: Fn() -> Result<Box<dyn Controller>> + Sync,
{
    cfg.validate()?;
    scenario.validate()?;
    if seeds.is_empty() {
        return Err(Error::config("need at least one evaluation seed"));
    }
    let name = make_controller()?.name().to_string();
    let results: Vec<(u64, Result<(SeedMetrics, SeedRun)>)> = seeds
        .par_iter()
        .map(|&seed| {
            let run = make_controller()
                .and_then(|mut c| evaluate_seed(scenario, c.as_mut(), cfg, seed));
            (seed, run)
        })
        .collect();

    let mut per_seed = Vec::new();
    let mut runs = Vec::new();
    let mut failures = Vec::new();
    for (seed, res) in results {
        match res {
            Ok((m, r)) => {
                per_seed.push(m);
                runs.push(r);
            }
            Err(e) => failures.push((seed, e.to_string())),
        }
    }
    let report = EvaluationReport::from_seed_metrics(name, per_seed, failures)?;
    Ok(EvaluationOutcome { report, runs })
}
