//! Command-line frontend for the variable speed limit toolkit: train
//! policies, evaluate controllers across seeds, replay recorded detector
//! data through a trained policy, attribute individual decisions to
//! observation features, and export episode logs as time-space grids.
//!
//! Exit codes: 0 success, 1 usage error, 2 invalid configuration or
//! data, 3 runtime failure (I/O, simulation).

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};

use vsl_core::control::{
    Controller, DecisionMode, NoControl, PolicyController, SpeedMatchConfig, SpeedMatching,
};
use vsl_core::env::{
    read_episode_csv, write_episode_csv, AgentObservation, EpisodeLogRow, MAX_SPEED_MPH, N_ACTIONS,
    OBS_DIM,
};
use vsl_core::metrics::{
    render_table, run_evaluation, write_report_csv, EvaluationReport, SafetyMetricConfig,
    TimeSpaceGrid,
};
use vsl_core::nn::{config_hash, integrated_gradients, softmax, Checkpoint, Mlp};
use vsl_core::replay::{assign_sensors, load_rds_csv, open_loop_replay};
use vsl_core::scenario::preset;
use vsl_core::train::{write_curve_csv, Algorithm, CurvePoint, Trainer};
use vsl_core::{Error, ScenarioConfig, SpeedLimit, TrainConfig};

/// Entry point shared by the binary and the integration tests. Parses
/// `args` (including the program name) and returns the process exit code.
pub fn cli_main<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(err) => {
            let code = match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = err.print();
            return code;
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("error: {err}");
            err.exit_code()
        }
    }
}

#[derive(Parser)]
#[command(
    name = "vsl",
    version,
    about = "Variable speed limit control toolkit",
    long_about = "Train, evaluate, and inspect variable speed limit controllers for a \
                  simulated freeway corridor instrumented with roadside speed/occupancy \
                  sensors and overhead speed limit gantries."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a speed limit policy on a scenario and write checkpoints.
    Train(TrainArgs),
    /// Run controllers over evaluation seeds and report safety metrics.
    Evaluate(EvaluateArgs),
    /// Drive a trained policy open-loop over recorded detector data.
    Replay(ReplayArgs),
    /// Attribute policy decisions in an episode log to input features.
    Attribute(AttributeArgs),
    /// Export an episode log as time-space grids (rows = agents,
    /// most downstream first; columns = control steps).
    ExportGrids(ExportGridsArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// Scenario: a built-in name (desk-train, corridor-34, full-scale)
    /// or a path to a scenario TOML file.
    #[arg(long, default_value = "desk-train")]
    scenario: String,
    /// Training hyperparameter TOML; omitted fields take defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the configured algorithm.
    #[arg(long, value_enum)]
    algorithm: Option<AlgorithmArg>,
    /// Override the training seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the total env control steps to collect.
    #[arg(long)]
    steps: Option<u64>,
    /// Override the mid-run checkpoint cadence (env steps; 0 = final only).
    #[arg(long)]
    checkpoint_every: Option<u64>,
    /// Resume from an existing checkpoint instead of fresh networks.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Directory for curve.csv, checkpoint files, and resolved configs.
    #[arg(long)]
    out_dir: PathBuf,
    /// Suppress per-update progress lines.
    #[arg(long)]
    quiet: bool,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Scenario: built-in name or TOML path.
    #[arg(long, default_value = "desk-train")]
    scenario: String,
    /// Controller to evaluate; repeat the flag to compare several.
    #[arg(
        long = "controllers",
        alias = "controller",
        value_enum,
        required = true,
        value_delimiter = ','
    )]
    controllers: Vec<ControllerKind>,
    /// Trained checkpoint (required for the policy controllers).
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Number of evaluation seeds.
    #[arg(long, default_value_t = 5)]
    seeds: u64,
    /// First seed; runs use seed_base..seed_base+seeds.
    #[arg(long, default_value_t = 1000)]
    seed_base: u64,
    /// Evaluate even if the checkpoint was trained on a different scenario.
    #[arg(long)]
    allow_scenario_mismatch: bool,
    /// Directory for report.csv and per-run grid/log files.
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct ReplayArgs {
    /// Detector CSV (timestamp,sensor_id,milemarker,speed_mph,occupancy,volume).
    #[arg(long)]
    data: PathBuf,
    /// Trained checkpoint providing the policy network.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Scenario providing gantry milemarkers; defaults to the scenario
    /// named in the checkpoint when that is a built-in.
    #[arg(long)]
    scenario: Option<String>,
    /// Apply step-down action masking (--mask=false to disable).
    #[arg(
        long,
        num_args = 0..=1,
        default_value_t = true,
        default_missing_value = "true",
        action = clap::ArgAction::Set
    )]
    mask: bool,
    /// Directory for limits.csv and speeds.csv.
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct AttributeArgs {
    /// Episode log CSV produced by evaluate or export-grids input.
    #[arg(long)]
    log: PathBuf,
    /// Trained checkpoint providing the policy network.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Transition case as FROM-TO in mph (e.g. 70-30); repeat to select
    /// several. Defaults to six canonical cases: 70-30, 40-30, 50-40,
    /// 30-70, 30-40, 40-50.
    #[arg(long = "case")]
    cases: Vec<String>,
    /// Attribution baseline observation.
    #[arg(long, value_enum, default_value_t = BaselineArg::Zeros)]
    baseline: BaselineArg,
    /// Integration resolution (path steps).
    #[arg(long, default_value_t = 256)]
    steps: usize,
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ExportGridsArgs {
    /// Episode log CSV.
    #[arg(long)]
    log: PathBuf,
    /// Directory for limits.csv and speeds.csv.
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum AlgorithmArg {
    Mappo,
    Ippo,
}

impl From<AlgorithmArg> for Algorithm {
    fn from(a: AlgorithmArg) -> Algorithm {
        match a {
            AlgorithmArg::Mappo => Algorithm::Mappo,
            AlgorithmArg::Ippo => Algorithm::Ippo,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ControllerKind {
    /// Post the free-flow limit everywhere.
    NoControl,
    /// Rule-based matching of downstream congestion speed.
    SpeedMatching,
    /// Trained policy with step-down action masking.
    Policy,
    /// Trained policy with masking disabled.
    PolicyUnmasked,
}

impl ControllerKind {
    fn needs_checkpoint(self) -> bool {
        matches!(self, ControllerKind::Policy | ControllerKind::PolicyUnmasked)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum BaselineArg {
    /// All-zero network input.
    Zeros,
    /// Free-flow observation: 70 mph everywhere, zero occupancy.
    Freeflow,
}

/// CLI failure carrying the exit code distinction the process reports.
#[derive(Debug)]
enum CliError {
    /// Flags were individually valid but the combination is not.
    Usage(String),
    Core(Error),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(msg) => write!(f, "{msg}"),
            CliError::Core(err) => write!(f, "{err}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(err: Error) -> CliError {
        CliError::Core(err)
    }
}

impl From<std::io::Error> for CliError {
    fn from(err: std::io::Error) -> CliError {
        CliError::Core(Error::Io(err))
    }
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Core(err) => match err {
                Error::Config(..)
                | Error::Data { .. }
                | Error::Malformed(..)
                | Error::Checkpoint(..)
                | Error::Csv(..)
                | Error::Json(..)
                | Error::Toml(..) => 2,
                Error::Io(..) | Error::Sim(..) => 3,
            },
        }
    }
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Train(args) => cmd_train(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Replay(args) => cmd_replay(args),
        Command::Attribute(args) => cmd_attribute(args),
        Command::ExportGrids(args) => cmd_export_grids(args),
    }
}

/// A built-in preset name, or a path when it names an existing file or
/// ends in .toml.
fn resolve_scenario(spec: &str) -> Result<ScenarioConfig, CliError> {
    let path = Path::new(spec);
    if spec.ends_with(".toml") || path.is_file() {
        Ok(ScenarioConfig::load(path)?)
    } else {
        Ok(preset(spec)?)
    }
}

fn load_train_config(path: &Path) -> Result<TrainConfig, CliError> {
    let text = fs::read_to_string(path)?;
    let cfg: TrainConfig = toml::from_str(&text)
        .map_err(|e| Error::data(path, format!("bad training config: {e}")))?;
    Ok(cfg)
}

fn cmd_train(args: TrainArgs) -> Result<(), CliError> {
    let scenario = resolve_scenario(&args.scenario)?;
    let mut cfg = match &args.config {
        Some(path) => load_train_config(path)?,
        None => TrainConfig::default(),
    };
    if let Some(a) = args.algorithm {
        cfg.algorithm = a.into();
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(n) = args.steps {
        cfg.total_env_steps = n;
    }
    if let Some(c) = args.checkpoint_every {
        cfg.checkpoint_every = c;
    }
    cfg.validate()?;

    let scenario_text = scenario.to_toml_string()?;
    let hash = config_hash(&scenario_text);
    fs::create_dir_all(&args.out_dir)?;
    fs::write(args.out_dir.join("scenario.toml"), &scenario_text)?;
    let cfg_text = toml::to_string_pretty(&cfg)
        .map_err(|e| Error::config(format!("cannot serialize training config: {e}")))?;
    fs::write(args.out_dir.join("train-config.toml"), cfg_text)?;

    let mut env = scenario.build_env()?;
    let mut trainer = match &args.resume {
        Some(path) => {
            let ck = Checkpoint::load(path)?;
            if ck.config_hash != hash {
                eprintln!(
                    "warning: checkpoint {} was trained on a different scenario",
                    path.display()
                );
            }
            Trainer::from_checkpoint(cfg.clone(), &ck)?
        }
        None => Trainer::new(cfg.clone(), OBS_DIM, env.n_agents(), N_ACTIONS)?,
    };

    let mut points: Vec<CurvePoint> = Vec::new();
    let quiet = args.quiet;
    let out_dir = args.out_dir.clone();
    let scenario_name = scenario.name.clone();
    trainer.run(
        &mut env,
        |p| {
            if !quiet {
                println!(
                    "step {:>8}  reward {:+.4}  actor {:+.5}  critic {:.5}  entropy {:.4}",
                    p.step, p.mean_total, p.actor_loss, p.critic_loss, p.entropy
                );
            }
            points.push(p.clone());
        },
        |t, is_final| {
            let ck = t.to_checkpoint(hash.clone(), scenario_name.clone());
            let file = if is_final {
                "checkpoint.json".to_string()
            } else {
                format!("checkpoint-{}.json", ck.train_step)
            };
            ck.save(&out_dir.join(file))
        },
    )?;

    let curve_path = args.out_dir.join("curve.csv");
    write_curve_csv(fs::File::create(&curve_path)?, &points)?;
    let last = points.last();
    println!(
        "trained {} ({}) for {} env steps on {}; final mean reward {}",
        cfg.algorithm,
        if args.resume.is_some() { "resumed" } else { "fresh" },
        last.map_or(0, |p| p.step),
        scenario.name,
        last.map_or_else(|| "n/a".to_string(), |p| format!("{:+.4}", p.mean_total)),
    );
    println!("artifacts in {}", args.out_dir.display());
    Ok(())
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<(), CliError> {
    let scenario = resolve_scenario(&args.scenario)?;
    if args.seeds == 0 {
        return Err(CliError::Usage("--seeds must be at least 1".into()));
    }
    let needs_ck = args.controllers.iter().any(|c| c.needs_checkpoint());
    let actor: Option<Mlp> = if needs_ck {
        let path = args.checkpoint.as_ref().ok_or_else(|| {
            CliError::Usage("--checkpoint is required for the policy controllers".into())
        })?;
        let ck = Checkpoint::load(path)?;
        let hash = config_hash(&scenario.to_toml_string()?);
        if ck.config_hash != hash && !args.allow_scenario_mismatch {
            return Err(Error::checkpoint(format!(
                "checkpoint was trained on scenario {:?}, not the one under evaluation; \
                 pass --allow-scenario-mismatch to evaluate anyway",
                ck.scenario
            ))
            .into());
        }
        Some(ck.actor)
    } else {
        None
    };

    fs::create_dir_all(&args.out_dir)?;
    let seeds: Vec<u64> = (0..args.seeds).map(|k| args.seed_base + k).collect();
    let metric_cfg = SafetyMetricConfig::default();
    let mut reports: Vec<EvaluationReport> = Vec::new();

    for kind in &args.controllers {
        let actor = actor.clone();
        let make: Box<dyn Fn() -> vsl_core::Result<Box<dyn Controller>> + Sync> = match kind {
            ControllerKind::NoControl => Box::new(|| Ok(Box::new(NoControl))),
            ControllerKind::SpeedMatching => Box::new(|| {
                Ok(Box::new(SpeedMatching::new(SpeedMatchConfig::default())?) as Box<dyn Controller>)
            }),
            ControllerKind::Policy | ControllerKind::PolicyUnmasked => {
                let masking = *kind == ControllerKind::Policy;
                let actor = actor.expect("checkpoint loaded above");
                Box::new(move || {
                    Ok(Box::new(PolicyController::new(
                        actor.clone(),
                        masking,
                        DecisionMode::Argmax,
                    )?) as Box<dyn Controller>)
                })
            }
        };
        let outcome = run_evaluation(&scenario, || make(), &metric_cfg, &seeds)?;
        for run in &outcome.runs {
            let stem = format!("{}-seed{}", outcome.report.controller, run.seed);
            run.limit_grid
                .write_csv(&args.out_dir.join(format!("{stem}-limits.csv")))?;
            run.speed_grid
                .write_csv(&args.out_dir.join(format!("{stem}-speeds.csv")))?;
            write_episode_csv(
                fs::File::create(args.out_dir.join(format!("{stem}-log.csv")))?,
                &run.log,
            )?;
        }
        for (seed, reason) in &outcome.report.failures {
            eprintln!(
                "warning: {} seed {seed} failed: {reason}",
                outcome.report.controller
            );
        }
        reports.push(outcome.report);
    }

    write_report_csv(fs::File::create(args.out_dir.join("report.csv"))?, &reports)?;
    print!("{}", render_table(&reports));
    println!("report and per-run grids in {}", args.out_dir.display());
    Ok(())
}

fn cmd_replay(args: ReplayArgs) -> Result<(), CliError> {
    let ck = Checkpoint::load(&args.checkpoint)?;
    let scenario = match &args.scenario {
        Some(spec) => resolve_scenario(spec)?,
        None => preset(&ck.scenario).map_err(|_| {
            CliError::Usage(format!(
                "checkpoint scenario {:?} is not a built-in; pass --scenario for the \
                 gantry layout",
                ck.scenario
            ))
        })?,
    };
    let series = load_rds_csv(&args.data)?;
    for gap in &series.gaps {
        eprintln!(
            "warning: sensor {} missing {} window(s) after t={}",
            gap.sensor_id, gap.missing_windows, gap.after
        );
    }

    let mut by_id: BTreeMap<&str, f64> = BTreeMap::new();
    for r in &series.records {
        match by_id.get(r.sensor_id.as_str()) {
            Some(&mm) if mm != r.milemarker => {
                return Err(Error::data(
                    &args.data,
                    format!(
                        "sensor {} reports from two milemarkers ({mm} and {})",
                        r.sensor_id, r.milemarker
                    ),
                )
                .into());
            }
            Some(_) => {}
            None => {
                by_id.insert(&r.sensor_id, r.milemarker);
            }
        }
    }
    let mut sensors: Vec<(String, f64)> =
        by_id.iter().map(|(id, &mm)| (id.to_string(), mm)).collect();
    sensors.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(&b.0)));

    let gantries = &scenario.corridor.gantry_positions;
    let assignment = assign_sensors(gantries, &sensors)?;
    for w in &assignment.warnings {
        eprintln!("warning: {w}");
    }

    let outcome = open_loop_replay(&series.records, gantries, &assignment, ck.actor, args.mask)?;
    fs::create_dir_all(&args.out_dir)?;
    outcome.limit_grid.write_csv(&args.out_dir.join("limits.csv"))?;
    outcome.speed_grid.write_csv(&args.out_dir.join("speeds.csv"))?;
    println!(
        "replayed {} windows ({} gantries) from t={}s; {} stale slot(s) held previous data",
        outcome.n_windows,
        gantries.len(),
        outcome.start_time,
        outcome.held.len()
    );
    println!("grids in {}", args.out_dir.display());
    Ok(())
}

/// One from->to action transition under study.
#[derive(Debug, Clone, Copy, PartialEq)]
struct TransitionCase {
    from_mph: f64,
    to_mph: f64,
}

impl TransitionCase {
    fn label(&self) -> String {
        format!("{}-{}", self.from_mph, self.to_mph)
    }

    fn parse(text: &str) -> Result<TransitionCase, CliError> {
        let parse_side = |s: &str| -> Option<f64> {
            let mph: f64 = s.parse().ok()?;
            SpeedLimit::from_mph(mph).ok().map(|a| a.mph())
        };
        let (from, to) = text
            .split_once('-')
            .and_then(|(f, t)| Some((parse_side(f)?, parse_side(t)?)))
            .ok_or_else(|| {
                CliError::Usage(format!(
                    "bad --case {text:?}; expected FROM-TO with postable limits, e.g. 70-30"
                ))
            })?;
        Ok(TransitionCase { from_mph: from, to_mph: to })
    }
}

const DEFAULT_CASES: [(f64, f64); 6] = [
    (70.0, 30.0),
    (40.0, 30.0),
    (50.0, 40.0),
    (30.0, 70.0),
    (30.0, 40.0),
    (40.0, 50.0),
];

const ATTRIBUTION_HEADER: &str = "case,instances,mean_prob_input,mean_prob_baseline,\
attr_prev_action,attr_local_speed,attr_local_occ,attr_up_speed,attr_up_occ,\
mean_abs_gap,max_abs_gap";

/// Per-case attribution aggregate over every matching log transition.
#[derive(Debug, Clone)]
struct CaseSummary {
    case: TransitionCase,
    instances: usize,
    mean_prob_input: f64,
    mean_prob_baseline: f64,
    mean_attr: [f64; OBS_DIM],
    mean_abs_gap: f64,
    max_abs_gap: f64,
}

/// Reconstructs the observation agent `agent` acted on at `step` from an
/// episode log: sensor readings come from the previous step's logged
/// post-step values, the downstream neighbor's action from the current
/// step (70 anchors the most downstream agent), and the most upstream
/// agent duplicates its local reading when the log has no neighbor row.
fn observation_from_log(
    rows: &BTreeMap<(usize, usize), EpisodeLogRow>,
    step: usize,
    agent: usize,
) -> Option<AgentObservation> {
    if step == 0 {
        return None;
    }
    let local = rows.get(&(step - 1, agent))?;
    let up = rows.get(&(step - 1, agent + 1)).unwrap_or(local);
    let prev_action = match agent {
        0 => MAX_SPEED_MPH,
        _ => rows.get(&(step, agent - 1))?.action_mph,
    };
    Some(AgentObservation {
        prev_action,
        local_speed: local.nu,
        local_occ: local.occ,
        up_speed: up.nu,
        up_occ: up.occ,
    })
}

fn attribute_cases(
    rows: &[EpisodeLogRow],
    actor: &Mlp,
    cases: &[TransitionCase],
    baseline: &[f64],
    steps: usize,
) -> Result<Vec<CaseSummary>, CliError> {
    let mut by_key: BTreeMap<(usize, usize), EpisodeLogRow> = BTreeMap::new();
    for r in rows {
        if by_key.insert((r.step, r.agent), r.clone()).is_some() {
            return Err(Error::malformed(format!(
                "episode log repeats step {} agent {}",
                r.step, r.agent
            ))
            .into());
        }
    }

    let mut summaries = Vec::new();
    for case in cases {
        let target = SpeedLimit::from_mph(case.to_mph)?.index();
        let mut n = 0usize;
        let mut sum_px = 0.0;
        let mut sum_pb = 0.0;
        let mut sum_attr = [0.0; OBS_DIM];
        let mut sum_gap = 0.0;
        let mut max_gap = 0.0f64;
        for (&(step, agent), row) in &by_key {
            if step == 0 || row.action_mph != case.to_mph {
                continue;
            }
            let Some(prev_row) = by_key.get(&(step - 1, agent)) else {
                continue;
            };
            if prev_row.action_mph != case.from_mph {
                continue;
            }
            let Some(obs) = observation_from_log(&by_key, step, agent) else {
                continue;
            };
            let x = obs.normalized();
            let attr = integrated_gradients(actor, baseline, &x, target, steps)?;
            let px = softmax(&actor.forward(&x)?)[target];
            let pb = softmax(&actor.forward(baseline)?)[target];
            let gap = (attr.iter().sum::<f64>() - (px - pb)).abs();
            n += 1;
            sum_px += px;
            sum_pb += pb;
            for (acc, a) in sum_attr.iter_mut().zip(&attr) {
                *acc += a;
            }
            sum_gap += gap;
            max_gap = max_gap.max(gap);
        }
        if n > 0 {
            let scale = 1.0 / n as f64;
            summaries.push(CaseSummary {
                case: *case,
                instances: n,
                mean_prob_input: sum_px * scale,
                mean_prob_baseline: sum_pb * scale,
                mean_attr: sum_attr.map(|v| v * scale),
                mean_abs_gap: sum_gap * scale,
                max_abs_gap: max_gap,
            });
        } else {
            eprintln!("note: case {}: no matching transitions in log", case.label());
        }
    }
    Ok(summaries)
}

fn write_attribution_csv(path: &Path, summaries: &[CaseSummary]) -> Result<(), CliError> {
    let mut out = String::new();
    let _ = writeln!(out, "{ATTRIBUTION_HEADER}");
    for s in summaries {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            s.case.label(),
            s.instances,
            s.mean_prob_input,
            s.mean_prob_baseline,
            s.mean_attr[0],
            s.mean_attr[1],
            s.mean_attr[2],
            s.mean_attr[3],
            s.mean_attr[4],
            s.mean_abs_gap,
            s.max_abs_gap,
        );
    }
    fs::write(path, out)?;
    Ok(())
}

fn cmd_attribute(args: AttributeArgs) -> Result<(), CliError> {
    let ck = Checkpoint::load(&args.checkpoint)?;
    let rows = read_episode_csv(fs::File::open(&args.log)?)?;
    let cases: Vec<TransitionCase> = if args.cases.is_empty() {
        DEFAULT_CASES
            .iter()
            .map(|&(from_mph, to_mph)| TransitionCase { from_mph, to_mph })
            .collect()
    } else {
        args.cases
            .iter()
            .map(|c| TransitionCase::parse(c))
            .collect::<Result<_, _>>()?
    };
    let baseline: Vec<f64> = match args.baseline {
        BaselineArg::Zeros => vec![0.0; OBS_DIM],
        BaselineArg::Freeflow => AgentObservation {
            prev_action: MAX_SPEED_MPH,
            local_speed: MAX_SPEED_MPH,
            local_occ: 0.0,
            up_speed: MAX_SPEED_MPH,
            up_occ: 0.0,
        }
        .normalized()
        .to_vec(),
    };

    let summaries = attribute_cases(&rows, &ck.actor, &cases, &baseline, args.steps)?;
    write_attribution_csv(&args.out, &summaries)?;
    println!(
        "{:<8} {:>9} {:>11} {:>11} {:>11} {:>9} {:>11} {:>9} {:>10}",
        "case", "instances", "prev_action", "local_speed", "local_occ", "up_speed", "up_occ",
        "p(input)", "gap"
    );
    for s in &summaries {
        println!(
            "{:<8} {:>9} {:>11.4} {:>11.4} {:>11.4} {:>9.4} {:>11.4} {:>9.4} {:>10.2e}",
            s.case.label(),
            s.instances,
            s.mean_attr[0],
            s.mean_attr[1],
            s.mean_attr[2],
            s.mean_attr[3],
            s.mean_attr[4],
            s.mean_prob_input,
            s.mean_abs_gap,
        );
    }
    println!("attributions in {}", args.out.display());
    Ok(())
}

fn cmd_export_grids(args: ExportGridsArgs) -> Result<(), CliError> {
    let rows = read_episode_csv(fs::File::open(&args.log)?)?;
    if rows.is_empty() {
        return Err(Error::malformed("episode log has no rows").into());
    }
    let n_agents = rows.iter().map(|r| r.agent).max().unwrap() + 1;
    let mut by_key: BTreeMap<(usize, usize), &EpisodeLogRow> = BTreeMap::new();
    for r in &rows {
        by_key.insert((r.step, r.agent), r);
    }
    let steps: Vec<usize> = {
        let mut s: Vec<usize> = by_key.keys().map(|&(step, _)| step).collect();
        s.dedup();
        s
    };

    let mut limits = TimeSpaceGrid::new(n_agents);
    let mut speeds = TimeSpaceGrid::new(n_agents);
    let mut column = vec![0.0; n_agents];
    for &step in &steps {
        for agent in 0..n_agents {
            let row = by_key.get(&(step, agent)).ok_or_else(|| {
                Error::malformed(format!("episode log misses step {step} agent {agent}"))
            })?;
            column[agent] = row.action_mph;
        }
        limits.push_step(&column)?;
        for agent in 0..n_agents {
            column[agent] = by_key[&(step, agent)].nu;
        }
        speeds.push_step(&column)?;
    }

    fs::create_dir_all(&args.out_dir)?;
    limits.write_csv(&args.out_dir.join("limits.csv"))?;
    speeds.write_csv(&args.out_dir.join("speeds.csv"))?;
    println!(
        "exported {} agents x {} steps to {}",
        n_agents,
        steps.len(),
        args.out_dir.display()
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transition_case_parses_valid_pairs() {
        let c = TransitionCase::parse("70-30").unwrap();
        assert_eq!(c.from_mph, 70.0);
        assert_eq!(c.to_mph, 30.0);
        assert_eq!(c.label(), "70-30");
    }

    #[test]
    fn transition_case_rejects_bad_input() {
        for bad in ["", "70", "70:30", "70-31", "x-30", "70-30-40"] {
            assert!(TransitionCase::parse(bad).is_err(), "{bad:?} should fail");
        }
    }

    #[test]
    fn exit_codes_follow_error_class() {
        assert_eq!(CliError::Usage("x".into()).exit_code(), 1);
        assert_eq!(CliError::from(Error::config("x")).exit_code(), 2);
        assert_eq!(CliError::from(Error::malformed("x")).exit_code(), 2);
        assert_eq!(CliError::from(Error::checkpoint("x")).exit_code(), 2);
        assert_eq!(CliError::from(Error::sim("x")).exit_code(), 3);
        let io = std::io::Error::new(std::io::ErrorKind::NotFound, "x");
        assert_eq!(CliError::from(Error::Io(io)).exit_code(), 3);
    }

    #[test]
    fn observation_reconstruction_uses_previous_step_readings() {
        let mk = |step, agent, action_mph, nu, occ| EpisodeLogRow {
            step,
            agent,
            action_mph,
            nu,
            occ,
            r1: 0.0,
            r2: 0.0,
            r3: 0.0,
            total: 0.0,
        };
        let mut rows = BTreeMap::new();
        for r in [
            mk(0, 0, 70.0, 62.0, 0.10),
            mk(0, 1, 70.0, 55.0, 0.15),
            mk(1, 0, 30.0, 28.0, 0.30),
            mk(1, 1, 40.0, 41.0, 0.22),
        ] {
            rows.insert((r.step, r.agent), r);
        }

        let obs0 = observation_from_log(&rows, 1, 0).unwrap();
        assert_eq!(obs0.prev_action, 70.0);
        assert_eq!(obs0.local_speed, 62.0);
        assert_eq!(obs0.up_speed, 55.0);

        let obs1 = observation_from_log(&rows, 1, 1).unwrap();
        assert_eq!(obs1.prev_action, 30.0);
        assert_eq!(obs1.local_speed, 55.0);
        assert_eq!(obs1.up_speed, 55.0);
        assert_eq!(obs1.up_occ, 0.15);

        assert!(observation_from_log(&rows, 0, 0).is_none());
    }
}
