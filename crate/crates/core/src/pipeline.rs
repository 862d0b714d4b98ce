//! File-based pipeline stages behind the command-line tool. Every stage reads
//! its inputs from disk, writes its artifacts into an output directory and
//! records a [`RunManifest`] next to them.

use std::collections::BTreeSet;
use std::fmt::Display;
use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::info;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calibration::{calibrate_directional, compliance_alarm, stream_seed, write_alarm_events, CalibrationOptions};
use crate::flow::{fit, DoubtFlow, FeatureSchema, FitConfig};
use crate::geometry::{build_star_map, MapDocument, StaRMap, StarMapOptions, Vec2};
use crate::grid::GridSpec;
use crate::hash::sha256_hex;
use crate::landscape::Landscape;
use crate::lang::{compliance_landscape, parse_program, ConstitutionProgram, LandscapeEvaluator};
use crate::planner::{build_graph, compass_headings, plan, plan_compliance_blind, Node, PlannerConfig, Trajectory};
use crate::sim::{
    doubt_dataset, execute_mission, fly_figure_eight, run_comparison, ComplianceMonitor, DoubtCovariance,
    ExperimentConfig, ExperimentReport, FlightLog, PlannerKind, Scenario, VelocityMode,
};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Runtime(String),
}

impl PipelineError {
    /// 1 usage, 2 validation, 3 runtime.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Usage(_) => 1,
            PipelineError::Validation(_) => 2,
            PipelineError::Runtime(_) => 3,
        }
    }
}

fn invalid(what: impl Display, e: impl Display) -> PipelineError {
    PipelineError::Validation(format!("{what}: {e}"))
}

fn runtime(what: impl Display, e: impl Display) -> PipelineError {
    PipelineError::Runtime(format!("{what}: {e}"))
}

pub type Result<T> = std::result::Result<T, PipelineError>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileRecord {
    pub path: String,
    pub sha256: String,
}

/// Provenance record written by every command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub seed: Option<u64>,
    /// The command's resolved options.
    pub config: serde_json::Value,
    pub inputs: Vec<FileRecord>,
    /// Manifests found next to the inputs that list an input among their outputs.
    pub upstream: Vec<FileRecord>,
    pub outputs: Vec<FileRecord>,
    pub duration_seconds: f64,
}

impl RunManifest {
    pub fn file_name(command: &str) -> String {
        format!("{command}.manifest.json")
    }

    pub fn load(path: &Path) -> Result<RunManifest> {
        let text = fs::read_to_string(path).map_err(|e| runtime(path.display(), e))?;
        serde_json::from_str(&text).map_err(|e| invalid(path.display(), e))
    }

    pub fn output(&self, name: &str) -> Option<&FileRecord> {
        self.outputs.iter().find(|r| Path::new(&r.path).file_name() == Some(name.as_ref()))
    }
}

fn hash_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| runtime(path.display(), e))?;
    Ok(sha256_hex(&bytes))
}

/// Bookkeeping for one command invocation.
struct Run {
    command: &'static str,
    started: Instant,
    seed: Option<u64>,
    config: serde_json::Value,
    inputs: Vec<FileRecord>,
    upstream: BTreeSet<(String, String)>,
}

impl Run {
    fn new(command: &'static str, seed: Option<u64>, config: &impl Serialize) -> Self {
        info!("{command}: starting");
        Self {
            command,
            started: Instant::now(),
            seed,
            config: serde_json::to_value(config).expect("options serialize"),
            inputs: Vec::new(),
            upstream: BTreeSet::new(),
        }
    }

    fn input(&mut self, path: &Path) -> Result<String> {
        let bytes = fs::read(path).map_err(|e| runtime(format!("cannot read {}", path.display()), e))?;
        let sha = sha256_hex(&bytes);
        self.link_upstream(path, &sha);
        self.inputs.push(FileRecord {
            path: path.display().to_string(),
            sha256: sha,
        });
        String::from_utf8(bytes).map_err(|e| invalid(path.display(), e))
    }

    fn link_upstream(&mut self, path: &Path, sha: &str) {
        let dir = match path.parent() {
            Some(d) if !d.as_os_str().is_empty() => d,
            _ => Path::new("."),
        };
        let Ok(entries) = fs::read_dir(dir) else { return };
        for entry in entries.flatten() {
            let p = entry.path();
            if !p.to_string_lossy().ends_with(".manifest.json") {
                continue;
            }
            let Ok(text) = fs::read_to_string(&p) else { continue };
            let Ok(m) = serde_json::from_str::<RunManifest>(&text) else { continue };
            if m.outputs.iter().any(|o| o.sha256 == sha) {
                self.upstream.insert((p.display().to_string(), sha256_hex(text.as_bytes())));
            }
        }
    }

    fn finish(self, out: &Path, outputs: &[PathBuf]) -> Result<RunManifest> {
        let outputs = outputs
            .iter()
            .map(|p| {
                Ok(FileRecord {
                    path: p.display().to_string(),
                    sha256: hash_file(p)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let manifest = RunManifest {
            command: self.command.to_string(),
            version: VERSION.to_string(),
            seed: self.seed,
            config: self.config,
            inputs: self.inputs,
            upstream: self
                .upstream
                .into_iter()
                .map(|(path, sha256)| FileRecord { path, sha256 })
                .collect(),
            outputs,
            duration_seconds: self.started.elapsed().as_secs_f64(),
        };
        let path = out.join(RunManifest::file_name(self.command));
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        fs::write(&path, text).map_err(|e| runtime(path.display(), e))?;
        info!("{}: done in {:.1}s", manifest.command, manifest.duration_seconds);
        Ok(manifest)
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| runtime(format!("cannot create {}", dir.display()), e))
}

fn write_file(path: PathBuf, bytes: impl AsRef<[u8]>) -> Result<PathBuf> {
    fs::write(&path, bytes).map_err(|e| runtime(path.display(), e))?;
    Ok(path)
}

fn write_with(path: PathBuf, f: impl FnOnce(&mut BufWriter<fs::File>) -> std::io::Result<()>) -> Result<PathBuf> {
    let file = fs::File::create(&path).map_err(|e| runtime(path.display(), e))?;
    let mut w = BufWriter::new(file);
    f(&mut w).and_then(|_| w.flush()).map_err(|e| runtime(path.display(), e))?;
    Ok(path)
}

fn to_json(value: &impl Serialize) -> String {
    serde_json::to_string_pretty(value).expect("artifact serializes")
}

fn load_program(run: &mut Run, path: &Path) -> Result<ConstitutionProgram> {
    let text = run.input(path)?;
    parse_program(&text).map_err(|e| invalid(path.display(), e))
}

fn load_star_map(run: &mut Run, path: &Path) -> Result<StaRMap> {
    let text = run.input(path)?;
    let map: StaRMap = serde_json::from_str(&text).map_err(|e| invalid(path.display(), e))?;
    map.validate().map_err(|e| invalid(path.display(), e))?;
    Ok(map)
}

fn load_flow(run: &mut Run, path: &Path) -> Result<DoubtFlow> {
    let text = run.input(path)?;
    DoubtFlow::from_json(&text).map_err(|e| invalid(path.display(), e))
}

fn load_scenario(run: &mut Run, path: &Path) -> Result<Scenario> {
    let text = run.input(path)?;
    Scenario::from_json(&text).map_err(|e| invalid(path.display(), e))
}

fn load_landscape(run: &mut Run, path: &Path) -> Result<Landscape> {
    run.input(path)?;
    let land = Landscape::load(path).map_err(|e| invalid(path.display(), e))?;
    let csv = path.with_extension("csv");
    if csv.exists() {
        run.input(&csv)?;
    }
    Ok(land)
}

fn load_trajectory(run: &mut Run, path: &Path) -> Result<Trajectory> {
    let text = run.input(path)?;
    serde_json::from_str(&text).map_err(|e| invalid(path.display(), e))
}

fn load_log(run: &mut Run, path: &Path) -> Result<FlightLog> {
    let text = run.input(path)?;
    let log = FlightLog::read_csv(BufReader::new(text.as_bytes())).map_err(|e| invalid(path.display(), e))?;
    log.validate().map_err(|e| invalid(path.display(), e))?;
    Ok(log)
}

/// A map file is either a bare map document or a full scenario.
enum MapSource {
    Map(MapDocument),
    Scenario(Box<Scenario>),
}

fn load_map_source(run: &mut Run, path: &Path) -> Result<MapSource> {
    let text = run.input(path)?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| invalid(path.display(), e))?;
    if value.get("map").is_some() {
        let s = Scenario::from_json(&text).map_err(|e| invalid(path.display(), e))?;
        Ok(MapSource::Scenario(Box::new(s)))
    } else {
        let m = MapDocument::from_json(&text).map_err(|e| invalid(path.display(), e))?;
        Ok(MapSource::Map(m))
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct StarmapArgs {
    /// Map document or scenario JSON.
    pub map: PathBuf,
    pub out: PathBuf,
    /// Defaults to the scenario's sample count, or 100 for a bare map.
    pub samples: Option<usize>,
    /// Overrides the grid block of the map file.
    pub grid: Option<GridSpec>,
    /// Defaults to every tag (for scenarios, every non-vertiport tag).
    pub tags: Vec<String>,
    pub seed: u64,
}

/// Builds a StaR map and writes `starmap.json`.
pub fn cmd_starmap(args: &StarmapArgs) -> Result<RunManifest> {
    let mut run = Run::new("starmap", Some(args.seed), args);
    let (doc, default_tags, default_n) = match load_map_source(&mut run, &args.map)? {
        MapSource::Map(m) => {
            let tags = m.map().tags();
            (m, tags, 100)
        }
        MapSource::Scenario(s) => {
            let tags = s.relation_tags();
            (s.map, tags, s.star_map_samples)
        }
    };
    let tags = if args.tags.is_empty() { default_tags } else { args.tags.clone() };
    let grid = args.grid.unwrap_or(doc.grid);
    let n = args.samples.unwrap_or(default_n);
    let star = build_star_map(&doc.map(), &tags, grid, n, args.seed, StarMapOptions::default())
        .map_err(|e| invalid("starmap", e))?;
    create_dir(&args.out)?;
    let path = write_file(args.out.join("starmap.json"), serde_json::to_string(&star).expect("star map serializes"))?;
    run.finish(&args.out, &[path])
}

#[derive(Debug, Clone, Serialize)]
pub struct LandscapeArgs {
    pub program: PathBuf,
    pub star_map: PathBuf,
    pub velocities: Vec<f64>,
    pub out: PathBuf,
}

/// Evaluates the raw compliance landscape into `raw.{json,csv}` and PGMs.
pub fn cmd_landscape(args: &LandscapeArgs) -> Result<RunManifest> {
    let mut run = Run::new("landscape", None, args);
    let program = load_program(&mut run, &args.program)?;
    let star = load_star_map(&mut run, &args.star_map)?;
    let land = compliance_landscape(&program, &star, &[], &star.grid, &args.velocities)
        .map_err(|e| invalid("landscape", e))?;
    let outputs = land.save(&args.out, "raw").map_err(|e| runtime("landscape", e))?;
    run.finish(&args.out, &outputs)
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainArgs {
    pub logs: Vec<PathBuf>,
    /// Program whose doubt-feature declarations fix the flow's conditioning.
    pub program: PathBuf,
    pub fit: FitConfig,
    pub seed: u64,
    pub out: PathBuf,
}

/// Fits a doubt flow to flight logs; writes `flow.json` and `fit_report.json`.
pub fn cmd_train_doubt(args: &TrainArgs) -> Result<RunManifest> {
    if args.logs.is_empty() {
        return Err(PipelineError::Usage("train-doubt needs at least one log file".into()));
    }
    let mut run = Run::new("train-doubt", Some(args.seed), args);
    let program = load_program(&mut run, &args.program)?;
    let schema = FeatureSchema::from_program(&program).map_err(|e| invalid(args.program.display(), e))?;
    let mut logs = Vec::new();
    for path in &args.logs {
        logs.push((path.display().to_string(), load_log(&mut run, path)?));
    }
    let data = doubt_dataset(&logs);
    info!("train-doubt: {} rows from {} logs", data.rows.len(), logs.len());
    let (flow, report) = fit(&data, &schema, &args.fit, args.seed).map_err(|e| invalid("train-doubt", e))?;
    create_dir(&args.out)?;
    let outputs = vec![
        write_file(args.out.join("flow.json"), flow.to_json())?,
        write_file(args.out.join("fit_report.json"), to_json(&report))?,
    ];
    run.finish(&args.out, &outputs)
}

#[derive(Debug, Clone, Serialize)]
pub struct CalibrateArgs {
    /// Raw landscape metadata file.
    pub landscape: PathBuf,
    pub flow: PathBuf,
    /// Program the flow must serve.
    pub program: PathBuf,
    pub tuning: usize,
    pub samples: usize,
    pub offset_pool: Option<usize>,
    pub seed: u64,
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub samples: usize,
    pub mean_standard_error: f64,
    pub max_standard_error: f64,
}

/// Doubt-calibrates a raw landscape at the eight compass headings. Writes
/// `calibrated.{json,csv}`, PGMs, `standard_error.csv` and
/// `calibration_report.json`.
pub fn cmd_calibrate(args: &CalibrateArgs) -> Result<RunManifest> {
    let mut run = Run::new("calibrate", Some(args.seed), args);
    let raw = load_landscape(&mut run, &args.landscape)?;
    let flow = load_flow(&mut run, &args.flow)?;
    let program = load_program(&mut run, &args.program)?;
    flow.schema
        .check_program(&program)
        .map_err(|e| invalid("flow does not match the program's doubt features", e))?;
    let options = CalibrationOptions {
        samples: args.samples,
        seed: args.seed,
        offset_pool: args.offset_pool,
    };
    let cal = calibrate_directional(&raw, &flow, args.tuning, &compass_headings(), &options)
        .map_err(|e| invalid("calibrate", e))?;
    let mut outputs = cal.landscape.save(&args.out, "calibrated").map_err(|e| runtime("calibrate", e))?;
    let land = &cal.landscape;
    let cells = land.grid.width * land.grid.height;
    outputs.push(write_with(args.out.join("standard_error.csv"), |w| {
        writeln!(w, "level,heading,cell,standard_error")?;
        for level in 0..land.velocity_levels.len() {
            for h in 0..land.heading_count() {
                let base = land.layer_index(level, h) * cells;
                for c in 0..cells {
                    writeln!(w, "{level},{h},{c},{}", cal.standard_error[base + c])?;
                }
            }
        }
        Ok(())
    })?);
    let se = &cal.standard_error;
    let report = CalibrationReport {
        samples: args.samples,
        mean_standard_error: se.iter().sum::<f64>() / se.len().max(1) as f64,
        max_standard_error: se.iter().copied().fold(0.0, f64::max),
    };
    outputs.push(write_file(args.out.join("calibration_report.json"), to_json(&report))?);
    run.finish(&args.out, &outputs)
}

#[derive(Debug, Clone, Serialize)]
pub struct PlanArgs {
    /// Landscape metadata file, raw or calibrated.
    pub landscape: PathBuf,
    /// Supplies start and goal unless given explicitly.
    pub scenario: Option<PathBuf>,
    pub start: Option<Vec2>,
    pub goal: Option<Vec2>,
    pub start_level: usize,
    pub planner: PlannerConfig,
    /// Plan on travel time alone, ignoring compliance values.
    pub compliance_blind: bool,
    /// Output stem.
    pub name: String,
    pub out: PathBuf,
}

/// Plans a trajectory; writes `<name>.json` and `<name>.csv`.
pub fn cmd_plan(args: &PlanArgs) -> Result<RunManifest> {
    let mut run = Run::new("plan", None, args);
    let land = load_landscape(&mut run, &args.landscape)?;
    let scenario = args.scenario.as_deref().map(|p| load_scenario(&mut run, p)).transpose()?;
    let pick = |given: Option<Vec2>, from: Option<Vec2>, what: &str| {
        given
            .or(from)
            .ok_or_else(|| PipelineError::Usage(format!("plan needs --{what} or --scenario")))
    };
    let start = pick(args.start, scenario.as_ref().map(|s| s.start), "start")?;
    let goal = pick(args.goal, scenario.as_ref().map(|s| s.goal), "goal")?;
    let locate = |p: Vec2, what: &str| {
        land.grid
            .locate(p)
            .ok_or_else(|| PipelineError::Validation(format!("{what} ({}, {}) lies outside the landscape", p.x, p.y)))
    };
    let start_cell = locate(start, "start")?;
    let goal_cell = locate(goal, "goal")?;
    let graph = build_graph(&land, &args.planner).map_err(|e| invalid("planner config", e))?;
    let node = Node {
        cell: start_cell,
        level: args.start_level,
    };
    let t = if args.compliance_blind {
        plan_compliance_blind(&graph, node, goal_cell)
    } else {
        plan(&graph, node, goal_cell)
    }
    .map_err(|e| runtime("plan", e))?;
    create_dir(&args.out)?;
    let outputs = vec![
        write_file(args.out.join(format!("{}.json", args.name)), to_json(&t))?,
        write_with(args.out.join(format!("{}.csv", args.name)), |w| t.write_csv(w))?,
    ];
    run.finish(&args.out, &outputs)
}

#[derive(Debug, Clone, Serialize)]
pub enum FlyMode {
    /// Fly a planned trajectory once with the scenario's tuning unless given.
    Mission { trajectory: PathBuf, tuning: Option<usize> },
    /// Doubt-training figure-eight flights for every (tuning, speed).
    FigureEight {
        speeds: Vec<f64>,
        tunings: Vec<usize>,
        laps: usize,
    },
}

#[derive(Debug, Clone, Serialize)]
pub struct FlyArgs {
    pub scenario: PathBuf,
    pub mode: FlyMode,
    pub seed: u64,
    pub out: PathBuf,
}

/// Writes `flight.csv`, or one `figure8_t<T>_v<V>.csv` per flight.
pub fn cmd_fly(args: &FlyArgs) -> Result<RunManifest> {
    let mut run = Run::new("fly", Some(args.seed), args);
    let scenario = load_scenario(&mut run, &args.scenario)?;
    let mut logs = Vec::new();
    match &args.mode {
        FlyMode::Mission { trajectory, tuning } => {
            let t = load_trajectory(&mut run, trajectory)?;
            let tuning = tuning.unwrap_or(scenario.tuning);
            let r = execute_mission(&t, &scenario.agent, &scenario, tuning, args.seed, None)
                .map_err(|e| invalid("fly", e))?;
            info!("fly: outcome {:?}", r.log.outcome);
            logs.push(("flight.csv".to_string(), r.log));
        }
        FlyMode::FigureEight { speeds, tunings, laps } => {
            let flown = fly_figure_eight(&scenario.agent, speeds, tunings, *laps, args.seed)
                .map_err(|e| invalid("fly", e))?;
            let names = tunings.iter().flat_map(|t| speeds.iter().map(move |v| format!("figure8_t{t}_v{v}.csv")));
            logs.extend(names.zip(flown));
        }
    }
    create_dir(&args.out)?;
    let outputs = logs
        .iter()
        .map(|(name, log)| write_with(args.out.join(name), |w| log.write_csv(w)))
        .collect::<Result<Vec<_>>>()?;
    run.finish(&args.out, &outputs)
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentArgs {
    pub scenario: PathBuf,
    pub program: PathBuf,
    pub star_map: PathBuf,
    pub flow: PathBuf,
    /// Experiment configuration JSON; defaults apply to missing fields.
    pub config: Option<PathBuf>,
    pub repetitions: Option<usize>,
    /// Also write every flight log and compliance trace.
    pub write_flights: bool,
    pub seed: u64,
    pub out: PathBuf,
}

fn mode_name(m: VelocityMode) -> String {
    match m {
        VelocityMode::Fixed { speed, .. } => format!("v{speed}"),
        VelocityMode::Free => "free".into(),
    }
}

fn planner_name(p: PlannerKind) -> &'static str {
    match p {
        PlannerKind::Baseline => "baseline",
        PlannerKind::Coco => "coco",
    }
}

/// Runs the baseline against the doubt-calibrated planner. Writes
/// `report.json`, one trajectory CSV per plan and, when asked, every flight
/// log and compliance trace under `flights/`.
pub fn cmd_experiment(args: &ExperimentArgs) -> Result<(ExperimentReport, RunManifest)> {
    let mut run = Run::new("experiment", Some(args.seed), args);
    let scenario = load_scenario(&mut run, &args.scenario)?;
    let program = load_program(&mut run, &args.program)?;
    let star = load_star_map(&mut run, &args.star_map)?;
    let flow = load_flow(&mut run, &args.flow)?;
    let mut config = match &args.config {
        Some(p) => {
            let text = run.input(p)?;
            serde_json::from_str::<ExperimentConfig>(&text).map_err(|e| invalid(p.display(), e))?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(r) = args.repetitions {
        config.repetitions = r;
    }
    run.config["resolved"] = serde_json::to_value(&config).expect("config serializes");
    let out = run_comparison(&scenario, &program, &star, &flow, &config, args.seed)
        .map_err(|e| invalid("experiment", e))?;
    create_dir(&args.out)?;
    let mut outputs = vec![write_file(args.out.join("report.json"), to_json(&out.report))?];
    for (mode, planner, t) in &out.plans {
        let name = format!("plan_{}_{}.csv", mode_name(*mode), planner_name(*planner));
        outputs.push(write_with(args.out.join(name), |w| t.write_csv(w))?);
    }
    if args.write_flights {
        let dir = args.out.join("flights");
        create_dir(&dir)?;
        for (s, r) in &out.missions {
            let stem = format!("{}_{}_r{}", mode_name(s.velocity), planner_name(s.planner), s.repetition);
            outputs.push(write_with(dir.join(format!("{stem}.csv")), |w| r.log.write_csv(w))?);
            outputs.push(write_with(dir.join(format!("{stem}_compliance.csv")), |w| {
                writeln!(w, "time,compliance")?;
                for (t, p) in &r.compliance {
                    writeln!(w, "{t},{p}")?;
                }
                Ok(())
            })?);
        }
    }
    let manifest = run.finish(&args.out, &outputs)?;
    Ok((out.report, manifest))
}

#[derive(Debug, Clone, Serialize)]
pub struct ValidateArgs {
    pub log: PathBuf,
    pub program: PathBuf,
    pub star_map: PathBuf,
    pub flow: PathBuf,
    pub samples: usize,
    pub doubt_samples: usize,
    pub measurement_std: f64,
    pub threshold: f64,
    pub seed: u64,
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationSummary {
    pub rows: usize,
    pub mean_compliance: Option<f64>,
    pub min_compliance: Option<f64>,
    pub alarms: usize,
    pub first_alarm: Option<f64>,
}

/// Online compliance over a flight log. Each row's belief is the commanded
/// position shifted by the flow's mean error, with the flow's error
/// covariance plus measurement noise. Writes `compliance.csv`, `alarms.jsonl`
/// and `validation.json`.
pub fn cmd_validate(args: &ValidateArgs) -> Result<(ValidationSummary, RunManifest)> {
    let mut run = Run::new("validate", Some(args.seed), args);
    let log = load_log(&mut run, &args.log)?;
    let program = load_program(&mut run, &args.program)?;
    let star = load_star_map(&mut run, &args.star_map)?;
    let flow = load_flow(&mut run, &args.flow)?;
    flow.schema
        .check_program(&program)
        .map_err(|e| invalid("flow does not match the program's doubt features", e))?;
    let evaluator = LandscapeEvaluator::new(&program).map_err(|e| invalid(args.program.display(), e))?;
    let headings = compass_headings();
    let mut speeds: Vec<f64> = log.rows.iter().map(|r| r.speed).collect();
    speeds.sort_by(f64::total_cmp);
    speeds.dedup();
    let tunings: BTreeSet<usize> = log.rows.iter().map(|r| r.tuning).collect();
    let mut tables = Vec::new();
    for &t in &tunings {
        let table = DoubtCovariance::from_flow(&flow, t, &speeds, &headings, args.doubt_samples, stream_seed(args.seed, &[t as u64]))
            .map_err(|e| invalid("validate", e))?;
        tables.push((t, table));
    }
    let mut trace = Vec::with_capacity(log.rows.len());
    for (k, row) in log.rows.iter().enumerate() {
        let doubt = &tables.iter().find(|(t, _)| *t == row.tuning).expect("table per tuning").1;
        let monitor = ComplianceMonitor {
            evaluator: &evaluator,
            star_map: &star,
            doubt,
            measurement_std: args.measurement_std,
            samples: args.samples,
            threshold: args.threshold,
            horizon: 1,
        };
        let seed = stream_seed(args.seed, &[1 << 32, k as u64]);
        let p = monitor
            .evaluate(Vec2::from(row.desired), row.speed, row.heading, seed)
            .map_err(|e| runtime("validate", e))?;
        trace.push((row.time, p));
    }
    let alarms = compliance_alarm(&trace, args.threshold).map_err(|e| invalid("validate", e))?;
    let values: Vec<f64> = trace.iter().map(|c| c.1).collect();
    let summary = ValidationSummary {
        rows: values.len(),
        mean_compliance: (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64),
        min_compliance: values.iter().copied().reduce(f64::min),
        alarms: alarms.len(),
        first_alarm: alarms.first().map(|a| a.time),
    };
    create_dir(&args.out)?;
    let outputs = vec![
        write_with(args.out.join("compliance.csv"), |w| {
            writeln!(w, "time,compliance")?;
            for (t, p) in &trace {
                writeln!(w, "{t},{p}")?;
            }
            Ok(())
        })?,
        write_with(args.out.join("alarms.jsonl"), |w| write_alarm_events(w, &alarms))?,
        write_file(args.out.join("validation.json"), to_json(&summary))?,
    ];
    let manifest = run.finish(&args.out, &outputs)?;
    Ok((summary, manifest))
}
