use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use ruleflight::flow::FitConfig;
use ruleflight::geometry::Vec2;
use ruleflight::grid::GridSpec;
use ruleflight::pipeline::{self, PipelineError, RunManifest};
use ruleflight::planner::PlannerConfig;
use ruleflight::sim::{PlannerKind, VelocityMode};

/// Compliance landscapes, doubt-aware planning and simulated flights for a
/// planar drone testbed.
#[derive(Debug, Parser)]
#[command(name = "ruleflight", version)]
struct Cli {
    /// Root seed; every random stream of the command derives from it.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Cap on worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build a StaR map from a map document or scenario file.
    Starmap(StarmapCmd),
    /// Evaluate the raw compliance landscape of a program.
    Landscape(LandscapeCmd),
    /// Fit a doubt flow to flight logs.
    TrainDoubt(TrainCmd),
    /// Doubt-calibrate a raw landscape.
    Calibrate(CalibrateCmd),
    /// Plan a trajectory on a landscape.
    Plan(PlanCmd),
    /// Fly a trajectory or the figure-eight training flights.
    Fly(FlyCmd),
    /// Compare the baseline and calibrated planners in simulation.
    Experiment(ExperimentCmd),
    /// Online compliance over a flight log.
    Validate(ValidateCmd),
}

fn parse_pair(s: &str) -> Result<Vec2, String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("`{p}`: {e}")))
        .collect::<Result<_, _>>()?;
    match v[..] {
        [x, y] => Ok(Vec2::new(x, y)),
        _ => Err("expected x,y".into()),
    }
}

fn parse_grid(s: &str) -> Result<GridSpec, String> {
    let p: Vec<&str> = s.split(',').map(str::trim).collect();
    if p.len() != 5 {
        return Err("expected origin_x,origin_y,cell_size,width,height".into());
    }
    let f = |i: usize| p[i].parse::<f64>().map_err(|e| format!("`{}`: {e}", p[i]));
    let u = |i: usize| p[i].parse::<usize>().map_err(|e| format!("`{}`: {e}", p[i]));
    let g = GridSpec::new([f(0)?, f(1)?], f(2)?, u(3)?, u(4)?);
    if g.is_valid() {
        Ok(g)
    } else {
        Err("grid must have positive size and cell size".into())
    }
}

#[derive(Debug, Args)]
struct StarmapCmd {
    #[arg(long)]
    map: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Perturbed map samples.
    #[arg(long)]
    samples: Option<usize>,
    /// origin_x,origin_y,cell_size,width,height
    #[arg(long, value_parser = parse_grid)]
    grid: Option<GridSpec>,
    /// Restrict to these tags (repeatable).
    #[arg(long = "tag")]
    tags: Vec<String>,
}

#[derive(Debug, Args)]
struct LandscapeCmd {
    #[arg(long)]
    program: PathBuf,
    #[arg(long)]
    star_map: PathBuf,
    /// Velocity levels, m/s.
    #[arg(long, value_delimiter = ',', default_values_t = [0.2, 0.5, 1.0])]
    velocities: Vec<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct TrainCmd {
    /// Program declaring the doubt features.
    #[arg(long)]
    program: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = FitConfig::default().learning_rate)]
    learning_rate: f64,
    #[arg(long, default_value_t = FitConfig::default().batch_size)]
    batch_size: usize,
    #[arg(long, default_value_t = FitConfig::default().max_epochs)]
    max_epochs: usize,
    #[arg(long, default_value_t = FitConfig::default().patience)]
    patience: usize,
    #[arg(long, default_value_t = FitConfig::default().validation_fraction)]
    validation_fraction: f64,
    #[arg(long, default_value_t = FitConfig::default().layers)]
    layers: usize,
    #[arg(long, default_value_t = FitConfig::default().hidden)]
    hidden: usize,
    /// Flight log CSV files.
    #[arg(required = true)]
    logs: Vec<PathBuf>,
}

#[derive(Debug, Args)]
struct CalibrateCmd {
    /// Raw landscape metadata (.json).
    #[arg(long)]
    landscape: PathBuf,
    #[arg(long)]
    flow: PathBuf,
    #[arg(long)]
    program: PathBuf,
    #[arg(long, default_value_t = 0)]
    tuning: usize,
    /// Monte-Carlo samples per value.
    #[arg(long, default_value_t = 400)]
    samples: usize,
    /// Shared offset pool size per layer; 0 samples the flow for every cell.
    #[arg(long, default_value_t = 8192)]
    offset_pool: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct PlanCmd {
    /// Landscape metadata (.json), raw or calibrated.
    #[arg(long)]
    landscape: PathBuf,
    #[arg(long)]
    scenario: Option<PathBuf>,
    #[arg(long, value_parser = parse_pair)]
    start: Option<Vec2>,
    #[arg(long, value_parser = parse_pair)]
    goal: Option<Vec2>,
    #[arg(long, default_value_t = 0)]
    start_level: usize,
    #[arg(long, default_value_t = PlannerConfig::default().alpha)]
    alpha: f64,
    /// Travel-time weight.
    #[arg(long, default_value_t = 1.0)]
    beta: f64,
    #[arg(long, default_value_t = PlannerConfig::default().p_floor)]
    p_floor: f64,
    #[arg(long, default_value_t = PlannerConfig::default().p_cut)]
    p_cut: f64,
    /// Keep the start velocity level for the whole path.
    #[arg(long)]
    no_velocity_switch: bool,
    #[arg(long, default_value_t = PlannerConfig::default().switch_time)]
    switch_time: f64,
    /// Ignore compliance and minimize travel time.
    #[arg(long)]
    compliance_blind: bool,
    #[arg(long, default_value = "trajectory")]
    name: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct FlyCmd {
    #[arg(long)]
    scenario: PathBuf,
    /// Trajectory JSON written by `plan`.
    #[arg(long, required_unless_present = "figure_eight", conflicts_with = "figure_eight")]
    trajectory: Option<PathBuf>,
    #[arg(long)]
    tuning: Option<usize>,
    /// Fly the doubt-training figure-eight instead of a trajectory.
    #[arg(long)]
    figure_eight: bool,
    #[arg(long, value_delimiter = ',', default_values_t = [0.2, 0.5, 1.0])]
    speeds: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_values_t = [0, 1, 2])]
    tunings: Vec<usize>,
    #[arg(long, default_value_t = 16)]
    laps: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ExperimentCmd {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long)]
    program: PathBuf,
    #[arg(long)]
    star_map: PathBuf,
    #[arg(long)]
    flow: PathBuf,
    /// Experiment configuration JSON.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    repetitions: Option<usize>,
    /// Write every flight log and compliance trace.
    #[arg(long)]
    write_flights: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ValidateCmd {
    #[arg(long)]
    log: PathBuf,
    #[arg(long)]
    program: PathBuf,
    #[arg(long)]
    star_map: PathBuf,
    #[arg(long)]
    flow: PathBuf,
    /// Belief samples per evaluation.
    #[arg(long, default_value_t = 64)]
    samples: usize,
    /// Flow draws per doubt-table entry.
    #[arg(long, default_value_t = 2000)]
    doubt_samples: usize,
    #[arg(long, default_value_t = 0.005)]
    measurement_std: f64,
    #[arg(long, default_value_t = 0.9)]
    threshold: f64,
    #[arg(long)]
    out: PathBuf,
}

fn print_outputs(m: &RunManifest) {
    for o in &m.outputs {
        println!("{}  {}", o.sha256, o.path);
    }
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    let seed = cli.seed;
    match cli.command {
        Command::Starmap(c) => {
            let m = pipeline::cmd_starmap(&pipeline::StarmapArgs {
                map: c.map,
                out: c.out,
                samples: c.samples,
                grid: c.grid,
                tags: c.tags,
                seed,
            })?;
            print_outputs(&m);
        }
        Command::Landscape(c) => {
            let m = pipeline::cmd_landscape(&pipeline::LandscapeArgs {
                program: c.program,
                star_map: c.star_map,
                velocities: c.velocities,
                out: c.out,
            })?;
            print_outputs(&m);
        }
        Command::TrainDoubt(c) => {
            let m = pipeline::cmd_train_doubt(&pipeline::TrainArgs {
                logs: c.logs,
                program: c.program,
                fit: FitConfig {
                    learning_rate: c.learning_rate,
                    batch_size: c.batch_size,
                    max_epochs: c.max_epochs,
                    patience: c.patience,
                    validation_fraction: c.validation_fraction,
                    layers: c.layers,
                    hidden: c.hidden,
                },
                seed,
                out: c.out,
            })?;
            print_outputs(&m);
        }
        Command::Calibrate(c) => {
            let m = pipeline::cmd_calibrate(&pipeline::CalibrateArgs {
                landscape: c.landscape,
                flow: c.flow,
                program: c.program,
                tuning: c.tuning,
                samples: c.samples,
                offset_pool: (c.offset_pool > 0).then_some(c.offset_pool),
                seed,
                out: c.out,
            })?;
            print_outputs(&m);
        }
        Command::Plan(c) => {
            let m = pipeline::cmd_plan(&pipeline::PlanArgs {
                landscape: c.landscape,
                scenario: c.scenario,
                start: c.start,
                goal: c.goal,
                start_level: c.start_level,
                planner: PlannerConfig {
                    alpha: c.alpha,
                    beta: vec![c.beta],
                    p_floor: c.p_floor,
                    p_cut: c.p_cut,
                    velocity_switch: !c.no_velocity_switch,
                    switch_time: c.switch_time,
                },
                compliance_blind: c.compliance_blind,
                name: c.name,
                out: c.out,
            })?;
            print_outputs(&m);
        }
        Command::Fly(c) => {
            let mode = match c.trajectory {
                Some(trajectory) => pipeline::FlyMode::Mission {
                    trajectory,
                    tuning: c.tuning,
                },
                None => pipeline::FlyMode::FigureEight {
                    speeds: c.speeds,
                    tunings: c.tunings,
                    laps: c.laps,
                },
            };
            let m = pipeline::cmd_fly(&pipeline::FlyArgs {
                scenario: c.scenario,
                mode,
                seed,
                out: c.out,
            })?;
            print_outputs(&m);
        }
        Command::Experiment(c) => {
            let (report, m) = pipeline::cmd_experiment(&pipeline::ExperimentArgs {
                scenario: c.scenario,
                program: c.program,
                star_map: c.star_map,
                flow: c.flow,
                config: c.config,
                repetitions: c.repetitions,
                write_flights: c.write_flights,
                seed,
                out: c.out,
            })?;
            println!("{:<18} {:>7} {:>7} {:>9} {:>11}", "group", "flights", "crashed", "mean time", "compliance");
            for g in &report.groups {
                let name = format!(
                    "{} {}",
                    match g.velocity {
                        VelocityMode::Fixed { speed, .. } => format!("{speed} m/s"),
                        VelocityMode::Free => "free".into(),
                    },
                    match g.planner {
                        PlannerKind::Baseline => "baseline",
                        PlannerKind::Coco => "coco",
                    }
                );
                let opt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.3}"));
                println!(
                    "{:<18} {:>7} {:>7} {:>9} {:>11}",
                    name,
                    g.flights,
                    g.crashed,
                    opt(g.mean_completion_time),
                    opt(g.mean_compliance)
                );
            }
            print_outputs(&m);
        }
        Command::Validate(c) => {
            let (summary, m) = pipeline::cmd_validate(&pipeline::ValidateArgs {
                log: c.log,
                program: c.program,
                star_map: c.star_map,
                flow: c.flow,
                samples: c.samples,
                doubt_samples: c.doubt_samples,
                measurement_std: c.measurement_std,
                threshold: c.threshold,
                seed,
                out: c.out,
            })?;
            println!("{}", serde_json::to_string_pretty(&summary).unwrap_or_default());
            print_outputs(&m);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot configure {n} threads: {e}");
            return ExitCode::from(3);
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
