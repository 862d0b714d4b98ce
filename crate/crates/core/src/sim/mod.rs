//! Discrete-time planar flight simulator: waypoint tracking with structured
//! Gaussian tracking noise, figure-eight doubt-training flights, missions with
//! crash detection, and the planner comparison experiment.

mod experiment;
mod scenario;

pub use experiment::{
    run_comparison, ComplianceMonitor, DoubtCovariance, ExperimentConfig, ExperimentOutput, ExperimentReport,
    FlightSummary, GroupSummary, MissionResult, PlanSummary, PlannerKind, VelocityMode,
};
pub use scenario::{testbed_scenario, Scenario};

use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calibration::{stream_seed, CalibrationError};
use crate::flow::{DoubtDataset, DoubtFeatureVector, DoubtRow, FlowError};
use crate::geometry::{GeometryError, Vec2};
use crate::lang::LangError;
use crate::planner::{PlannerError, Trajectory, Waypoint};

/// Simulation step, seconds.
pub const DEFAULT_DT: f64 = 0.1;
/// Distance to the final waypoint that counts as arrival, meters.
pub const CAPTURE_RADIUS: f64 = 0.05;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("malformed flight log: {0}")]
    Log(String),
    #[error("malformed scenario: {0}")]
    Scenario(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Lang(#[from] LangError),
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Calibration(#[from] CalibrationError),
    #[error(transparent)]
    Planner(#[from] PlannerError),
}

/// Tracking-noise profile of one controller tuning. The error standard
/// deviation across the heading is `sigma0 + sigma1 * v`; along the heading it
/// is `anisotropy` times that.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseProfile {
    pub sigma0: f64,
    pub sigma1: f64,
    pub anisotropy: f64,
}

impl NoiseProfile {
    pub fn scaled(&self, k: f64) -> Self {
        Self {
            sigma0: self.sigma0 * k,
            sigma1: self.sigma1 * k,
            anisotropy: self.anisotropy,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentModel {
    pub dt: f64,
    pub capture_radius: f64,
    /// One profile per controller tuning.
    pub profiles: Vec<NoiseProfile>,
    /// Steps the agent may hover at the final waypoint before the mission
    /// counts as timed out.
    pub hover_limit: usize,
}

impl AgentModel {
    /// Tuning 0 is the reference; tuning 1 is tighter and tuning 2 looser.
    pub fn testbed() -> Self {
        let base = NoiseProfile {
            sigma0: 0.008,
            sigma1: 0.052,
            anisotropy: 1.6,
        };
        Self {
            dt: DEFAULT_DT,
            capture_radius: CAPTURE_RADIUS,
            profiles: vec![base, base.scaled(0.8), base.scaled(1.25)],
            hover_limit: 200,
        }
    }

    pub fn zero_noise(tunings: usize) -> Self {
        Self {
            profiles: vec![
                NoiseProfile {
                    sigma0: 0.0,
                    sigma1: 0.0,
                    anisotropy: 1.0,
                };
                tunings
            ],
            ..Self::testbed()
        }
    }

    /// Same model with every noise scale multiplied by `k`.
    pub fn scaled(&self, k: f64) -> Self {
        Self {
            profiles: self.profiles.iter().map(|p| p.scaled(k)).collect(),
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(SimError::InvalidArgument("time step must be positive".into()));
        }
        if !(self.capture_radius > 0.0) {
            return Err(SimError::InvalidArgument("capture radius must be positive".into()));
        }
        if self.profiles.is_empty() {
            return Err(SimError::InvalidArgument("at least one tuning profile is required".into()));
        }
        for (i, p) in self.profiles.iter().enumerate() {
            if !(p.sigma0 >= 0.0 && p.sigma1 >= 0.0 && p.anisotropy >= 1.0)
                || !(p.sigma0.is_finite() && p.sigma1.is_finite() && p.anisotropy.is_finite())
            {
                return Err(SimError::InvalidArgument(format!(
                    "tuning {i}: need finite sigma0, sigma1 >= 0 and anisotropy >= 1"
                )));
            }
        }
        Ok(())
    }

    fn profile(&self, tuning: usize) -> &NoiseProfile {
        &self.profiles[tuning]
    }

    /// (along, across) standard deviations.
    pub fn scales(&self, tuning: usize, speed: f64) -> (f64, f64) {
        let p = self.profile(tuning);
        let s = p.sigma0 + p.sigma1 * speed;
        (p.anisotropy * s, s)
    }

    /// Covariance of the tracking error at a commanded speed and heading.
    pub fn covariance(&self, tuning: usize, speed: f64, heading: f64) -> [[f64; 2]; 2] {
        let (a, b) = self.scales(tuning, speed);
        let (s, c) = heading.sin_cos();
        let (a2, b2) = (a * a, b * b);
        [
            [c * c * a2 + s * s * b2, c * s * (a2 - b2)],
            [c * s * (a2 - b2), s * s * a2 + c * c * b2],
        ]
    }

    /// Tracking error (desired minus actual).
    pub fn sample_error<R: Rng + ?Sized>(&self, tuning: usize, speed: f64, heading: f64, rng: &mut R) -> [f64; 2] {
        let (a, b) = self.scales(tuning, speed);
        let n0: f64 = rng.sample(StandardNormal);
        let n1: f64 = rng.sample(StandardNormal);
        let (along, across) = (a * n0, b * n1);
        let (s, c) = heading.sin_cos();
        [along * c - across * s, along * s + across * c]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    /// Actual position.
    pub position: Vec2,
    /// Commanded (desired) position.
    pub reference: Vec2,
    pub velocity: f64,
    pub heading: f64,
    pub time: f64,
}

impl AgentState {
    pub fn at(p: Vec2) -> Self {
        Self {
            position: p,
            reference: p,
            velocity: 0.0,
            heading: 0.0,
            time: 0.0,
        }
    }
}

/// One step toward `target` at `speed`: the reference moves at most
/// `speed * dt` toward the target and the actual position is the reference
/// minus a tracking error drawn for the current tuning, speed and heading.
pub fn step<R: Rng + ?Sized>(
    state: &AgentState,
    target: Vec2,
    speed: f64,
    tuning: usize,
    model: &AgentModel,
    rng: &mut R,
) -> AgentState {
    let d = target - state.reference;
    let dist = d.norm();
    let (reference, heading) = if dist > 0.0 {
        let travel = (speed * model.dt).min(dist);
        (state.reference + d * (travel / dist), d.angle())
    } else {
        (state.reference, state.heading)
    };
    let e = model.sample_error(tuning, speed, heading, rng);
    AgentState {
        position: Vec2::new(reference.x - e[0], reference.y - e[1]),
        reference,
        velocity: speed,
        heading,
        time: state.time + model.dt,
    }
}

/// Time-exact progress along a polyline whose legs have their own speeds.
#[derive(Debug, Clone)]
struct Follower {
    points: Vec<Vec2>,
    /// Speed of the leg ending at each point (entry 0 unused).
    speeds: Vec<f64>,
    leg: usize,
    along: f64,
}

impl Follower {
    fn new(points: Vec<Vec2>, speeds: Vec<f64>) -> Self {
        Self {
            points,
            speeds,
            leg: 1,
            along: 0.0,
        }
    }

    fn finished(&self) -> bool {
        self.leg >= self.points.len()
    }

    fn position(&self) -> Vec2 {
        if self.finished() {
            return *self.points.last().unwrap();
        }
        let (a, b) = (self.points[self.leg - 1], self.points[self.leg]);
        let len = a.dist(b);
        if len == 0.0 {
            a
        } else {
            a + (b - a) * (self.along / len)
        }
    }

    /// Speed and heading of the current leg, or of the last leg once finished.
    fn leg_state(&self) -> (f64, f64) {
        let k = self.leg.min(self.points.len() - 1).max(1);
        (self.speeds[k], (self.points[k] - self.points[k - 1]).angle())
    }

    /// Advances by `dt` seconds; returns the speed and heading flown at the end.
    fn advance(&mut self, dt: f64) -> (f64, f64) {
        let mut time = dt;
        while !self.finished() && time > 0.0 {
            let (a, b) = (self.points[self.leg - 1], self.points[self.leg]);
            let len = a.dist(b);
            let speed = self.speeds[self.leg];
            let left = len - self.along;
            if speed <= 0.0 {
                break;
            }
            if left <= speed * time {
                time -= left / speed;
                self.leg += 1;
                self.along = 0.0;
            } else {
                self.along += speed * time;
                time = 0.0;
            }
        }
        let state = self.leg_state();
        if self.finished() {
            (0.0, state.1)
        } else {
            state
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub time: f64,
    pub desired: [f64; 2],
    pub actual: [f64; 2],
    /// Commanded speed, m/s.
    pub speed: f64,
    pub heading: f64,
    pub tuning: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Outcome {
    Completed { time: f64 },
    Crashed { time: f64, x: f64, y: f64, obstacle: u32 },
    TimedOut { time: f64 },
}

impl Outcome {
    pub fn crashed(&self) -> bool {
        matches!(self, Outcome::Crashed { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlightLog {
    pub rows: Vec<LogRow>,
    pub outcome: Outcome,
}

const LOG_HEADER: &str = "time,desired_x,desired_y,actual_x,actual_y,speed,heading,tuning";

impl FlightLog {
    /// CSV with the outcome as a leading `# outcome ` JSON comment.
    pub fn write_csv<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(w, "# outcome {}", serde_json::to_string(&self.outcome).expect("outcome serializes"))?;
        writeln!(w, "{LOG_HEADER}")?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{}",
                r.time, r.desired[0], r.desired[1], r.actual[0], r.actual[1], r.speed, r.heading, r.tuning
            )?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<FlightLog, SimError> {
        let mut outcome = None;
        let mut rows = Vec::new();
        let mut header = false;
        for (i, line) in r.lines().enumerate() {
            let line = line.map_err(|e| SimError::Log(e.to_string()))?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix("# outcome ") {
                outcome = Some(serde_json::from_str(rest).map_err(|e| SimError::Log(format!("line {}: {e}", i + 1)))?);
                continue;
            }
            if !header {
                if line != LOG_HEADER {
                    return Err(SimError::Log(format!("line {}: expected header `{LOG_HEADER}`", i + 1)));
                }
                header = true;
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 8 {
                return Err(SimError::Log(format!("line {}: expected 8 fields", i + 1)));
            }
            let num = |k: usize| {
                f[k].parse::<f64>()
                    .map_err(|e| SimError::Log(format!("line {}, field {}: {e}", i + 1, k + 1)))
            };
            rows.push(LogRow {
                time: num(0)?,
                desired: [num(1)?, num(2)?],
                actual: [num(3)?, num(4)?],
                speed: num(5)?,
                heading: num(6)?,
                tuning: f[7]
                    .parse()
                    .map_err(|e| SimError::Log(format!("line {}, field 8: {e}", i + 1)))?,
            });
        }
        let outcome = outcome.ok_or_else(|| SimError::Log("missing `# outcome` line".into()))?;
        let log = FlightLog { rows, outcome };
        log.validate()?;
        Ok(log)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.rows.windows(2).any(|w| !(w[1].time > w[0].time)) {
            return Err(SimError::Log("times must be strictly increasing".into()));
        }
        Ok(())
    }

    /// Mean Euclidean tracking error.
    pub fn mean_error(&self) -> f64 {
        let n = self.rows.len().max(1) as f64;
        self.rows
            .iter()
            .map(|r| Vec2::from(r.desired).dist(Vec2::from(r.actual)))
            .sum::<f64>()
            / n
    }
}

/// Training rows (error = desired − actual) from flight logs.
pub fn doubt_dataset(logs: &[(String, FlightLog)]) -> DoubtDataset {
    let mut rows = Vec::new();
    for (_, log) in logs {
        for r in &log.rows {
            rows.push(DoubtRow {
                error: [r.desired[0] - r.actual[0], r.desired[1] - r.actual[1]],
                features: DoubtFeatureVector::new(r.tuning, r.speed, r.heading),
            });
        }
    }
    DoubtDataset {
        rows,
        provenance: logs.iter().map(|(name, _)| name.clone()).collect(),
    }
}

/// Half-width of the figure-eight, meters.
pub const FIGURE_EIGHT_SIZE: f64 = 1.0;
const FIGURE_EIGHT_RESOLUTION: usize = 4000;

/// One lap of the lemniscate of Gerono `(a sin t, a sin t cos t)` around
/// `center`, rotated by `rotation`. Every lap starts and ends at the center.
pub fn figure_eight_lap(center: Vec2, a: f64, rotation: f64) -> Vec<Vec2> {
    let (s, c) = rotation.sin_cos();
    (0..=FIGURE_EIGHT_RESOLUTION)
        .map(|k| {
            let t = std::f64::consts::TAU * k as f64 / FIGURE_EIGHT_RESOLUTION as f64;
            let (x, y) = (a * t.sin(), a * t.sin() * t.cos());
            Vec2::new(center.x + c * x - s * y, center.y + s * x + c * y)
        })
        .collect()
}

pub fn polyline_length(points: &[Vec2]) -> f64 {
    points.windows(2).map(|w| w[0].dist(w[1])).sum()
}

/// Figure-eight flights at every (tuning, speed) pair, `laps` laps each.
/// Logs are ordered by tuning, then speed.
pub fn fly_figure_eight(
    model: &AgentModel,
    speeds: &[f64],
    tunings: &[usize],
    laps: usize,
    seed: u64,
) -> Result<Vec<FlightLog>, SimError> {
    model.validate()?;
    if laps == 0 {
        return Err(SimError::InvalidArgument("at least one lap is required".into()));
    }
    if speeds.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
        return Err(SimError::InvalidArgument("speeds must be positive".into()));
    }
    if let Some(t) = tunings.iter().find(|t| **t >= model.profiles.len()) {
        return Err(SimError::InvalidArgument(format!("no noise profile for tuning {t}")));
    }
    // odd laps are turned a quarter turn so vertical headings get as much
    // coverage as horizontal ones
    let laps_points = [0.0, std::f64::consts::FRAC_PI_2].map(|r| figure_eight_lap(Vec2::new(1.5, 1.5), FIGURE_EIGHT_SIZE, r));
    let mut points = laps_points[0].clone();
    for k in 1..laps {
        points.extend_from_slice(&laps_points[k % 2][1..]);
    }
    let mut logs = Vec::new();
    for &tuning in tunings {
        for (si, &v) in speeds.iter().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, &[tuning as u64, si as u64]));
            let mut follower = Follower::new(points.clone(), vec![v; points.len()]);
            let mut rows = Vec::new();
            let mut time = 0.0;
            while !follower.finished() {
                let (_, heading) = follower.advance(model.dt);
                let desired = follower.position();
                time += model.dt;
                let e = model.sample_error(tuning, v, heading, &mut rng);
                rows.push(LogRow {
                    time,
                    desired: desired.into(),
                    actual: [desired.x - e[0], desired.y - e[1]],
                    speed: v,
                    heading,
                    tuning,
                });
            }
            logs.push(FlightLog {
                rows,
                outcome: Outcome::Completed { time },
            });
        }
    }
    Ok(logs)
}

/// Flies a planned trajectory. `monitor`, when given, evaluates before every
/// step the online compliance of the predicted states over its horizon and
/// logs the smallest value.
pub fn execute_mission(
    trajectory: &Trajectory,
    model: &AgentModel,
    scenario: &Scenario,
    tuning: usize,
    seed: u64,
    monitor: Option<&ComplianceMonitor>,
) -> Result<MissionResult, SimError> {
    model.validate()?;
    if tuning >= model.profiles.len() {
        return Err(SimError::InvalidArgument(format!("no noise profile for tuning {tuning}")));
    }
    let wps: &[Waypoint] = &trajectory.waypoints;
    if wps.is_empty() {
        return Err(SimError::InvalidArgument("trajectory has no waypoints".into()));
    }
    let points: Vec<Vec2> = wps.iter().map(|w| Vec2::new(w.x, w.y)).collect();
    let goal = *points.last().unwrap();
    let mut follower = Follower::new(points, wps.iter().map(|w| w.speed).collect());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut alarm = monitor.map(|m| m.alarm()).transpose()?;
    let mut rows: Vec<LogRow> = Vec::new();
    let mut compliance = Vec::new();
    let mut alarms = Vec::new();
    let mut time = 0.0;
    let mut hover = 0;
    let outcome = loop {
        let (speed, heading) = follower.advance(model.dt);
        let desired = follower.position();
        if let Some(m) = monitor {
            let step_seed = |k: u64| stream_seed(seed, &[rows.len() as u64, k]);
            let mut p = m.evaluate(desired, speed, heading, step_seed(1))?;
            let mut ahead = follower.clone();
            for k in 2..=m.horizon {
                let (v, w) = ahead.advance(model.dt);
                p = p.min(m.evaluate(ahead.position(), v, w, step_seed(k as u64))?);
            }
            compliance.push((time, p));
            if let Some(ev) = alarm.as_mut().and_then(|a| a.update(time, p)) {
                alarms.push(ev);
            }
        }
        time += model.dt;
        let e = model.sample_error(tuning, speed, heading, &mut rng);
        let actual = Vec2::new(desired.x - e[0], desired.y - e[1]);
        rows.push(LogRow {
            time,
            desired: desired.into(),
            actual: actual.into(),
            speed,
            heading,
            tuning,
        });
        if let Some(obstacle) = scenario.crash_at(actual) {
            break Outcome::Crashed {
                time,
                x: actual.x,
                y: actual.y,
                obstacle,
            };
        }
        if follower.finished() {
            if actual.dist(goal) <= model.capture_radius {
                break Outcome::Completed { time };
            }
            hover += 1;
            if hover > model.hover_limit {
                break Outcome::TimedOut { time };
            }
        }
    };
    Ok(MissionResult {
        log: FlightLog { rows, outcome },
        compliance,
        alarms,
    })
}
