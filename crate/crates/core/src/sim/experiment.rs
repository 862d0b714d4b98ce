use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{execute_mission, FlightLog, Outcome, Scenario, SimError};
use crate::calibration::{
    calibrate_directional, online_compliance, stream_seed, AlarmEvent, CalibrationOptions, ComplianceAlarm,
    StateBelief,
};
use crate::flow::{normalize_angle, DoubtFeatureVector, DoubtFlow};
use crate::geometry::{StaRMap, Vec2};
use crate::hash::sha256_hex;
use crate::landscape::Landscape;
use crate::lang::{compliance_landscape, ConstitutionProgram, LandscapeEvaluator};
use crate::planner::{build_graph, compass_headings, plan, Node, PlannerConfig, Trajectory};

/// Mean and covariance of the tracking error on a (speed, heading) table,
/// used to predict the next-state belief during flight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DoubtCovariance {
    pub tuning: usize,
    pub speeds: Vec<f64>,
    pub headings: Vec<f64>,
    /// Speed-major, one entry per (speed, heading).
    pub mean: Vec<[f64; 2]>,
    pub covariance: Vec<[[f64; 2]; 2]>,
}

impl DoubtCovariance {
    /// Moment-matches `samples` flow draws per table entry.
    pub fn from_flow(
        flow: &DoubtFlow,
        tuning: usize,
        speeds: &[f64],
        headings: &[f64],
        samples: usize,
        seed: u64,
    ) -> Result<Self, SimError> {
        if samples < 2 || speeds.is_empty() || headings.is_empty() {
            return Err(SimError::InvalidArgument(
                "doubt table needs speeds, headings and at least two samples".into(),
            ));
        }
        let mut mean = Vec::new();
        let mut covariance = Vec::new();
        for (i, &v) in speeds.iter().enumerate() {
            for (j, &w) in headings.iter().enumerate() {
                let f = DoubtFeatureVector::new(tuning, v, w);
                let draws = flow.sample(samples, &f, stream_seed(seed, &[i as u64, j as u64]))?;
                let n = samples as f64;
                let m = [
                    draws.iter().map(|e| e[0]).sum::<f64>() / n,
                    draws.iter().map(|e| e[1]).sum::<f64>() / n,
                ];
                let mut c = [[0.0; 2]; 2];
                for e in &draws {
                    let d = [e[0] - m[0], e[1] - m[1]];
                    for a in 0..2 {
                        for b in 0..2 {
                            c[a][b] += d[a] * d[b] / (n - 1.0);
                        }
                    }
                }
                mean.push(m);
                covariance.push(c);
            }
        }
        Ok(Self {
            tuning,
            speeds: speeds.to_vec(),
            headings: headings.to_vec(),
            mean,
            covariance,
        })
    }

    /// Nearest speed and (circularly) nearest heading entry.
    pub fn lookup(&self, speed: f64, heading: f64) -> ([f64; 2], [[f64; 2]; 2]) {
        let i = nearest(self.speeds.iter().map(|s| (s - speed).abs()));
        let j = nearest(self.headings.iter().map(|h| normalize_angle(h - heading).abs()));
        let k = i * self.headings.len() + j;
        (self.mean[k], self.covariance[k])
    }
}

fn nearest(dist: impl Iterator<Item = f64>) -> usize {
    dist.enumerate()
        .fold((0, f64::INFINITY), |best, (k, d)| if d < best.1 { (k, d) } else { best })
        .0
}

/// Predicts beliefs over upcoming positions (commanded position shifted by the
/// doubt mean, doubt covariance plus isotropic measurement noise) and
/// evaluates their online compliance.
pub struct ComplianceMonitor<'a> {
    pub evaluator: &'a LandscapeEvaluator,
    pub star_map: &'a StaRMap,
    pub doubt: &'a DoubtCovariance,
    pub measurement_std: f64,
    pub samples: usize,
    pub threshold: f64,
    /// Steps of look-ahead; 1 checks only the next position.
    pub horizon: usize,
}

impl ComplianceMonitor<'_> {
    pub fn alarm(&self) -> Result<ComplianceAlarm, SimError> {
        Ok(ComplianceAlarm::new(self.threshold)?)
    }

    pub fn evaluate(&self, desired: Vec2, speed: f64, heading: f64, seed: u64) -> Result<f64, SimError> {
        let (m, mut c) = self.doubt.lookup(speed, heading);
        let r = self.measurement_std * self.measurement_std;
        c[0][0] += r;
        c[1][1] += r;
        let belief = StateBelief {
            mean: Vec2::new(desired.x - m[0], desired.y - m[1]),
            covariance: c,
            perception: vec![self.evaluator.velocity_fact(speed)],
        };
        Ok(online_compliance(self.evaluator, self.star_map, &belief, self.samples, seed)?.probability)
    }
}

#[derive(Debug, Clone)]
pub struct MissionResult {
    pub log: FlightLog,
    /// `(time, online compliance)` evaluated before each step.
    pub compliance: Vec<(f64, f64)>,
    pub alarms: Vec<AlarmEvent>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub repetitions: usize,
    /// Also run the mode where the planner may switch velocity levels.
    pub free_velocity: bool,
    /// Compliance weight of the calibrated (CoCo) planner.
    pub alpha: f64,
    /// Compliance weight of the raw-landscape baseline.
    pub baseline_alpha: f64,
    pub beta: Vec<f64>,
    pub p_floor: f64,
    pub p_cut: f64,
    pub calibration_samples: usize,
    /// Shared offset pool per calibrated layer; 0 samples the flow per cell.
    pub offset_pool: usize,
    /// Flow draws per entry of the monitor's doubt table.
    pub doubt_table_samples: usize,
    pub monitor: bool,
    pub online_samples: usize,
    pub alarm_threshold: f64,
    pub measurement_std: f64,
    /// Look-ahead steps of the compliance monitor.
    pub monitor_horizon: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            repetitions: 15,
            free_velocity: true,
            alpha: 2.0,
            baseline_alpha: 2.0,
            beta: vec![1.0],
            p_floor: 1e-6,
            p_cut: 1e-3,
            calibration_samples: 400,
            offset_pool: 8192,
            doubt_table_samples: 2000,
            monitor: true,
            online_samples: 64,
            alarm_threshold: 0.9,
            measurement_std: 0.005,
            monitor_horizon: 3,
        }
    }
}

impl ExperimentConfig {
    pub fn planner(&self, alpha: f64, velocity_switch: bool) -> PlannerConfig {
        PlannerConfig {
            alpha,
            beta: self.beta.clone(),
            p_floor: self.p_floor,
            p_cut: self.p_cut,
            velocity_switch,
            ..PlannerConfig::default()
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::InvalidArgument(m.into()));
        if self.repetitions == 0 {
            return bad("repetitions must be at least 1");
        }
        if self.calibration_samples == 0
            || self.online_samples == 0
            || self.doubt_table_samples < 2
            || self.monitor_horizon == 0
        {
            return bad("sample counts must be positive");
        }
        if !(self.measurement_std >= 0.0 && self.measurement_std.is_finite()) {
            return bad("measurement_std must be finite and non-negative");
        }
        self.planner(self.alpha, true).validate()?;
        self.planner(self.baseline_alpha, true).validate()?;
        if self.monitor {
            ComplianceAlarm::new(self.alarm_threshold).map_err(SimError::from)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum VelocityMode {
    Fixed { level: usize, speed: f64 },
    Free,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlannerKind {
    Baseline,
    Coco,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanSummary {
    pub velocity: VelocityMode,
    pub planner: PlannerKind,
    pub total_cost: f64,
    pub compliance_cost: f64,
    pub time_cost: f64,
    pub log_penalty: f64,
    pub duration: f64,
    pub waypoints: usize,
    /// Largest planned speed on waypoints inside the speed-limited tag.
    pub max_speed_over_limit: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlightSummary {
    pub velocity: VelocityMode,
    pub planner: PlannerKind,
    pub repetition: usize,
    pub seed: u64,
    pub outcome: Outcome,
    pub steps: usize,
    pub mean_compliance: Option<f64>,
    pub min_compliance: Option<f64>,
    pub alarms: usize,
    pub first_alarm: Option<f64>,
    /// Largest commanded speed on rows whose actual position lies in the
    /// speed-limited tag.
    pub max_speed_over_limit: Option<f64>,
}

impl FlightSummary {
    /// For crashed flights: whether an alarm was raised before the impact.
    pub fn alarm_before_impact(&self) -> Option<bool> {
        match self.outcome {
            Outcome::Crashed { time, .. } => Some(self.first_alarm.is_some_and(|a| a < time)),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub velocity: VelocityMode,
    pub planner: PlannerKind,
    pub flights: usize,
    pub completed: usize,
    pub crashed: usize,
    pub timed_out: usize,
    pub mean_completion_time: Option<f64>,
    /// Mean over every monitored step of every flight in the group.
    pub mean_compliance: Option<f64>,
    pub crashes_alarmed_before_impact: usize,
    pub max_speed_over_limit: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub scenario: String,
    pub seed: u64,
    pub config: ExperimentConfig,
    /// Content hashes of every input and derived landscape.
    pub inputs: BTreeMap<String, String>,
    pub plans: Vec<PlanSummary>,
    pub groups: Vec<GroupSummary>,
    pub flights: Vec<FlightSummary>,
    pub total_flights: usize,
    pub total_crashes: BTreeMap<String, usize>,
}

impl ExperimentReport {
    pub fn group(&self, velocity: VelocityMode, planner: PlannerKind) -> Option<&GroupSummary> {
        self.groups.iter().find(|g| g.velocity == velocity && g.planner == planner)
    }

    /// Crashes of one planner over the fixed-velocity modes.
    pub fn fixed_crashes(&self, planner: PlannerKind) -> usize {
        self.groups
            .iter()
            .filter(|g| g.planner == planner && matches!(g.velocity, VelocityMode::Fixed { .. }))
            .map(|g| g.crashed)
            .sum()
    }
}

pub struct ExperimentOutput {
    pub report: ExperimentReport,
    pub raw: Landscape,
    pub calibrated: Landscape,
    pub plans: Vec<(VelocityMode, PlannerKind, Trajectory)>,
    pub missions: Vec<(FlightSummary, MissionResult)>,
}

fn planner_name(p: PlannerKind) -> &'static str {
    match p {
        PlannerKind::Baseline => "baseline",
        PlannerKind::Coco => "coco",
    }
}

fn max_speed_over(scenario: &Scenario, points: impl Iterator<Item = (Vec2, f64)>) -> Option<f64> {
    let tag = scenario.speed_limit_tag.as_deref()?;
    points
        .filter(|(p, _)| scenario.over_tag(*p, tag))
        .map(|(_, v)| v)
        .fold(None, |m: Option<f64>, v| Some(m.map_or(v, |m| m.max(v))))
}

/// Plans and flies both planners at every fixed velocity level of the
/// scenario (and in free-velocity mode when configured), `repetitions` flights
/// each. Baseline and calibrated flights of the same repetition share a seed.
pub fn run_comparison(
    scenario: &Scenario,
    program: &ConstitutionProgram,
    star_map: &StaRMap,
    flow: &DoubtFlow,
    config: &ExperimentConfig,
    seed: u64,
) -> Result<ExperimentOutput, SimError> {
    scenario.validate()?;
    config.validate()?;
    flow.schema.check_program(program)?;
    let levels = &scenario.velocity_levels;
    let grid = star_map.grid;
    let raw = compliance_landscape(program, star_map, &[], &grid, levels)?;
    let headings = compass_headings();
    let options = CalibrationOptions {
        samples: config.calibration_samples,
        seed: stream_seed(seed, &[1]),
        offset_pool: (config.offset_pool > 0).then_some(config.offset_pool),
    };
    let calibrated = calibrate_directional(&raw, flow, scenario.tuning, &headings, &options)?.landscape;

    let mut table_speeds = vec![0.0];
    table_speeds.extend_from_slice(levels);
    let doubt = DoubtCovariance::from_flow(
        flow,
        scenario.tuning,
        &table_speeds,
        &headings,
        config.doubt_table_samples,
        stream_seed(seed, &[3]),
    )?;
    let evaluator = LandscapeEvaluator::new(program)?;
    let monitor = ComplianceMonitor {
        evaluator: &evaluator,
        star_map,
        doubt: &doubt,
        measurement_std: config.measurement_std,
        samples: config.online_samples,
        threshold: config.alarm_threshold,
        horizon: config.monitor_horizon,
    };

    let start_cell = grid
        .locate(scenario.start)
        .ok_or_else(|| SimError::Scenario("start lies outside the relation map grid".into()))?;
    let goal_cell = grid
        .locate(scenario.goal)
        .ok_or_else(|| SimError::Scenario("goal lies outside the relation map grid".into()))?;

    let mut modes: Vec<VelocityMode> = levels
        .iter()
        .enumerate()
        .map(|(level, &speed)| VelocityMode::Fixed { level, speed })
        .collect();
    if config.free_velocity {
        modes.push(VelocityMode::Free);
    }

    let mut plans = Vec::new();
    for &mode in &modes {
        let (switch, level) = match mode {
            VelocityMode::Fixed { level, .. } => (false, level),
            VelocityMode::Free => (true, 0),
        };
        for planner in [PlannerKind::Baseline, PlannerKind::Coco] {
            let (land, alpha) = match planner {
                PlannerKind::Baseline => (&raw, config.baseline_alpha),
                PlannerKind::Coco => (&calibrated, config.alpha),
            };
            let graph = build_graph(land, &config.planner(alpha, switch))?;
            let t = plan(&graph, Node { cell: start_cell, level }, goal_cell)?;
            plans.push((mode, planner, t));
        }
    }

    let jobs: Vec<(usize, usize)> = (0..plans.len())
        .flat_map(|p| (0..config.repetitions).map(move |r| (p, r)))
        .collect();
    let missions = jobs
        .par_iter()
        .map(|&(p, rep)| {
            let (mode, planner, ref trajectory) = plans[p];
            let mode_index = modes.iter().position(|m| *m == mode).unwrap_or(0);
            let flight_seed = stream_seed(seed, &[2, mode_index as u64, rep as u64]);
            let result = execute_mission(
                trajectory,
                &scenario.agent,
                scenario,
                scenario.tuning,
                flight_seed,
                config.monitor.then_some(&monitor),
            )?;
            let values: Vec<f64> = result.compliance.iter().map(|c| c.1).collect();
            let summary = FlightSummary {
                velocity: mode,
                planner,
                repetition: rep,
                seed: flight_seed,
                outcome: result.log.outcome,
                steps: result.log.rows.len(),
                mean_compliance: (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64),
                min_compliance: values.iter().copied().reduce(f64::min),
                alarms: result.alarms.len(),
                first_alarm: result.alarms.first().map(|a| a.time),
                max_speed_over_limit: max_speed_over(
                    scenario,
                    result.log.rows.iter().map(|r| (Vec2::from(r.actual), r.speed)),
                ),
            };
            Ok((summary, result))
        })
        .collect::<Result<Vec<_>, SimError>>()?;

    let mut groups = Vec::new();
    for &(mode, planner, _) in &plans {
        let members: Vec<&(FlightSummary, MissionResult)> = missions
            .iter()
            .filter(|(s, _)| s.velocity == mode && s.planner == planner)
            .collect();
        let times: Vec<f64> = members
            .iter()
            .filter_map(|(s, _)| match s.outcome {
                Outcome::Completed { time } => Some(time),
                _ => None,
            })
            .collect();
        let traces: Vec<f64> = members.iter().flat_map(|(_, r)| r.compliance.iter().map(|c| c.1)).collect();
        groups.push(GroupSummary {
            velocity: mode,
            planner,
            flights: members.len(),
            completed: times.len(),
            crashed: members.iter().filter(|(s, _)| s.outcome.crashed()).count(),
            timed_out: members
                .iter()
                .filter(|(s, _)| matches!(s.outcome, Outcome::TimedOut { .. }))
                .count(),
            mean_completion_time: (!times.is_empty()).then(|| times.iter().sum::<f64>() / times.len() as f64),
            mean_compliance: (!traces.is_empty()).then(|| traces.iter().sum::<f64>() / traces.len() as f64),
            crashes_alarmed_before_impact: members
                .iter()
                .filter(|(s, _)| s.alarm_before_impact() == Some(true))
                .count(),
            max_speed_over_limit: members
                .iter()
                .filter_map(|(s, _)| s.max_speed_over_limit)
                .reduce(f64::max),
        });
    }

    let plan_summaries = plans
        .iter()
        .map(|(mode, planner, t)| PlanSummary {
            velocity: *mode,
            planner: *planner,
            total_cost: t.total_cost,
            compliance_cost: t.compliance_cost,
            time_cost: t.time_cost,
            log_penalty: t.log_penalty,
            duration: t.duration,
            waypoints: t.waypoints.len(),
            max_speed_over_limit: max_speed_over(scenario, t.waypoints.iter().map(|w| (Vec2::new(w.x, w.y), w.speed))),
        })
        .collect();

    let mut inputs = BTreeMap::new();
    inputs.insert("scenario".to_string(), sha256_hex(scenario.to_json().as_bytes()));
    inputs.insert("program".to_string(), raw.provenance.program_hash.clone());
    inputs.insert("star_map".to_string(), star_map.content_hash());
    inputs.insert("flow".to_string(), flow.content_hash());
    inputs.insert("raw_landscape".to_string(), raw.content_hash());
    inputs.insert("calibrated_landscape".to_string(), calibrated.content_hash());

    let mut total_crashes = BTreeMap::new();
    for planner in [PlannerKind::Baseline, PlannerKind::Coco] {
        let n = groups
            .iter()
            .filter(|g: &&GroupSummary| g.planner == planner)
            .map(|g| g.crashed)
            .sum();
        total_crashes.insert(planner_name(planner).to_string(), n);
    }

    let report = ExperimentReport {
        scenario: scenario.name.clone(),
        seed,
        config: config.clone(),
        inputs,
        plans: plan_summaries,
        groups,
        flights: missions.iter().map(|(s, _)| s.clone()).collect(),
        total_flights: missions.len(),
        total_crashes,
    };
    Ok(ExperimentOutput {
        report,
        raw,
        calibrated,
        plans,
        missions,
    })
}
