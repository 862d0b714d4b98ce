//! Doubt calibration of compliance landscapes, online compliance under a state
//! belief, and a hysteresis alarm over the online compliance stream.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flow::{ConditionedSampler, DoubtFeatureVector, DoubtFlow, FlowError};
use crate::geometry::{StaRMap, Vec2};
use crate::landscape::{Landscape, LandscapeKind, Provenance};
use crate::lang::{LandscapeEvaluator, LangError, PerceptionFact};

/// Default Monte-Carlo samples per cell.
pub const DEFAULT_SAMPLES: usize = 25;
/// Width of the re-arm band above the alarm threshold.
pub const ALARM_HYSTERESIS: f64 = 0.05;

#[derive(Debug, Error)]
pub enum CalibrationError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("no doubt features given for velocity level {0}")]
    MissingFeatures(usize),
    #[error("landscape is already calibrated")]
    NotRaw,
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Lang(#[from] LangError),
}

/// Splits a run seed into an independent stream per (layer, cell).
pub fn stream_seed(seed: u64, parts: &[u64]) -> u64 {
    let mut h = seed ^ 0x9e37_79b9_7f4a_7c15;
    for &p in parts {
        h = splitmix(h ^ splitmix(p.wrapping_add(0x632b_e59b_d9b4_e019)));
    }
    h
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationOptions {
    pub samples: usize,
    pub seed: u64,
    /// When set, each layer first draws this many offsets from the flow and
    /// cells resample from that pool with their own index streams. Much faster
    /// for large grids; `None` draws every offset from the flow.
    pub offset_pool: Option<usize>,
}

impl Default for CalibrationOptions {
    fn default() -> Self {
        Self {
            samples: DEFAULT_SAMPLES,
            seed: 0,
            offset_pool: None,
        }
    }
}

/// Calibrated landscape with the per-value Monte-Carlo standard error.
#[derive(Debug, Clone)]
pub struct Calibration {
    pub landscape: Landscape,
    /// Same layout as `landscape.values`.
    pub standard_error: Vec<f64>,
}

enum OffsetSource {
    Flow(ConditionedSampler),
    Pool(Vec<[f64; 2]>),
}

impl OffsetSource {
    fn draw(&self, rng: &mut ChaCha8Rng) -> [f64; 2] {
        match self {
            OffsetSource::Flow(s) => s.draw(rng),
            OffsetSource::Pool(p) => p[rng.random_range(0..p.len())],
        }
    }
}

/// Doubt-calibrates an undirected raw landscape, one feature vector per
/// velocity level.
///
/// Each value is the mean of `raw(x_cell - e)` over offsets `e` drawn from the
/// flow; errors are desired minus actual, so `x_cell - e` is where the agent
/// ends up. Offsets landing outside the grid count as probability 0.
pub fn calibrate(
    raw: &Landscape,
    flow: &DoubtFlow,
    features_per_level: &[DoubtFeatureVector],
    options: &CalibrationOptions,
) -> Result<Calibration, CalibrationError> {
    check_raw(raw, options)?;
    if raw.heading_count() != 1 || !raw.headings.is_empty() {
        return Err(CalibrationError::InvalidArgument("raw landscape must be undirected".into()));
    }
    if features_per_level.len() < raw.velocity_levels.len() {
        return Err(CalibrationError::MissingFeatures(features_per_level.len()));
    }
    let layers: Vec<(usize, DoubtFeatureVector)> = features_per_level[..raw.velocity_levels.len()]
        .iter()
        .copied()
        .enumerate()
        .collect();
    run(raw, flow, &layers, Vec::new(), options)
}

/// Calibrates one layer per (velocity level, heading) with features
/// `(tuning, level velocity, heading)`, producing a directed landscape.
pub fn calibrate_directional(
    raw: &Landscape,
    flow: &DoubtFlow,
    tuning: usize,
    headings: &[f64],
    options: &CalibrationOptions,
) -> Result<Calibration, CalibrationError> {
    check_raw(raw, options)?;
    if !raw.headings.is_empty() {
        return Err(CalibrationError::InvalidArgument("raw landscape must be undirected".into()));
    }
    if headings.is_empty() || headings.iter().any(|h| !h.is_finite()) {
        return Err(CalibrationError::InvalidArgument("headings must be non-empty and finite".into()));
    }
    let mut layers = Vec::new();
    for (level, &v) in raw.velocity_levels.iter().enumerate() {
        for &h in headings {
            layers.push((level, DoubtFeatureVector::new(tuning, v, h)));
        }
    }
    run(raw, flow, &layers, headings.to_vec(), options)
}

fn check_raw(raw: &Landscape, options: &CalibrationOptions) -> Result<(), CalibrationError> {
    if raw.kind != LandscapeKind::Raw {
        return Err(CalibrationError::NotRaw);
    }
    if options.samples == 0 {
        return Err(CalibrationError::InvalidArgument("sample count must be at least 1".into()));
    }
    if options.offset_pool == Some(0) {
        return Err(CalibrationError::InvalidArgument("offset pool must not be empty".into()));
    }
    raw.validate()
        .map_err(|e| CalibrationError::InvalidArgument(e.to_string()))
}

fn run(
    raw: &Landscape,
    flow: &DoubtFlow,
    layers: &[(usize, DoubtFeatureVector)],
    headings: Vec<f64>,
    options: &CalibrationOptions,
) -> Result<Calibration, CalibrationError> {
    let grid = raw.grid;
    let n = grid.cell_count();
    let s = options.samples;
    let mut values = Vec::with_capacity(n * layers.len());
    let mut standard_error = Vec::with_capacity(n * layers.len());
    for (k, (level, features)) in layers.iter().enumerate() {
        let sampler = flow.sampler(features)?;
        let source = match options.offset_pool {
            None => OffsetSource::Flow(sampler),
            Some(m) => {
                let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(options.seed, &[k as u64, u64::MAX]));
                OffsetSource::Pool((0..m).map(|_| sampler.draw(&mut rng)).collect())
            }
        };
        let source_layer = raw.layer(*level, 0);
        let cells: Vec<(f64, f64)> = (0..n)
            .into_par_iter()
            .map(|cell| {
                let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(options.seed, &[k as u64, cell as u64]));
                let c = grid.center(cell);
                let (mut sum, mut sum_sq) = (0.0, 0.0);
                for _ in 0..s {
                    let e = source.draw(&mut rng);
                    let p = grid
                        .locate(Vec2::new(c.x - e[0], c.y - e[1]))
                        .map_or(0.0, |i| source_layer[i]);
                    sum += p;
                    sum_sq += p * p;
                }
                let mean = sum / s as f64;
                let se = if s > 1 {
                    let var = ((sum_sq - sum * mean) / (s - 1) as f64).max(0.0);
                    (var / s as f64).sqrt()
                } else {
                    0.0
                };
                (mean.clamp(0.0, 1.0), se)
            })
            .collect();
        for (v, e) in cells {
            values.push(v);
            standard_error.push(e);
        }
    }
    let landscape = Landscape {
        grid,
        velocity_levels: raw.velocity_levels.clone(),
        headings,
        values,
        kind: LandscapeKind::Calibrated,
        provenance: Provenance {
            flow_hash: Some(flow.content_hash()),
            samples: Some(s),
            seed: Some(options.seed),
            ..raw.provenance.clone()
        },
    };
    Ok(Calibration {
        landscape,
        standard_error,
    })
}

/// Gaussian belief over the agent's position plus the current measurements.
#[derive(Debug, Clone, PartialEq)]
pub struct StateBelief {
    pub mean: Vec2,
    pub covariance: [[f64; 2]; 2],
    pub perception: Vec<PerceptionFact>,
}

impl StateBelief {
    pub fn validate(&self) -> Result<(), CalibrationError> {
        let c = self.covariance;
        let ok = self.mean.is_finite()
            && c.iter().flatten().all(|v| v.is_finite())
            && c[0][1] == c[1][0]
            && c[0][0] >= 0.0
            && c[1][1] >= 0.0
            && c[0][0] * c[1][1] - c[0][1] * c[1][0] >= -1e-15;
        if ok {
            Ok(())
        } else {
            Err(CalibrationError::InvalidArgument(
                "belief covariance must be finite, symmetric and positive semi-definite".into(),
            ))
        }
    }

    /// Lower Cholesky factor; tolerates singular covariances.
    fn cholesky(&self) -> [[f64; 2]; 2] {
        let c = self.covariance;
        let l00 = c[0][0].sqrt();
        let l10 = if l00 > 0.0 { c[1][0] / l00 } else { 0.0 };
        let l11 = (c[1][1] - l10 * l10).max(0.0).sqrt();
        [[l00, 0.0], [l10, l11]]
    }

    fn is_point(&self) -> bool {
        self.covariance.iter().flatten().all(|v| *v == 0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OnlineEstimate {
    pub probability: f64,
    pub standard_error: f64,
}

/// Monte-Carlo estimate of the probability that the constitution holds right
/// now, marginalising the position belief. Measurements are taken as exact.
/// Positions sampled outside the map count as non-compliant.
pub fn online_compliance(
    evaluator: &LandscapeEvaluator,
    star_map: &StaRMap,
    belief: &StateBelief,
    samples: usize,
    seed: u64,
) -> Result<OnlineEstimate, CalibrationError> {
    belief.validate()?;
    if samples == 0 {
        return Err(CalibrationError::InvalidArgument("sample count must be at least 1".into()));
    }
    let eval = |x: Vec2| match evaluator.probability(star_map, x, &belief.perception) {
        Err(LangError::OutsideGrid { .. }) => Ok(0.0),
        r => r,
    };
    if belief.is_point() {
        return Ok(OnlineEstimate {
            probability: eval(belief.mean)?,
            standard_error: 0.0,
        });
    }
    let l = belief.cholesky();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for _ in 0..samples {
        let a: f64 = rng.sample(StandardNormal);
        let b: f64 = rng.sample(StandardNormal);
        let x = Vec2::new(belief.mean.x + l[0][0] * a, belief.mean.y + l[1][0] * a + l[1][1] * b);
        let p = eval(x)?;
        sum += p;
        sum_sq += p * p;
    }
    let n = samples as f64;
    let mean = sum / n;
    let se = if samples > 1 {
        (((sum_sq - sum * mean) / (n - 1.0)).max(0.0) / n).sqrt()
    } else {
        0.0
    };
    Ok(OnlineEstimate {
        probability: mean,
        standard_error: se,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlarmEvent {
    pub time: f64,
    pub value: f64,
    pub threshold: f64,
}

/// Fires once when compliance drops below the threshold and re-arms only after
/// it climbs back above `threshold + hysteresis`.
#[derive(Debug, Clone)]
pub struct ComplianceAlarm {
    pub threshold: f64,
    pub hysteresis: f64,
    armed: bool,
}

impl ComplianceAlarm {
    pub fn new(threshold: f64) -> Result<Self, CalibrationError> {
        if !(threshold > 0.0 && threshold < 1.0) {
            return Err(CalibrationError::InvalidArgument(format!(
                "alarm threshold {threshold} must lie in (0, 1)"
            )));
        }
        Ok(Self {
            threshold,
            hysteresis: ALARM_HYSTERESIS,
            armed: true,
        })
    }

    pub fn update(&mut self, time: f64, value: f64) -> Option<AlarmEvent> {
        if self.armed && value < self.threshold {
            self.armed = false;
            return Some(AlarmEvent {
                time,
                value,
                threshold: self.threshold,
            });
        }
        if !self.armed && value >= self.threshold + self.hysteresis {
            self.armed = true;
        }
        None
    }
}

/// Alarm events over a `(time, compliance)` stream.
pub fn compliance_alarm(stream: &[(f64, f64)], threshold: f64) -> Result<Vec<AlarmEvent>, CalibrationError> {
    let mut alarm = ComplianceAlarm::new(threshold)?;
    Ok(stream.iter().filter_map(|&(t, v)| alarm.update(t, v)).collect())
}

/// One JSON object per line.
pub fn write_alarm_events<W: Write>(w: &mut W, events: &[AlarmEvent]) -> std::io::Result<()> {
    for e in events {
        serde_json::to_writer(&mut *w, e)?;
        writeln!(w)?;
    }
    Ok(())
}
