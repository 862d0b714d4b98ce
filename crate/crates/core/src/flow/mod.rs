//! Conditional normalizing flow over planar tracking error, conditioned on
//! controller tuning, velocity and heading.

mod io;
mod made;
mod train;

pub use io::FLOW_FORMAT;
pub use made::{ConditionedSampler, DoubtFlow, Standardizer, DEFAULT_HIDDEN, DEFAULT_LAYERS, LOG_SCALE_CLAMP};
pub use train::{fit, FitConfig, FitReport};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lang::{ConstitutionProgram, FeatureDomain};

/// Dimension of the modelled error.
pub const EVENT_DIM: usize = 2;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FlowError {
    #[error("invalid doubt features: {0}")]
    InvalidFeatures(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("training diverged at epoch {epoch}: loss {loss}")]
    Diverged { epoch: usize, loss: f64 },
    #[error("malformed flow file: {0}")]
    Format(String),
    #[error("flow does not match the program's doubt features: {0}")]
    SchemaMismatch(String),
}

/// Maps an angle to (−π, π].
pub fn normalize_angle(theta: f64) -> f64 {
    let two_pi = std::f64::consts::TAU;
    let mut a = theta.rem_euclid(two_pi);
    if a > std::f64::consts::PI {
        a -= two_pi;
    }
    a
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DoubtFeatureVector {
    pub tuning: usize,
    pub velocity: f64,
    pub heading: f64,
}

impl DoubtFeatureVector {
    pub fn new(tuning: usize, velocity: f64, heading: f64) -> Self {
        Self {
            tuning,
            velocity,
            heading: normalize_angle(heading),
        }
    }
}

/// Declared doubt features a flow conditions on: one categorical feature
/// (controller tuning) and the continuous `velocity` and `heading`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureSchema {
    pub categorical_name: String,
    pub categories: Vec<String>,
    pub velocity: [f64; 2],
    pub heading: [f64; 2],
}

pub const VELOCITY_FEATURE: &str = "velocity";
pub const HEADING_FEATURE: &str = "heading";

impl FeatureSchema {
    pub fn new(categorical_name: &str, categories: &[&str], velocity: [f64; 2], heading: [f64; 2]) -> Self {
        Self {
            categorical_name: categorical_name.to_string(),
            categories: categories.iter().map(|c| c.to_string()).collect(),
            velocity,
            heading,
        }
    }

    /// Schema from the program's `doubt_feature` declarations.
    pub fn from_program(program: &ConstitutionProgram) -> Result<Self, FlowError> {
        let mut categorical = None;
        let mut velocity = None;
        let mut heading = None;
        for d in &program.doubt_features {
            match (&d.domain, d.name.as_str()) {
                (FeatureDomain::Categorical(cats), _) => {
                    if categorical.is_some() {
                        return Err(FlowError::SchemaMismatch(
                            "more than one categorical doubt feature declared".into(),
                        ));
                    }
                    categorical = Some((d.name.clone(), cats.clone()));
                }
                (FeatureDomain::Interval(a, b), VELOCITY_FEATURE) => velocity = Some([*a, *b]),
                (FeatureDomain::Interval(a, b), HEADING_FEATURE) => heading = Some([*a, *b]),
                (FeatureDomain::Interval(..), other) => {
                    return Err(FlowError::SchemaMismatch(format!(
                        "continuous doubt feature `{other}` is not supported (expected `{VELOCITY_FEATURE}` or `{HEADING_FEATURE}`)"
                    )))
                }
            }
        }
        let (categorical_name, categories) = categorical
            .ok_or_else(|| FlowError::SchemaMismatch("no categorical doubt feature declared".into()))?;
        Ok(Self {
            categorical_name,
            categories,
            velocity: velocity
                .ok_or_else(|| FlowError::SchemaMismatch(format!("no `{VELOCITY_FEATURE}` doubt feature declared")))?,
            heading: heading
                .ok_or_else(|| FlowError::SchemaMismatch(format!("no `{HEADING_FEATURE}` doubt feature declared")))?,
        })
    }

    /// One-hot categories followed by velocity, sin(heading), cos(heading).
    pub fn width(&self) -> usize {
        self.categories.len() + 3
    }

    pub fn check(&self, f: &DoubtFeatureVector) -> Result<(), FlowError> {
        if f.tuning >= self.categories.len() {
            return Err(FlowError::InvalidFeatures(format!(
                "tuning index {} outside 0..{}",
                f.tuning,
                self.categories.len()
            )));
        }
        if !f.velocity.is_finite() || f.velocity < self.velocity[0] || f.velocity > self.velocity[1] {
            return Err(FlowError::InvalidFeatures(format!(
                "velocity {} outside [{}, {}]",
                f.velocity, self.velocity[0], self.velocity[1]
            )));
        }
        if !f.heading.is_finite() {
            return Err(FlowError::InvalidFeatures("heading is not finite".into()));
        }
        Ok(())
    }

    pub fn encode(&self, f: &DoubtFeatureVector) -> Result<Vec<f64>, FlowError> {
        self.check(f)?;
        let mut out = vec![0.0; self.width()];
        out[f.tuning] = 1.0;
        let k = self.categories.len();
        out[k] = f.velocity;
        out[k + 1] = f.heading.sin();
        out[k + 2] = f.heading.cos();
        Ok(out)
    }

    /// Succeeds when the program declares exactly these doubt features.
    pub fn check_program(&self, program: &ConstitutionProgram) -> Result<(), FlowError> {
        let other = Self::from_program(program)?;
        if &other != self {
            return Err(FlowError::SchemaMismatch(format!(
                "flow was trained on {} but the program declares {}",
                self.describe(),
                other.describe()
            )));
        }
        Ok(())
    }

    fn describe(&self) -> String {
        format!(
            "{} {{{}}}, velocity [{}, {}], heading [{}, {}]",
            self.categorical_name,
            self.categories.join(", "),
            self.velocity[0],
            self.velocity[1],
            self.heading[0],
            self.heading[1]
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DoubtRow {
    /// Desired minus actual position, meters.
    pub error: [f64; 2],
    pub features: DoubtFeatureVector,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DoubtDataset {
    pub rows: Vec<DoubtRow>,
    /// Identifiers of the flight logs the rows come from.
    pub provenance: Vec<String>,
}

impl DoubtDataset {
    pub fn validate(&self, schema: &FeatureSchema) -> Result<(), FlowError> {
        if self.rows.is_empty() {
            return Err(FlowError::InvalidArgument("dataset is empty".into()));
        }
        for (i, r) in self.rows.iter().enumerate() {
            if !r.error.iter().all(|e| e.is_finite()) {
                return Err(FlowError::InvalidArgument(format!("row {i} has a non-finite error")));
            }
            schema
                .check(&r.features)
                .map_err(|e| FlowError::InvalidArgument(format!("row {i}: {e}")))?;
        }
        Ok(())
    }
}
