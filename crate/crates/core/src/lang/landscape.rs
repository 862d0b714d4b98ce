use std::collections::BTreeMap;

use rayon::prelude::*;

use super::ast::{ConstitutionProgram, Term};
use super::ground::{ground, GroundAtom, GroundProgram};
use super::infer::{bind_atoms, InferencePlan, PerceptionFact};
use super::LangError;
use crate::geometry::{StaRMap, Vec2};
use crate::grid::GridSpec;
use crate::hash::sha256_hex;
use crate::landscape::{Landscape, LandscapeKind, Provenance};

/// Predicate through which the evaluated velocity level reaches the program,
/// as the exactly known quantity `velocity(z)`.
pub const VELOCITY_PERCEPTION: &str = "velocity";

const POSITION_CONSTANT: &str = "x";
const MEASUREMENT_CONSTANT: &str = "z";

/// Binds the variables of the `constitution/2` head to the constants `x`
/// (position) and `z` (measurement).
pub fn query_bindings(program: &ConstitutionProgram) -> BTreeMap<String, String> {
    let head = &program.constitution_clause().head;
    let mut out = BTreeMap::new();
    for (term, constant) in head.args.iter().zip([POSITION_CONSTANT, MEASUREMENT_CONSTANT]) {
        if let Term::Var(v) = term {
            out.entry(v.clone()).or_insert_with(|| constant.to_string());
        }
    }
    out
}

/// Grounded program and compiled query, reusable across positions.
#[derive(Debug, Clone)]
pub struct LandscapeEvaluator {
    pub program: GroundProgram,
    plan: InferencePlan,
}

impl LandscapeEvaluator {
    pub fn new(program: &ConstitutionProgram) -> Result<Self, LangError> {
        let grounded = ground(program, &query_bindings(program))?;
        let plan = InferencePlan::new(&grounded, &grounded.query);
        Ok(Self {
            program: grounded,
            plan,
        })
    }

    pub fn velocity_fact(&self, velocity: f64) -> PerceptionFact {
        let z = self.program.query.args[1].clone();
        PerceptionFact::value(
            GroundAtom {
                predicate: VELOCITY_PERCEPTION.to_string(),
                args: vec![z],
            },
            velocity,
        )
    }

    /// Compliance probability at `x` given the perception facts.
    pub fn probability(&self, star_map: &StaRMap, x: Vec2, perception: &[PerceptionFact]) -> Result<f64, LangError> {
        let table = bind_atoms(&self.program, star_map, x, perception)?;
        self.plan.probability(&table)
    }

    /// Compliance probability at `x` with the velocity fact for `velocity` added.
    pub fn probability_at_velocity(
        &self,
        star_map: &StaRMap,
        x: Vec2,
        velocity: f64,
        perception: &[PerceptionFact],
    ) -> Result<f64, LangError> {
        let mut facts = Vec::with_capacity(perception.len() + 1);
        facts.extend_from_slice(perception);
        facts.push(self.velocity_fact(velocity));
        self.probability(star_map, x, &facts)
    }
}

/// Evaluates the query at every cell center of `grid` for every velocity level.
/// Any failing cell fails the whole landscape.
pub fn compliance_landscape(
    program: &ConstitutionProgram,
    star_map: &StaRMap,
    perception: &[PerceptionFact],
    grid: &GridSpec,
    velocity_levels: &[f64],
) -> Result<Landscape, LangError> {
    if velocity_levels.is_empty() || velocity_levels.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(LangError::InvalidArgument(
            "velocity levels must be non-empty, finite and non-negative".into(),
        ));
    }
    if !grid.is_valid() {
        return Err(LangError::InvalidArgument("landscape grid is empty or malformed".into()));
    }
    let evaluator = LandscapeEvaluator::new(program)?;
    let n = grid.cell_count();
    let mut values = Vec::with_capacity(n * velocity_levels.len());
    for &v in velocity_levels {
        let mut facts = perception.to_vec();
        facts.push(evaluator.velocity_fact(v));
        let layer: Result<Vec<f64>, LangError> = (0..n)
            .into_par_iter()
            .map(|cell| evaluator.probability(star_map, grid.center(cell), &facts))
            .collect();
        values.extend(layer?);
    }
    Ok(Landscape {
        grid: *grid,
        velocity_levels: velocity_levels.to_vec(),
        headings: Vec::new(),
        values,
        kind: LandscapeKind::Raw,
        provenance: Provenance {
            program_hash: sha256_hex(program.source_text.as_bytes()),
            star_map_hash: star_map.content_hash(),
            ..Provenance::default()
        },
    })
}
