//! Constitution language: a small probabilistic logic with categorical,
//! continuous and deterministic clauses, stratified negation and threshold
//! comparisons on Gaussian atoms.
//!
//! Grammar (informal):
//!
//! ```text
//! program   := { statement }
//! statement := doubt | clause
//! doubt     := "doubt_feature" "(" ident "," ( "{" ident {"," ident} "}" | "[" num "," num "]" ) ")" "."
//! clause    := [ num "::" ] atom [ "~" "normal" "(" num "," num ")" ] [ ":-" literal {"," literal} ] "."
//! literal   := atom | "\+" atom | atom cmp num
//! cmp       := "<" | ">" | "=<" | ">="
//! atom      := ident [ "(" term {"," term} ")" ]
//! term      := Var | ident | num
//! ```
//!
//! The second argument of `normal` is the variance. `%` starts a line comment.

mod ast;
mod ground;
mod infer;
mod landscape;
mod parser;
mod validate;

pub use ast::*;
pub use ground::{ground, GroundAtom, GroundProgram, GroundRule, RuleKind};
pub use infer::{
    bind_atoms, infer, normal_cdf, AtomSource, BernoulliEntry, GroundAtomTable, InferencePlan,
    Partition, PerceptionFact, DEFAULT_ENUMERATION_LIMIT,
};
pub use landscape::{compliance_landscape, query_bindings, LandscapeEvaluator, VELOCITY_PERCEPTION};

use thiserror::Error;

/// Name of the query predicate every program must define with arity 2.
pub const QUERY_PREDICATE: &str = "constitution";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LangError {
    #[error("syntax error at line {line}, column {col}: {message}")]
    Syntax {
        line: usize,
        col: usize,
        message: String,
    },
    #[error("invalid program at line {line}, column {col}: {message}")]
    Semantic {
        line: usize,
        col: usize,
        message: String,
    },
    #[error("invalid program: {0}")]
    Program(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("grounding produces more than {limit} rule instances")]
    GroundingTooLarge { limit: usize },
    #[error("comparison on undeclared distributional atom `{0}`")]
    UndeclaredDistribution(String),
    #[error("conflicting distributions for ground atom `{0}`")]
    ConflictingDistribution(String),
    #[error("position ({x}, {y}) lies outside the map grid")]
    OutsideGrid { x: f64, y: f64 },
    #[error("map has no layer for tag `{0}`")]
    MissingLayer(String),
    #[error("invalid perception fact `{atom}`: {reason}")]
    InvalidPerception { atom: String, reason: String },
    #[error("{vars} probabilistic atoms with {assignments} joint assignments exceed the enumeration limit of {limit} atoms")]
    UnsupportedScale {
        vars: usize,
        assignments: f64,
        limit: usize,
    },
}

/// Parses and validates a constitution.
pub fn parse_program(source: &str) -> Result<ConstitutionProgram, LangError> {
    let mut parser = parser::Parser::new(source)?;
    let statements = parser.statements()?;
    let mut clauses = Vec::new();
    let mut positions = Vec::new();
    let mut doubt_features = Vec::new();
    let mut doubt_positions = Vec::new();
    for s in statements {
        match s {
            parser::Statement::Clause(c, line, col) => {
                clauses.push(c);
                positions.push((line, col));
            }
            parser::Statement::Doubt(d, line, col) => {
                doubt_features.push(d);
                doubt_positions.push((line, col));
            }
        }
    }
    let program = ConstitutionProgram {
        clauses,
        doubt_features,
        source_text: source.to_string(),
    };
    validate::validate(&program, &positions, &doubt_positions)?;
    Ok(program)
}
