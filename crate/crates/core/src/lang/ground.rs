use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use super::ast::*;
use super::validate::predicate_ranks;
use super::LangError;

/// Upper bound on rule instances produced by grounding.
pub const MAX_GROUND_RULES: usize = 1_000_000;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct GroundAtom {
    pub predicate: String,
    pub args: Vec<String>,
}

impl GroundAtom {
    pub fn new(predicate: &str, args: &[&str]) -> Self {
        Self {
            predicate: predicate.to_string(),
            args: args.iter().map(|a| a.to_string()).collect(),
        }
    }
}

impl fmt::Display for GroundAtom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.predicate)?;
        if !self.args.is_empty() {
            write!(f, "({})", self.args.join(", "))?;
        }
        Ok(())
    }
}

impl FromStr for GroundAtom {
    type Err = LangError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let atom = super::parser::parse_atom(s)?;
        let mut args = Vec::with_capacity(atom.args.len());
        for t in atom.args {
            match t {
                Term::Const(c) => args.push(c),
                Term::Var(v) => {
                    return Err(LangError::InvalidArgument(format!(
                        "`{s}` is not ground (variable {v})"
                    )))
                }
            }
        }
        Ok(GroundAtom {
            predicate: atom.predicate,
            args,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RuleKind {
    Deterministic,
    /// Head holds when the body holds and an independent coin with this bias lands true.
    Choice(f64),
    /// Head is a Gaussian quantity, defined when the body holds.
    Distribution { mean: f64, variance: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub enum GroundLiteral {
    Pos(usize),
    Neg(usize),
    Cmp { atom: usize, op: CmpOp, threshold: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundRule {
    pub kind: RuleKind,
    pub head: usize,
    pub body: Vec<GroundLiteral>,
    /// Evaluation rank of the head predicate.
    pub rank: usize,
    /// Index of the source clause.
    pub clause: usize,
}

/// Source of a random quantity the inference enumerates over.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Origin {
    Rule(usize),
    External(usize),
}

#[derive(Debug, Clone)]
pub(crate) struct DistVar {
    pub atom: usize,
    pub thresholds: Vec<f64>,
    pub origin: Origin,
}

/// Propositional program obtained by substituting constants for variables.
#[derive(Debug, Clone)]
pub struct GroundProgram {
    pub atoms: Vec<GroundAtom>,
    pub rules: Vec<GroundRule>,
    pub query: GroundAtom,
    pub bindings: BTreeMap<String, String>,
    pub domain: Vec<String>,
    pub(crate) index: HashMap<GroundAtom, usize>,
    pub(crate) choices: Vec<Origin>,
    pub(crate) dists: Vec<DistVar>,
    /// Distribution variable per atom, when the atom is compared to thresholds.
    pub(crate) dist_of_atom: HashMap<usize, usize>,
}

impl GroundProgram {
    pub fn atom_id(&self, atom: &GroundAtom) -> Option<usize> {
        self.index.get(atom).copied()
    }

    /// Constant standing for the evaluated position (first query argument).
    pub fn position(&self) -> &str {
        &self.query.args[0]
    }

    pub fn rule_to_string(&self, rule: &GroundRule) -> String {
        let mut out = String::new();
        match rule.kind {
            RuleKind::Choice(p) => out.push_str(&format!("{} :: ", fmt_num(p))),
            RuleKind::Deterministic | RuleKind::Distribution { .. } => {}
        }
        out.push_str(&self.atoms[rule.head].to_string());
        if let RuleKind::Distribution { mean, variance } = rule.kind {
            out.push_str(&format!(" ~ {}", DistSpec::Normal { mean, variance }));
        }
        if !rule.body.is_empty() {
            out.push_str(" :- ");
            let lits: Vec<String> = rule
                .body
                .iter()
                .map(|l| match l {
                    GroundLiteral::Pos(a) => self.atoms[*a].to_string(),
                    GroundLiteral::Neg(a) => format!("\\+ {}", self.atoms[*a]),
                    GroundLiteral::Cmp { atom, op, threshold } => {
                        format!("{} {} {}", self.atoms[*atom], op.symbol(), fmt_num(*threshold))
                    }
                })
                .collect();
            out.push_str(&lits.join(", "));
        }
        out.push('.');
        out
    }
}

struct Interner {
    atoms: Vec<GroundAtom>,
    index: HashMap<GroundAtom, usize>,
}

impl Interner {
    fn intern(&mut self, atom: GroundAtom) -> usize {
        if let Some(&i) = self.index.get(&atom) {
            return i;
        }
        let i = self.atoms.len();
        self.index.insert(atom.clone(), i);
        self.atoms.push(atom);
        i
    }
}

fn substitute(atom: &Atom, env: &HashMap<&str, &str>) -> GroundAtom {
    GroundAtom {
        predicate: atom.predicate.clone(),
        args: atom
            .args
            .iter()
            .map(|t| match t {
                Term::Const(c) => c.clone(),
                Term::Var(v) => env[v.as_str()].to_string(),
            })
            .collect(),
    }
}

/// Grounds the program. Variables named in `bindings` are replaced everywhere;
/// the remaining variables range over all constants of the program and the
/// binding values. The query is the `constitution/2` head under the bindings.
pub fn ground(program: &ConstitutionProgram, bindings: &BTreeMap<String, String>) -> Result<GroundProgram, LangError> {
    let query_clause = program.constitution_clause();
    for v in query_clause.head.vars() {
        if !bindings.contains_key(v) {
            return Err(LangError::InvalidArgument(format!(
                "query variable {v} of `{}` is not bound",
                query_clause.head
            )));
        }
    }
    let mut domain: BTreeSet<String> = bindings.values().cloned().collect();
    for c in &program.clauses {
        for a in std::iter::once(&c.head).chain(c.body.iter().map(|l| l.atom())) {
            for t in &a.args {
                if let Term::Const(k) = t {
                    domain.insert(k.clone());
                }
            }
        }
    }
    let domain: Vec<String> = domain.into_iter().collect();
    let ranks = predicate_ranks(program);

    let mut interner = Interner {
        atoms: Vec::new(),
        index: HashMap::new(),
    };
    let mut rules = Vec::new();
    for (ci, clause) in program.clauses.iter().enumerate() {
        let free: Vec<String> = clause.vars().into_iter().filter(|v| !bindings.contains_key(v)).collect();
        let count = (domain.len() as f64).powi(free.len() as i32);
        if !free.is_empty() && domain.is_empty() {
            continue;
        }
        if rules.len() as f64 + count > MAX_GROUND_RULES as f64 {
            return Err(LangError::GroundingTooLarge { limit: MAX_GROUND_RULES });
        }
        let mut digits = vec![0usize; free.len()];
        loop {
            let mut env: HashMap<&str, &str> = bindings.iter().map(|(k, v)| (k.as_str(), v.as_str())).collect();
            for (v, &d) in free.iter().zip(&digits) {
                env.insert(v.as_str(), domain[d].as_str());
            }
            let head = interner.intern(substitute(&clause.head, &env));
            let body = clause
                .body
                .iter()
                .map(|l| match l {
                    Literal::Pos(a) => GroundLiteral::Pos(interner.intern(substitute(a, &env))),
                    Literal::Neg(a) => GroundLiteral::Neg(interner.intern(substitute(a, &env))),
                    Literal::Cmp { atom, op, threshold } => GroundLiteral::Cmp {
                        atom: interner.intern(substitute(atom, &env)),
                        op: *op,
                        threshold: *threshold,
                    },
                })
                .collect();
            let kind = match clause.kind {
                ClauseKind::Deterministic => RuleKind::Deterministic,
                ClauseKind::Categorical(p) => RuleKind::Choice(p),
                ClauseKind::Continuous(DistSpec::Normal { mean, variance }) => RuleKind::Distribution { mean, variance },
            };
            rules.push(GroundRule {
                kind,
                head,
                body,
                rank: ranks[&clause.head.signature()],
                clause: ci,
            });
            // odometer over the free variables
            let mut k = 0;
            while k < digits.len() {
                digits[k] += 1;
                if digits[k] < domain.len() {
                    break;
                }
                digits[k] = 0;
                k += 1;
            }
            if k == digits.len() {
                break;
            }
        }
    }
    rules.sort_by_key(|r| r.rank);

    let query = {
        let env: HashMap<&str, &str> = bindings.iter().map(|(k, v)| (k.as_str(), v.as_str())).collect();
        substitute(&query_clause.head, &env)
    };
    interner.intern(query.clone());

    // Random structure: coins of choice rules, external boolean atoms, and
    // Gaussian quantities compared against thresholds.
    let mut defined = vec![false; interner.atoms.len()];
    let mut dist_rule: HashMap<usize, usize> = HashMap::new();
    for (ri, r) in rules.iter().enumerate() {
        defined[r.head] = true;
        if matches!(r.kind, RuleKind::Distribution { .. }) && dist_rule.insert(r.head, ri).is_some() {
            return Err(LangError::ConflictingDistribution(interner.atoms[r.head].to_string()));
        }
    }
    let mut choices: Vec<Origin> = rules
        .iter()
        .enumerate()
        .filter(|(_, r)| matches!(r.kind, RuleKind::Choice(_)))
        .map(|(i, _)| Origin::Rule(i))
        .collect();
    let mut external_bool = BTreeSet::new();
    let mut thresholds: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for r in &rules {
        for l in &r.body {
            match *l {
                GroundLiteral::Pos(a) | GroundLiteral::Neg(a) if !defined[a] => {
                    external_bool.insert(a);
                }
                GroundLiteral::Cmp { atom, threshold, .. } => thresholds.entry(atom).or_default().push(threshold),
                _ => {}
            }
        }
    }
    choices.extend(external_bool.into_iter().map(Origin::External));
    let mut dists = Vec::new();
    let mut dist_of_atom = HashMap::new();
    for (atom, mut ts) in thresholds {
        ts.sort_by(f64::total_cmp);
        ts.dedup();
        let origin = match dist_rule.get(&atom) {
            Some(&ri) => Origin::Rule(ri),
            None => Origin::External(atom),
        };
        dist_of_atom.insert(atom, dists.len());
        dists.push(DistVar {
            atom,
            thresholds: ts,
            origin,
        });
    }

    Ok(GroundProgram {
        atoms: interner.atoms,
        index: interner.index,
        rules,
        query,
        bindings: bindings.clone(),
        domain,
        choices,
        dists,
        dist_of_atom,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lang::parse_program;

    fn binds(pairs: &[(&str, &str)]) -> BTreeMap<String, String> {
        pairs.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect()
    }

    #[test]
    fn ground_program_is_identity() {
        let src = "0.3 :: a(k).\nb(k) :- a(k), \\+ c.\nconstitution(x, z) :- b(k).";
        let p = parse_program(src).unwrap();
        let g = ground(&p, &BTreeMap::new()).unwrap();
        assert_eq!(g.rules.len(), 3);
        let mut printed: Vec<String> = g.rules.iter().map(|r| g.rule_to_string(r)).collect();
        let mut original: Vec<String> = p.clauses.iter().map(|c| c.to_string()).collect();
        printed.sort();
        original.sort();
        assert_eq!(printed, original);
        assert_eq!(g.query.to_string(), "constitution(x, z)");
    }

    #[test]
    fn single_constant_instance() {
        let p = parse_program("ok(X) :- over(X, park).\nconstitution(X, Z) :- ok(X).").unwrap();
        let g = ground(&p, &binds(&[("X", "x0"), ("Z", "z0")])).unwrap();
        let ok: Vec<String> = g
            .rules
            .iter()
            .filter(|r| g.atoms[r.head].predicate == "ok")
            .map(|r| g.rule_to_string(r))
            .collect();
        assert_eq!(ok, vec!["ok(x0) :- over(x0, park).".to_string()]);
    }

    #[test]
    fn two_free_variables_three_constants() {
        let p = parse_program("link(A, B) :- near(A, B).\nconstitution(x, z) :- link(x, z).").unwrap();
        let g = ground(&p, &BTreeMap::new()).unwrap();
        assert_eq!(g.domain, vec!["x", "z"]);
        let p = parse_program("link(A, B) :- near(A, B).\nnear(a, b).\nconstitution(a, c) :- link(a, b).").unwrap();
        let g = ground(&p, &BTreeMap::new()).unwrap();
        let instances: BTreeSet<String> = g
            .rules
            .iter()
            .filter(|r| g.atoms[r.head].predicate == "link")
            .map(|r| g.rule_to_string(r))
            .collect();
        // enumeration oracle: every substitution of {a, b, c} for A and B
        let mut expected = BTreeSet::new();
        for a in ["a", "b", "c"] {
            for b in ["a", "b", "c"] {
                expected.insert(format!("link({a}, {b}) :- near({a}, {b})."));
            }
        }
        assert_eq!(instances, expected);
    }

    #[test]
    fn unbound_query_variable() {
        let p = parse_program("constitution(X, Z).").unwrap();
        let err = ground(&p, &binds(&[("X", "x")])).unwrap_err();
        assert!(matches!(err, LangError::InvalidArgument(_)));
    }

    #[test]
    fn conflicting_distributions() {
        let p = parse_program("d(a) ~ normal(0, 1).\nd(a) ~ normal(1, 1).\nconstitution(x, z) :- d(a) > 0.").unwrap();
        assert!(matches!(
            ground(&p, &BTreeMap::new()),
            Err(LangError::ConflictingDistribution(_))
        ));
    }

    #[test]
    fn ground_atom_parse() {
        let a: GroundAtom = "over(x, red)".parse().unwrap();
        assert_eq!(a, GroundAtom::new("over", &["x", "red"]));
        assert!("over(X, red)".parse::<GroundAtom>().is_err());
    }
}
