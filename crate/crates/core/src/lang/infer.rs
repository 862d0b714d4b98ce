use std::collections::{HashMap, HashSet};

use statrs::function::erf::erfc;

use super::ast::CmpOp;
use super::ground::{GroundAtom, GroundLiteral, GroundProgram, Origin, RuleKind};
use super::LangError;
use crate::geometry::{StaRMap, Vec2};

/// Default maximum number of enumerated probabilistic atoms.
pub const DEFAULT_ENUMERATION_LIMIT: usize = 20;

/// Ground fact observed at run time.
#[derive(Debug, Clone, PartialEq)]
pub enum PerceptionFact {
    /// Boolean atom that holds with the given probability.
    Fact { atom: GroundAtom, probability: f64 },
    /// Gaussian quantity, usable in threshold comparisons.
    Value {
        atom: GroundAtom,
        mean: f64,
        variance: f64,
    },
}

impl PerceptionFact {
    pub fn fact(atom: GroundAtom, probability: f64) -> Self {
        PerceptionFact::Fact { atom, probability }
    }

    /// Exactly known quantity.
    pub fn value(atom: GroundAtom, value: f64) -> Self {
        PerceptionFact::Value {
            atom,
            mean: value,
            variance: 0.0,
        }
    }

    pub fn atom(&self) -> &GroundAtom {
        match self {
            PerceptionFact::Fact { atom, .. } | PerceptionFact::Value { atom, .. } => atom,
        }
    }

    fn check(&self) -> Result<(), LangError> {
        let bad = |reason: &str| LangError::InvalidPerception {
            atom: self.atom().to_string(),
            reason: reason.to_string(),
        };
        match *self {
            PerceptionFact::Fact { probability, .. } if !(0.0..=1.0).contains(&probability) => {
                Err(bad("probability outside [0, 1]"))
            }
            PerceptionFact::Value { mean, variance, .. }
                if !mean.is_finite() || !variance.is_finite() || variance < 0.0 =>
            {
                Err(bad("needs a finite mean and a finite non-negative variance"))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AtomSource {
    /// Probability or distribution stated by a program clause.
    Clause { clause: usize },
    StarMap,
    Perception,
    /// Boolean atom with no clause, map layer or perception fact.
    ClosedWorld,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BernoulliEntry {
    pub atom: GroundAtom,
    pub probability: f64,
    pub source: AtomSource,
}

/// Gaussian atom split by its comparison thresholds `t_1 < … < t_m` into the
/// categories `(-∞, t_1), {t_1}, (t_1, t_2), …, {t_m}, (t_m, ∞)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    pub atom: GroundAtom,
    pub mean: f64,
    pub variance: f64,
    pub thresholds: Vec<f64>,
    pub probabilities: Vec<f64>,
    pub source: AtomSource,
}

/// Probabilities of every random quantity of a ground program at one position.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundAtomTable {
    pub bernoulli: Vec<BernoulliEntry>,
    pub partitions: Vec<Partition>,
}

impl GroundAtomTable {
    /// Probability of an independent boolean atom, if the table holds one for it.
    pub fn bernoulli_of(&self, atom: &GroundAtom) -> Option<f64> {
        self.bernoulli.iter().find(|e| &e.atom == atom).map(|e| e.probability)
    }

    pub fn partition_of(&self, atom: &GroundAtom) -> Option<&Partition> {
        self.partitions.iter().find(|p| &p.atom == atom)
    }
}

/// Standard normal CDF.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

fn normal_sf(z: f64) -> f64 {
    0.5 * erfc(z / std::f64::consts::SQRT_2)
}

/// Category probabilities of N(mean, variance) over the threshold partition.
pub(crate) fn partition_probabilities(mean: f64, variance: f64, thresholds: &[f64]) -> Vec<f64> {
    let m = thresholds.len();
    let mut out = vec![0.0; 2 * m + 1];
    if variance == 0.0 {
        let idx = match thresholds.iter().position(|&t| mean <= t) {
            Some(k) if thresholds[k] == mean => 2 * k + 1,
            Some(k) => 2 * k,
            None => 2 * m,
        };
        out[idx] = 1.0;
        return out;
    }
    let sd = variance.sqrt();
    // Mass of (a, b), using the lower tail below the mean and the upper tail above it.
    let mass = |a: f64, b: f64| -> f64 {
        let za = (a - mean) / sd;
        let zb = (b - mean) / sd;
        let p = if b <= mean {
            normal_cdf(zb) - normal_cdf(za)
        } else if a >= mean {
            normal_sf(za) - normal_sf(zb)
        } else {
            1.0 - normal_cdf(za) - normal_sf(zb)
        };
        p.max(0.0)
    };
    let mut lo = f64::NEG_INFINITY;
    for (k, &t) in thresholds.iter().enumerate() {
        out[2 * k] = mass(lo, t);
        lo = t;
    }
    out[2 * m] = mass(lo, f64::INFINITY);
    out
}

fn cmp_holds(category: usize, point: usize, op: CmpOp) -> bool {
    match op {
        CmpOp::Lt => category < point,
        CmpOp::Le => category <= point,
        CmpOp::Gt => category > point,
        CmpOp::Ge => category >= point,
    }
}

/// Assigns probabilities to the random quantities of `program` at position `x`.
///
/// Boolean atoms without clauses are resolved from perception facts, then from
/// the map (`over(P, tag)` with `P` the query position), and are otherwise
/// false. Compared atoms without a distribution clause are resolved from
/// perception values, then from the map (`distance(P, tag)`).
pub fn bind_atoms(
    program: &GroundProgram,
    star_map: &StaRMap,
    x: Vec2,
    perception: &[PerceptionFact],
) -> Result<GroundAtomTable, LangError> {
    let cell = star_map.grid.locate(x).ok_or(LangError::OutsideGrid { x: x.x, y: x.y })?;
    let mut facts: HashMap<&GroundAtom, (f64, usize)> = HashMap::new();
    let mut values: HashMap<&GroundAtom, (f64, f64)> = HashMap::new();
    for (i, f) in perception.iter().enumerate() {
        f.check()?;
        match f {
            PerceptionFact::Fact { atom, probability } => {
                facts.insert(atom, (*probability, i));
            }
            PerceptionFact::Value { atom, mean, variance } => {
                values.insert(atom, (*mean, *variance));
            }
        }
    }
    let position = program.position();
    let spatial = |atom: &GroundAtom, predicate: &str| -> Option<String> {
        (atom.predicate == predicate && atom.args.len() == 2 && atom.args[0] == position)
            .then(|| atom.args[1].clone())
    };
    let layer = |tag: &str| star_map.layers.get(tag).ok_or_else(|| LangError::MissingLayer(tag.to_string()));

    let mut bernoulli = Vec::with_capacity(program.choices.len());
    for origin in &program.choices {
        let entry = match *origin {
            Origin::Rule(ri) => {
                let rule = &program.rules[ri];
                let RuleKind::Choice(p) = rule.kind else {
                    unreachable!("choice origin points at a choice rule")
                };
                BernoulliEntry {
                    atom: program.atoms[rule.head].clone(),
                    probability: p,
                    source: AtomSource::Clause { clause: rule.clause },
                }
            }
            Origin::External(a) => {
                let atom = &program.atoms[a];
                let (probability, source) = if let Some(&(p, _)) = facts.get(atom) {
                    (p, AtomSource::Perception)
                } else if let Some(tag) = spatial(atom, "over") {
                    (layer(&tag)?.over[cell], AtomSource::StarMap)
                } else {
                    (0.0, AtomSource::ClosedWorld)
                };
                BernoulliEntry {
                    atom: atom.clone(),
                    probability,
                    source,
                }
            }
        };
        bernoulli.push(entry);
    }

    let mut partitions = Vec::with_capacity(program.dists.len());
    for d in &program.dists {
        let atom = &program.atoms[d.atom];
        let (mean, variance, source) = match d.origin {
            Origin::Rule(ri) => {
                let rule = &program.rules[ri];
                let RuleKind::Distribution { mean, variance } = rule.kind else {
                    unreachable!("distribution origin points at a distribution rule")
                };
                (mean, variance, AtomSource::Clause { clause: rule.clause })
            }
            Origin::External(_) => {
                if let Some(&(m, v)) = values.get(atom) {
                    (m, v, AtomSource::Perception)
                } else if let Some(tag) = spatial(atom, "distance") {
                    let l = layer(&tag)?;
                    (l.distance_mean[cell], l.distance_variance[cell], AtomSource::StarMap)
                } else {
                    return Err(LangError::UndeclaredDistribution(atom.to_string()));
                }
            }
        };
        partitions.push(Partition {
            atom: atom.clone(),
            mean,
            variance,
            thresholds: d.thresholds.clone(),
            probabilities: partition_probabilities(mean, variance, &d.thresholds),
            source,
        });
    }
    Ok(GroundAtomTable { bernoulli, partitions })
}

#[derive(Debug, Clone, Copy)]
enum CLit {
    Pos(usize),
    Neg(usize),
    Cmp { dist: usize, point: usize, op: CmpOp },
}

#[derive(Debug, Clone, Copy)]
enum Effect {
    Atom(usize),
    Coin(usize, usize),
    Define(usize),
}

#[derive(Debug, Clone)]
struct CRule {
    effect: Effect,
    body: Vec<CLit>,
}

#[derive(Debug, Clone)]
struct Group {
    rules: Vec<CRule>,
    recursive: bool,
}

/// Query-specific compiled form of a ground program: only rules the query
/// depends on, arranged in evaluation order.
#[derive(Debug, Clone)]
pub struct InferencePlan {
    query: Option<usize>,
    atom_count: usize,
    groups: Vec<Group>,
    /// Relevant choice indices and the atom each external choice sets.
    choices: Vec<(usize, Option<usize>)>,
    dists: Vec<(usize, bool)>,
    dist_count: usize,
    limit: usize,
}

impl InferencePlan {
    pub fn new(program: &GroundProgram, query: &GroundAtom) -> Self {
        Self::with_limit(program, query, DEFAULT_ENUMERATION_LIMIT)
    }

    pub fn with_limit(program: &GroundProgram, query: &GroundAtom, limit: usize) -> Self {
        let Some(q) = program.atom_id(query) else {
            return InferencePlan {
                query: None,
                atom_count: 0,
                groups: Vec::new(),
                choices: Vec::new(),
                dists: Vec::new(),
                dist_count: 0,
                limit,
            };
        };
        let mut by_head: HashMap<usize, Vec<usize>> = HashMap::new();
        for (ri, r) in program.rules.iter().enumerate() {
            by_head.entry(r.head).or_default().push(ri);
        }
        let mut relevant_atoms = HashSet::from([q]);
        let mut relevant_rules = HashSet::new();
        let mut stack = vec![q];
        while let Some(a) = stack.pop() {
            for &ri in by_head.get(&a).map(Vec::as_slice).unwrap_or(&[]) {
                relevant_rules.insert(ri);
                for l in &program.rules[ri].body {
                    let b = match *l {
                        GroundLiteral::Pos(b) | GroundLiteral::Neg(b) => b,
                        GroundLiteral::Cmp { atom, .. } => atom,
                    };
                    if relevant_atoms.insert(b) {
                        stack.push(b);
                    }
                }
            }
        }

        let mut choice_of_rule = HashMap::new();
        let mut choices = Vec::new();
        for (ci, origin) in program.choices.iter().enumerate() {
            match *origin {
                Origin::Rule(ri) => {
                    choice_of_rule.insert(ri, ci);
                    if relevant_rules.contains(&ri) {
                        choices.push((ci, None));
                    }
                }
                Origin::External(a) => {
                    if relevant_atoms.contains(&a) {
                        choices.push((ci, Some(a)));
                    }
                }
            }
        }
        let dists: Vec<(usize, bool)> = program
            .dists
            .iter()
            .enumerate()
            .filter(|(_, d)| relevant_atoms.contains(&d.atom))
            .map(|(di, d)| (di, matches!(d.origin, Origin::External(_))))
            .collect();

        let rank_of_atom: HashMap<usize, usize> = program.rules.iter().map(|r| (r.head, r.rank)).collect();
        let mut order: Vec<usize> = relevant_rules.into_iter().collect();
        order.sort_unstable();
        let mut groups: Vec<(usize, Group)> = Vec::new();
        for ri in order {
            let r = &program.rules[ri];
            let body: Vec<CLit> = r
                .body
                .iter()
                .map(|l| match *l {
                    GroundLiteral::Pos(a) => CLit::Pos(a),
                    GroundLiteral::Neg(a) => CLit::Neg(a),
                    GroundLiteral::Cmp { atom, op, threshold } => {
                        let dist = program.dist_of_atom[&atom];
                        let k = program.dists[dist]
                            .thresholds
                            .iter()
                            .position(|&t| t == threshold)
                            .expect("threshold registered during grounding");
                        CLit::Cmp {
                            dist,
                            point: 2 * k + 1,
                            op,
                        }
                    }
                })
                .collect();
            let effect = match r.kind {
                RuleKind::Deterministic => Effect::Atom(r.head),
                RuleKind::Choice(_) => Effect::Coin(choice_of_rule[&ri], r.head),
                RuleKind::Distribution { .. } => Effect::Define(program.dist_of_atom.get(&r.head).copied().unwrap_or(usize::MAX)),
            };
            let recursive = r.body.iter().any(|l| match *l {
                GroundLiteral::Pos(a) | GroundLiteral::Neg(a) => rank_of_atom.get(&a) == Some(&r.rank),
                GroundLiteral::Cmp { .. } => false,
            });
            let rule = CRule { effect, body };
            match groups.last_mut() {
                Some((rank, g)) if *rank == r.rank => {
                    g.recursive |= recursive;
                    g.rules.push(rule);
                }
                _ => groups.push((
                    r.rank,
                    Group {
                        rules: vec![rule],
                        recursive,
                    },
                )),
            }
        }
        InferencePlan {
            query: Some(q),
            atom_count: program.atoms.len(),
            groups: groups.into_iter().map(|(_, g)| g).collect(),
            choices,
            dists,
            dist_count: program.dists.len(),
            limit,
        }
    }

    /// Number of probabilistic atoms the query depends on.
    pub fn relevant_atom_count(&self) -> usize {
        self.choices.len() + self.dists.len()
    }

    /// Exact query probability: the sum over joint assignments of the relevant
    /// probabilistic atoms of the assignment weight times the indicator that
    /// the query is derived.
    pub fn probability(&self, table: &GroundAtomTable) -> Result<f64, LangError> {
        let Some(query) = self.query else {
            return Ok(0.0);
        };
        let n_choices = table.bernoulli.len();
        let mut coin = vec![false; n_choices];
        let mut cat = vec![0usize; self.dist_count];
        // (slot, outcomes as (value, weight)); slots < n_choices are coins.
        let mut free: Vec<(usize, Vec<(usize, f64)>)> = Vec::new();
        for &(ci, _) in &self.choices {
            let p = table.bernoulli[ci].probability;
            if p <= 0.0 {
                coin[ci] = false;
            } else if p >= 1.0 {
                coin[ci] = true;
            } else {
                free.push((ci, vec![(0, 1.0 - p), (1, p)]));
            }
        }
        for &(di, _) in &self.dists {
            let outcomes: Vec<(usize, f64)> = table.partitions[di]
                .probabilities
                .iter()
                .enumerate()
                .filter(|(_, &w)| w > 0.0)
                .map(|(i, &w)| (i, w))
                .collect();
            if outcomes.len() == 1 {
                cat[di] = outcomes[0].0;
            } else {
                free.push((n_choices + di, outcomes));
            }
        }
        let assignments: f64 = free.iter().map(|(_, o)| o.len() as f64).product();
        if free.len() > self.limit || assignments > 2f64.powi(self.limit as i32) {
            return Err(LangError::UnsupportedScale {
                vars: free.len(),
                assignments,
                limit: self.limit,
            });
        }

        let mut truth = vec![false; self.atom_count];
        let mut defined = vec![false; self.dist_count];
        let mut digits = vec![0usize; free.len()];
        let mut total = 0.0;
        loop {
            let mut weight = 1.0;
            for ((slot, outcomes), &d) in free.iter().zip(&digits) {
                let (value, w) = outcomes[d];
                weight *= w;
                if *slot < n_choices {
                    coin[*slot] = value == 1;
                } else {
                    cat[*slot - n_choices] = value;
                }
            }
            if self.derives(query, &coin, &cat, &mut truth, &mut defined) {
                total += weight;
            }
            let mut k = 0;
            while k < digits.len() {
                digits[k] += 1;
                if digits[k] < free[k].1.len() {
                    break;
                }
                digits[k] = 0;
                k += 1;
            }
            if k == digits.len() {
                break;
            }
        }
        Ok(total.clamp(0.0, 1.0))
    }

    fn derives(&self, query: usize, coin: &[bool], cat: &[usize], truth: &mut [bool], defined: &mut [bool]) -> bool {
        truth.fill(false);
        defined.fill(false);
        for &(ci, atom) in &self.choices {
            if let Some(a) = atom {
                truth[a] = coin[ci];
            }
        }
        for &(di, external) in &self.dists {
            defined[di] = external;
        }
        for g in &self.groups {
            loop {
                let mut changed = false;
                for r in &g.rules {
                    let holds = r.body.iter().all(|l| match *l {
                        CLit::Pos(a) => truth[a],
                        CLit::Neg(a) => !truth[a],
                        CLit::Cmp { dist, point, op } => defined[dist] && cmp_holds(cat[dist], point, op),
                    });
                    if !holds {
                        continue;
                    }
                    match r.effect {
                        Effect::Atom(h) => {
                            if !truth[h] {
                                truth[h] = true;
                                changed = true;
                            }
                        }
                        Effect::Coin(ci, h) => {
                            if coin[ci] && !truth[h] {
                                truth[h] = true;
                                changed = true;
                            }
                        }
                        Effect::Define(d) => {
                            if d != usize::MAX && !defined[d] {
                                defined[d] = true;
                                changed = true;
                            }
                        }
                    }
                }
                if !g.recursive || !changed {
                    break;
                }
            }
        }
        truth[query]
    }
}

/// Exact probability of `query` under the bound atom probabilities.
pub fn infer(table: &GroundAtomTable, program: &GroundProgram, query: &GroundAtom) -> Result<f64, LangError> {
    InferencePlan::new(program, query).probability(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{StaRMap, TagLayer};
    use crate::grid::GridSpec;
    use crate::lang::{ground, parse_program};
    use std::collections::BTreeMap;

    fn empty_map() -> StaRMap {
        StaRMap {
            grid: GridSpec::new([0.0, 0.0], 1.0, 1, 1),
            sample_count: 2,
            seed: 0,
            layers: BTreeMap::new(),
        }
    }

    fn run(src: &str, perception: &[PerceptionFact]) -> f64 {
        let p = parse_program(src).unwrap();
        let g = ground(&p, &BTreeMap::new()).unwrap();
        let t = bind_atoms(&g, &empty_map(), Vec2::new(0.5, 0.5), perception).unwrap();
        infer(&t, &g, &g.query).unwrap()
    }

    #[test]
    fn single_categorical_fact() {
        let p = run("0.95 :: over(x, park).\nconstitution(x, z) :- over(x, park).", &[]);
        assert!((p - 0.95).abs() < 1e-15);
    }

    #[test]
    fn unconditional_query() {
        assert_eq!(run("constitution(x, z).", &[]), 1.0);
    }

    #[test]
    fn product_of_independent_atoms() {
        let p = run("0.5 :: a.\n0.5 :: b.\nconstitution(x, z) :- a, b.", &[]);
        assert!((p - 0.25).abs() < 1e-15);
    }

    #[test]
    fn median_and_tail() {
        let src = "distance(x, road) ~ normal(100, 1).\nconstitution(x, z) :- distance(x, road) > 100.";
        assert!((run(src, &[]) - 0.5).abs() < 1e-15);
        let src = "distance(x, road) ~ normal(100, 1).\nconstitution(x, z) :- distance(x, road) < 95.";
        let p = run(src, &[]);
        // Φ(−5) = 2.866515718791939e-7
        assert!((p / 2.866515718791939e-7 - 1.0).abs() < 1e-9, "{p}");
    }

    #[test]
    fn three_interval_partition() {
        let src = "d ~ normal(60, 400).\nnear :- d < 50.\nmid :- d < 80.\nconstitution(x, z) :- mid, \\+ near.";
        let p = parse_program(src).unwrap();
        let g = ground(&p, &BTreeMap::new()).unwrap();
        let t = bind_atoms(&g, &empty_map(), Vec2::new(0.5, 0.5), &[]).unwrap();
        let part = t.partition_of(&GroundAtom::new("d", &[])).unwrap();
        assert_eq!(part.thresholds, vec![50.0, 80.0]);
        let intervals: Vec<f64> = part.probabilities.iter().step_by(2).copied().collect();
        assert_eq!(intervals.len(), 3);
        assert!((part.probabilities.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let expected = normal_cdf(1.0) - normal_cdf(-0.5);
        assert!((infer(&t, &g, &g.query).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn degenerate_value_exact_at_threshold() {
        let src = "fast :- velocity(z) >= 0.8.\nconstitution(x, z) :- \\+ fast.";
        let at = |v: f64| run(src, &[PerceptionFact::value(GroundAtom::new("velocity", &["z"]), v)]);
        assert_eq!(at(0.8), 0.0);
        assert_eq!(at(0.79), 1.0);
        assert_eq!(at(1.0), 0.0);
    }

    #[test]
    fn perception_fact_probability() {
        let src = "constitution(x, z) :- \\+ obstacle(x).";
        let p = run(src, &[PerceptionFact::fact(GroundAtom::new("obstacle", &["x"]), 0.2)]);
        assert!((p - 0.8).abs() < 1e-15);
        assert_eq!(run(src, &[]), 1.0);
    }

    #[test]
    fn undeclared_distribution() {
        let p = parse_program("constitution(x, z) :- speed(z) < 1.").unwrap();
        let g = ground(&p, &BTreeMap::new()).unwrap();
        let err = bind_atoms(&g, &empty_map(), Vec2::new(0.5, 0.5), &[]).unwrap_err();
        assert!(matches!(err, LangError::UndeclaredDistribution(_)));
    }

    #[test]
    fn outside_grid_and_missing_layer() {
        let p = parse_program("constitution(X, Z) :- \\+ over(X, red).").unwrap();
        let b: BTreeMap<String, String> = [("X".into(), "x".into()), ("Z".into(), "z".into())].into();
        let g = ground(&p, &b).unwrap();
        assert!(matches!(
            bind_atoms(&g, &empty_map(), Vec2::new(3.0, 0.5), &[]),
            Err(LangError::OutsideGrid { .. })
        ));
        assert!(matches!(
            bind_atoms(&g, &empty_map(), Vec2::new(0.5, 0.5), &[]),
            Err(LangError::MissingLayer(_))
        ));
        let mut m = empty_map();
        m.layers.insert(
            "red".into(),
            TagLayer {
                over: vec![0.3],
                distance_mean: vec![0.0],
                distance_variance: vec![0.0],
            },
        );
        let t = bind_atoms(&g, &m, Vec2::new(0.5, 0.5), &[]).unwrap();
        assert!((infer(&t, &g, &g.query).unwrap() - 0.7).abs() < 1e-15);
    }

    #[test]
    fn enumeration_limit() {
        let mut src = String::new();
        let mut body = Vec::new();
        for i in 0..21 {
            src.push_str(&format!("0.5 :: a{i}.\n"));
            body.push(format!("a{i}"));
        }
        src.push_str(&format!("constitution(x, z) :- {}.", body.join(", ")));
        let p = parse_program(&src).unwrap();
        let g = ground(&p, &BTreeMap::new()).unwrap();
        let t = bind_atoms(&g, &empty_map(), Vec2::new(0.5, 0.5), &[]).unwrap();
        assert!(matches!(
            infer(&t, &g, &g.query),
            Err(LangError::UnsupportedScale { vars: 21, .. })
        ));
        let plan = InferencePlan::with_limit(&g, &g.query, 21);
        assert!((plan.probability(&t).unwrap() - 0.5f64.powi(21)).abs() < 1e-18);
    }

    #[test]
    fn unreachable_atoms_ignored() {
        let mut src = String::from("0.3 :: a.\nconstitution(x, z) :- a.\n");
        for i in 0..30 {
            src.push_str(&format!("0.5 :: junk{i}.\n"));
        }
        assert!((run(&src, &[]) - 0.3).abs() < 1e-15);
    }

    #[test]
    fn positive_recursion_fixpoint() {
        let src = "0.5 :: edge(a, b).\nedge(b, c).\npath(X, Y) :- edge(X, Y).\n\
                   path(X, Y) :- edge(X, W), path(W, Y).\nconstitution(x, z) :- path(a, c).";
        assert!((run(src, &[]) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn conditional_distribution_definedness() {
        let src = "0.4 :: windy.\ngust ~ normal(10, 0) :- windy.\nconstitution(x, z) :- gust > 5.";
        assert!((run(src, &[]) - 0.4).abs() < 1e-15);
    }
}
