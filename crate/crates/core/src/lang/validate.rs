use std::collections::{BTreeMap, BTreeSet, HashMap};

use petgraph::algo::tarjan_scc;
use petgraph::graph::{DiGraph, NodeIndex};

use super::ast::*;
use super::{LangError, QUERY_PREDICATE};

fn semantic(pos: (usize, usize), message: String) -> LangError {
    LangError::Semantic {
        line: pos.0,
        col: pos.1,
        message,
    }
}

pub(super) fn validate(
    program: &ConstitutionProgram,
    positions: &[(usize, usize)],
    doubt_positions: &[(usize, usize)],
) -> Result<(), LangError> {
    check_doubt_features(program, doubt_positions)?;
    check_parameters(program, positions)?;
    check_query(program, positions)?;
    check_usage(program, positions)?;
    check_recursion(program, positions)?;
    Ok(())
}

fn check_doubt_features(program: &ConstitutionProgram, positions: &[(usize, usize)]) -> Result<(), LangError> {
    let mut names = BTreeSet::new();
    for (d, &pos) in program.doubt_features.iter().zip(positions) {
        if !names.insert(d.name.as_str()) {
            return Err(semantic(pos, format!("doubt feature `{}` declared twice", d.name)));
        }
        match &d.domain {
            FeatureDomain::Categorical(cats) => {
                if cats.is_empty() {
                    return Err(semantic(pos, format!("doubt feature `{}` has no categories", d.name)));
                }
                let unique: BTreeSet<_> = cats.iter().collect();
                if unique.len() != cats.len() {
                    return Err(semantic(pos, format!("doubt feature `{}` repeats a category", d.name)));
                }
            }
            FeatureDomain::Interval(a, b) => {
                if !(a.is_finite() && b.is_finite() && a < b) {
                    return Err(semantic(
                        pos,
                        format!("doubt feature `{}` needs a finite interval with lower < upper", d.name),
                    ));
                }
            }
        }
    }
    Ok(())
}

fn check_parameters(program: &ConstitutionProgram, positions: &[(usize, usize)]) -> Result<(), LangError> {
    for (c, &pos) in program.clauses.iter().zip(positions) {
        match c.kind {
            ClauseKind::Categorical(p) if !(0.0..=1.0).contains(&p) => {
                return Err(semantic(pos, format!("probability {p} outside [0, 1]")));
            }
            ClauseKind::Continuous(DistSpec::Normal { mean, variance }) => {
                if !mean.is_finite() || !variance.is_finite() || variance < 0.0 {
                    return Err(semantic(
                        pos,
                        format!("normal({mean}, {variance}) needs a finite mean and a finite non-negative variance"),
                    ));
                }
            }
            _ => {}
        }
        for l in &c.body {
            if let Literal::Cmp { threshold, .. } = l {
                if !threshold.is_finite() {
                    return Err(semantic(pos, "comparison threshold must be finite".into()));
                }
            }
        }
    }
    Ok(())
}

fn check_query(program: &ConstitutionProgram, positions: &[(usize, usize)]) -> Result<(), LangError> {
    let defs: Vec<usize> = program
        .clauses
        .iter()
        .enumerate()
        .filter(|(_, c)| c.head.predicate == QUERY_PREDICATE && c.head.args.len() == 2)
        .map(|(i, _)| i)
        .collect();
    match defs.len() {
        0 => Err(LangError::Program(format!("no `{QUERY_PREDICATE}/2` clause defined"))),
        1 => Ok(()),
        _ => Err(semantic(
            positions[defs[1]],
            format!("`{QUERY_PREDICATE}/2` must be defined by exactly one clause"),
        )),
    }
}

fn check_usage(program: &ConstitutionProgram, positions: &[(usize, usize)]) -> Result<(), LangError> {
    let mut continuous = BTreeSet::new();
    let mut boolean = BTreeSet::new();
    for c in &program.clauses {
        if matches!(c.kind, ClauseKind::Continuous(_)) {
            continuous.insert(c.head.signature());
        } else {
            boolean.insert(c.head.signature());
        }
    }
    for (c, &pos) in program.clauses.iter().zip(positions) {
        let sig = c.head.signature();
        if continuous.contains(&sig) && boolean.contains(&sig) {
            return Err(semantic(
                pos,
                format!("`{sig}` is defined both by a distribution and by boolean clauses"),
            ));
        }
        for l in &c.body {
            let sig = l.atom().signature();
            match l {
                Literal::Pos(_) | Literal::Neg(_) if continuous.contains(&sig) => {
                    return Err(semantic(
                        pos,
                        format!("distributional atom `{sig}` used as a boolean literal; compare it to a threshold"),
                    ));
                }
                Literal::Cmp { .. } if boolean.contains(&sig) => {
                    return Err(semantic(pos, format!("comparison on boolean predicate `{sig}`")));
                }
                _ => {}
            }
        }
    }
    Ok(())
}

struct DepGraph {
    graph: DiGraph<Signature, bool>,
    nodes: HashMap<Signature, NodeIndex>,
}

fn dependency_graph(program: &ConstitutionProgram) -> DepGraph {
    let mut graph = DiGraph::new();
    let mut nodes: HashMap<Signature, NodeIndex> = HashMap::new();
    let mut node = |graph: &mut DiGraph<Signature, bool>, sig: Signature| {
        *nodes.entry(sig.clone()).or_insert_with(|| graph.add_node(sig))
    };
    for c in &program.clauses {
        let head = node(&mut graph, c.head.signature());
        for l in &c.body {
            let body = node(&mut graph, l.atom().signature());
            graph.add_edge(body, head, matches!(l, Literal::Neg(_)));
        }
    }
    DepGraph { graph, nodes }
}

fn check_recursion(program: &ConstitutionProgram, positions: &[(usize, usize)]) -> Result<(), LangError> {
    let dep = dependency_graph(program);
    let probabilistic: BTreeSet<Signature> = program
        .clauses
        .iter()
        .filter(|c| c.is_probabilistic())
        .map(|c| c.head.signature())
        .collect();
    let clause_pos = |sigs: &BTreeSet<&Signature>| {
        program
            .clauses
            .iter()
            .zip(positions)
            .find(|(c, _)| sigs.contains(&c.head.signature()))
            .map(|(_, &p)| p)
            .unwrap_or((1, 1))
    };
    for scc in tarjan_scc(&dep.graph) {
        let members: BTreeSet<NodeIndex> = scc.iter().copied().collect();
        let internal: Vec<bool> = dep
            .graph
            .edge_indices()
            .filter_map(|e| {
                let (a, b) = dep.graph.edge_endpoints(e)?;
                (members.contains(&a) && members.contains(&b)).then(|| dep.graph[e])
            })
            .collect();
        if internal.is_empty() {
            continue;
        }
        let sigs: BTreeSet<&Signature> = scc.iter().map(|&n| &dep.graph[n]).collect();
        let names = sigs.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(", ");
        if internal.iter().any(|&neg| neg) {
            return Err(semantic(
                clause_pos(&sigs),
                format!("negation inside a recursive cycle ({names}) is not stratified"),
            ));
        }
        if sigs.iter().any(|s| probabilistic.contains(*s)) {
            return Err(semantic(
                clause_pos(&sigs),
                format!("recursion through probabilistic predicates ({names}) is not supported"),
            ));
        }
    }
    Ok(())
}

/// Evaluation rank per predicate: every predicate's dependencies have a
/// lower or equal rank, with equality only inside a recursive component.
pub(super) fn predicate_ranks(program: &ConstitutionProgram) -> BTreeMap<Signature, usize> {
    let dep = dependency_graph(program);
    let mut ranks = BTreeMap::new();
    // tarjan_scc yields components in reverse topological order.
    for (rank, scc) in tarjan_scc(&dep.graph).into_iter().rev().enumerate() {
        for n in scc {
            ranks.insert(dep.graph[n].clone(), rank);
        }
    }
    debug_assert_eq!(ranks.len(), dep.nodes.len());
    ranks
}
