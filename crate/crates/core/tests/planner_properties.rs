use proptest::prelude::*;
use ruleflight::grid::GridSpec;
use ruleflight::landscape::{Landscape, LandscapeKind, Provenance};
use ruleflight::planner::*;

#[derive(Debug, Clone)]
struct Instance {
    w: usize,
    h: usize,
    levels: Vec<f64>,
    values: Vec<f64>,
    start: (usize, usize),
    goal: usize,
}

fn instance() -> impl Strategy<Value = Instance> {
    (2usize..=6, 2usize..=6, prop::bool::ANY).prop_flat_map(|(w, h, two)| {
        let levels = if two { vec![0.5, 1.0] } else { vec![0.7] };
        let n = w * h * levels.len();
        let value = prop_oneof![1 => Just(0.0), 1 => Just(1.0), 4 => 0.0005f64..1.0];
        (
            prop::collection::vec(value, n),
            0..w * h,
            0..levels.len(),
            0..w * h,
        )
            .prop_map(move |(values, s, sl, goal)| Instance {
                w,
                h,
                levels: levels.clone(),
                values,
                start: (s, sl),
                goal,
            })
    })
}

fn landscape(i: &Instance) -> Landscape {
    Landscape {
        grid: GridSpec::new([0.0, 0.0], 0.5, i.w, i.h),
        velocity_levels: i.levels.clone(),
        headings: vec![],
        values: i.values.clone(),
        kind: LandscapeKind::Raw,
        provenance: Provenance::default(),
    }
}

/// Edges written out directly from the cost definition.
fn oracle_edges(i: &Instance, cfg: &PlannerConfig, cell: usize, level: usize) -> Vec<((usize, usize), f64)> {
    let n = i.w * i.h;
    let p = |c: usize, l: usize| i.values[l * n + c];
    let mut out = Vec::new();
    let (c, r) = ((cell % i.w) as i64, (cell / i.w) as i64);
    for dc in -1..=1i64 {
        for dr in -1..=1i64 {
            if (dc, dr) == (0, 0) {
                continue;
            }
            let (nc, nr) = (c + dc, r + dr);
            if nc < 0 || nr < 0 || nc >= i.w as i64 || nr >= i.h as i64 {
                continue;
            }
            let to = (nr * i.w as i64 + nc) as usize;
            if p(to, level) < cfg.p_cut {
                continue;
            }
            let len = 0.5 * ((dc * dc + dr * dr) as f64).sqrt();
            let penalty = if cfg.alpha == 0.0 { 0.0 } else { -cfg.alpha * p(to, level).max(cfg.p_floor).ln() };
            out.push(((to, level), penalty + cfg.beta[0] * len / i.levels[level]));
        }
    }
    for l in 0..i.levels.len() {
        if l != level && p(cell, l) >= cfg.p_cut {
            out.push(((cell, l), 0.0));
        }
    }
    out
}

/// Depth-first enumeration of simple paths with cost-bound pruning.
fn exhaustive(i: &Instance, cfg: &PlannerConfig) -> Option<f64> {
    fn go(
        i: &Instance,
        cfg: &PlannerConfig,
        node: (usize, usize),
        cost: f64,
        on_path: &mut Vec<bool>,
        best: &mut Option<f64>,
    ) {
        if best.is_some_and(|b| cost >= b) {
            return;
        }
        if node.0 == i.goal {
            *best = Some(cost);
            return;
        }
        for (to, c) in oracle_edges(i, cfg, node.0, node.1) {
            let k = to.0 * i.levels.len() + to.1;
            if on_path[k] {
                continue;
            }
            on_path[k] = true;
            go(i, cfg, to, cost + c, on_path, best);
            on_path[k] = false;
        }
    }
    let mut on_path = vec![false; i.w * i.h * i.levels.len()];
    on_path[i.start.0 * i.levels.len() + i.start.1] = true;
    let mut best = None;
    go(i, cfg, i.start, 0.0, &mut on_path, &mut best);
    best
}

/// Exact cost-to-goal of every node by reverse Bellman-Ford relaxation.
fn cost_to_go(i: &Instance, cfg: &PlannerConfig) -> Vec<f64> {
    let l = i.levels.len();
    let n = i.w * i.h * l;
    let passable = |k: usize| i.values[(k % l) * i.w * i.h + k / l] >= cfg.p_cut;
    let mut d = vec![f64::INFINITY; n];
    for lv in 0..l {
        if passable(i.goal * l + lv) {
            d[i.goal * l + lv] = 0.0;
        }
    }
    for _ in 0..n {
        let mut changed = false;
        for k in 0..n {
            if !passable(k) || k / l == i.goal {
                continue;
            }
            for (to, c) in oracle_edges(i, cfg, k / l, k % l) {
                let cand = c + d[to.0 * l + to.1];
                if cand < d[k] {
                    d[k] = cand;
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
    d
}

fn config(alpha: f64) -> PlannerConfig {
    PlannerConfig {
        alpha,
        ..PlannerConfig::default()
    }
}

fn start_node(i: &Instance) -> Node {
    Node {
        cell: i.start.0,
        level: i.start.1,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn astar_matches_exhaustive_search(i in instance(), alpha in prop::sample::select(vec![0.0, 0.5, 2.0, 8.0])) {
        let land = landscape(&i);
        let cfg = config(alpha);
        let Ok(graph) = build_graph(&land, &cfg) else { return Ok(()) };
        let oracle = if graph.is_passable(start_node(&i)) { exhaustive(&i, &cfg) } else { None };
        match plan(&graph, start_node(&i), i.goal) {
            Ok(t) => {
                let best = oracle.expect("oracle finds a path too");
                prop_assert!((t.total_cost - best).abs() < 1e-9, "{} vs {best}", t.total_cost);
                t.check(&graph).map_err(TestCaseError::fail)?;
                prop_assert_eq!(t.nodes[0], start_node(&i));
                prop_assert_eq!(t.nodes.last().unwrap().cell, i.goal);
            }
            Err(_) => prop_assert!(oracle.is_none()),
        }
    }

    #[test]
    fn heuristic_never_overestimates(i in instance(), alpha in prop::sample::select(vec![0.0, 2.0])) {
        let land = landscape(&i);
        let cfg = config(alpha);
        let Ok(graph) = build_graph(&land, &cfg) else { return Ok(()) };
        let d = cost_to_go(&i, &cfg);
        let l = i.levels.len();
        for (k, exact) in d.iter().enumerate() {
            if exact.is_finite() {
                prop_assert!(graph.heuristic(k / l, i.goal) <= exact + 1e-12);
            }
        }
    }

    #[test]
    fn raising_alpha_never_raises_the_log_penalty(i in instance()) {
        let land = landscape(&i);
        let mut last = f64::INFINITY;
        for alpha in [0.0, 0.5, 2.0, 8.0] {
            let Ok(graph) = build_graph(&land, &config(alpha)) else { return Ok(()) };
            let Ok(t) = plan(&graph, start_node(&i), i.goal) else { return Ok(()) };
            prop_assert!(t.log_penalty <= last + 1e-9, "alpha {alpha}: {} > {last}", t.log_penalty);
            last = t.log_penalty;
        }
    }

    #[test]
    fn alpha_zero_recovers_the_compliance_blind_plan(i in instance()) {
        let land = landscape(&i);
        let Ok(graph) = build_graph(&land, &config(0.0)) else { return Ok(()) };
        let a = plan(&graph, start_node(&i), i.goal);
        let b = plan_compliance_blind(&graph, start_node(&i), i.goal);
        match (a, b) {
            (Ok(a), Ok(b)) => {
                prop_assert_eq!(a.nodes, b.nodes);
                prop_assert_eq!(a.time_cost, b.time_cost);
            }
            (Err(_), Err(_)) => {}
            (a, b) => prop_assert!(false, "{a:?} vs {b:?}"),
        }
    }
}

#[test]
fn random_instance_node_and_edge_counts() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
    for _ in 0..20 {
        let i = Instance {
            w: 5,
            h: 5,
            levels: vec![0.2, 0.5, 1.0],
            values: (0..75).map(|_| if rng.random_bool(0.3) { 0.0 } else { 0.9 }).collect(),
            start: (0, 0),
            goal: 24,
        };
        let cfg = config(2.0);
        let land = landscape(&i);
        let graph = build_graph(&land, &cfg).unwrap();
        let passable: Vec<usize> = (0..75).filter(|k| i.values[(k % 3) * 25 + k / 3] >= cfg.p_cut).collect();
        assert_eq!(graph.node_count(), passable.len());
        let edges: usize = passable.iter().map(|k| oracle_edges(&i, &cfg, k / 3, k % 3).len()).sum();
        assert_eq!(graph.edge_count(), edges);
    }
}
