//! A* over position × velocity-level graphs built from compliance landscapes,
//! trading compliance (−α log p) against travel time.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Vec2;
use crate::landscape::Landscape;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PlannerError {
    #[error("invalid planner config: {0}")]
    InvalidConfig(String),
    #[error("invalid landscape: {0}")]
    InvalidLandscape(String),
    #[error("{what} ({x:.3}, {y:.3}) is not passable")]
    Blocked { what: &'static str, x: f64, y: f64 },
    #[error("no passable cells in the landscape")]
    EmptyGraph,
    #[error("goal unreachable after expanding {expanded} nodes; {} blocking nodes border the reachable region, e.g. {}", .blocking_total, format_nodes(.blocking))]
    NoPath {
        expanded: usize,
        /// First few impassable nodes adjacent to the explored region.
        blocking: Vec<Node>,
        blocking_total: usize,
    },
}

fn format_nodes(nodes: &[Node]) -> String {
    nodes
        .iter()
        .map(|n| format!("(cell {}, level {})", n.cell, n.level))
        .collect::<Vec<_>>()
        .join(", ")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlannerConfig {
    /// Weight of the compliance term.
    pub alpha: f64,
    /// Weights of auxiliary costs; only travel time (first entry) is defined.
    pub beta: Vec<f64>,
    pub p_floor: f64,
    /// Nodes below this probability are left out of the graph.
    pub p_cut: f64,
    pub velocity_switch: bool,
    /// Time charged for a level change, seconds.
    pub switch_time: f64,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            alpha: 2.0,
            beta: vec![1.0],
            p_floor: 1e-6,
            p_cut: 1e-3,
            velocity_switch: true,
            switch_time: 0.0,
        }
    }
}

impl PlannerConfig {
    pub fn validate(&self) -> Result<(), PlannerError> {
        let bad = |m: &str| Err(PlannerError::InvalidConfig(m.to_string()));
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return bad("alpha must be finite and non-negative");
        }
        if self.beta.len() != 1 {
            return bad("beta must hold exactly one weight (travel time)");
        }
        if !(self.beta[0] >= 0.0 && self.beta[0].is_finite()) {
            return bad("beta must be finite and non-negative");
        }
        if !(self.p_floor > 0.0 && self.p_floor <= self.p_cut && self.p_cut < 1.0) {
            return bad("need 0 < p_floor <= p_cut < 1");
        }
        if !(self.switch_time >= 0.0 && self.switch_time.is_finite()) {
            return bad("switch time must be finite and non-negative");
        }
        Ok(())
    }

    fn time_weight(&self) -> f64 {
        self.beta[0]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Node {
    pub cell: usize,
    pub level: usize,
}

/// Neighbor offsets (dcol, drow) in counter-clockwise order from east.
pub const DIRECTIONS: [(i64, i64); 8] = [(1, 0), (1, 1), (0, 1), (-1, 1), (-1, 0), (-1, -1), (0, -1), (1, -1)];

/// Heading in radians of each entry of [`DIRECTIONS`].
pub fn direction_heading(d: usize) -> f64 {
    let (dc, dr) = DIRECTIONS[d];
    (dr as f64).atan2(dc as f64)
}

/// The eight motion headings, as used for directional calibration.
pub fn compass_headings() -> Vec<f64> {
    (0..8).map(direction_heading).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EdgeKind {
    Move { direction: usize },
    Switch,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub to: Node,
    pub kind: EdgeKind,
    /// −α log max(p, p_floor); zero for level switches.
    pub compliance: f64,
    /// β₁ × seconds.
    pub time: f64,
}

/// Implicit graph: nodes and edges are generated on demand from the landscape.
#[derive(Debug, Clone)]
pub struct SearchGraph<'a> {
    pub landscape: &'a Landscape,
    pub config: PlannerConfig,
    /// Landscape heading layer used for each motion direction.
    heading_of_direction: [usize; 8],
    passable: Vec<bool>,
}

fn angle_gap(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(std::f64::consts::TAU);
    d.min(std::f64::consts::TAU - d)
}

pub fn build_graph<'a>(landscape: &'a Landscape, config: &PlannerConfig) -> Result<SearchGraph<'a>, PlannerError> {
    config.validate()?;
    landscape
        .validate()
        .map_err(|e| PlannerError::InvalidLandscape(e.to_string()))?;
    if landscape.velocity_levels.iter().any(|v| *v <= 0.0) {
        return Err(PlannerError::InvalidLandscape("velocity levels must be positive".into()));
    }
    let mut heading_of_direction = [0; 8];
    if !landscape.headings.is_empty() {
        for (d, slot) in heading_of_direction.iter_mut().enumerate() {
            let want = direction_heading(d);
            *slot = (0..landscape.headings.len())
                .min_by(|&a, &b| {
                    angle_gap(landscape.headings[a], want).total_cmp(&angle_gap(landscape.headings[b], want))
                })
                .unwrap();
        }
    }
    let n = landscape.grid.cell_count();
    let levels = landscape.velocity_levels.len();
    let heads = landscape.heading_count();
    let mut passable = vec![false; n * levels];
    for (i, slot) in passable.iter_mut().enumerate() {
        let (cell, level) = (i / levels, i % levels);
        *slot = (0..heads).any(|h| landscape.value_directed(cell, level, h) >= config.p_cut);
    }
    if !passable.iter().any(|p| *p) {
        return Err(PlannerError::EmptyGraph);
    }
    Ok(SearchGraph {
        landscape,
        config: config.clone(),
        heading_of_direction,
        passable,
    })
}

impl SearchGraph<'_> {
    pub fn levels(&self) -> usize {
        self.landscape.velocity_levels.len()
    }

    pub fn index(&self, n: Node) -> usize {
        n.cell * self.levels() + n.level
    }

    pub fn node(&self, index: usize) -> Node {
        Node {
            cell: index / self.levels(),
            level: index % self.levels(),
        }
    }

    pub fn is_passable(&self, n: Node) -> bool {
        self.passable[self.index(n)]
    }

    pub fn node_count(&self) -> usize {
        self.passable.iter().filter(|p| **p).count()
    }

    pub fn edge_count(&self) -> usize {
        (0..self.passable.len())
            .filter(|&i| self.passable[i])
            .map(|i| self.edges(self.node(i)).count())
            .sum()
    }

    /// Probability governing an edge into `to` along `direction`.
    fn edge_probability(&self, to: Node, direction: usize) -> f64 {
        self.landscape
            .value_directed(to.cell, to.level, self.heading_of_direction[direction])
    }

    /// Outgoing edges of a passable node, moves first in [`DIRECTIONS`] order.
    pub fn edges(&self, from: Node) -> impl Iterator<Item = Edge> + '_ {
        let grid = self.landscape.grid;
        let (c, r) = grid.col_row(from.cell);
        let cfg = &self.config;
        let beta = cfg.time_weight();
        let v = self.landscape.velocity_levels[from.level];
        let moves = DIRECTIONS.iter().enumerate().filter_map(move |(d, &(dc, dr))| {
            let (nc, nr) = (c as i64 + dc, r as i64 + dr);
            if nc < 0 || nr < 0 || nc >= grid.width as i64 || nr >= grid.height as i64 {
                return None;
            }
            let to = Node {
                cell: grid.index(nc as usize, nr as usize),
                level: from.level,
            };
            let p = self.edge_probability(to, d);
            if p < cfg.p_cut {
                return None;
            }
            let len = if dc != 0 && dr != 0 { std::f64::consts::SQRT_2 } else { 1.0 } * grid.cell_size;
            Some(Edge {
                to,
                kind: EdgeKind::Move { direction: d },
                compliance: compliance_term(cfg.alpha, p, cfg.p_floor),
                time: beta * len / v,
            })
        });
        let switches = (0..self.levels())
            .filter(move |&l| cfg.velocity_switch && l != from.level)
            .map(move |level| Node {
                cell: from.cell,
                level,
            })
            .filter(move |&to| self.is_passable(to))
            .map(move |to| Edge {
                to,
                kind: EdgeKind::Switch,
                compliance: 0.0,
                time: beta * cfg.switch_time,
            });
        moves.chain(switches)
    }

    /// Admissible lower bound on the remaining cost.
    pub fn heuristic(&self, from: usize, goal_cell: usize) -> f64 {
        let g = &self.landscape.grid;
        let v_max = self.landscape.velocity_levels.iter().cloned().fold(0.0, f64::max);
        self.config.time_weight() * g.center(from).dist(g.center(goal_cell)) / v_max
    }
}

fn compliance_term(alpha: f64, p: f64, floor: f64) -> f64 {
    if alpha == 0.0 {
        0.0
    } else {
        -alpha * p.max(floor).ln()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Waypoint {
    pub x: f64,
    pub y: f64,
    /// Commanded speed for the leg ending at this waypoint, m/s.
    pub speed: f64,
    /// Direction to the next waypoint (the previous leg's for the last one), rad.
    pub heading: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub nodes: Vec<Node>,
    pub waypoints: Vec<Waypoint>,
    pub total_cost: f64,
    pub compliance_cost: f64,
    pub time_cost: f64,
    /// −Σ log max(p, p_floor) over entered nodes, without the α weight.
    pub log_penalty: f64,
    /// Planned flight time in seconds.
    pub duration: f64,
}

#[derive(Clone, Copy, PartialEq)]
struct Open {
    f: f64,
    index: usize,
}

impl Eq for Open {}

impl Ord for Open {
    // min-heap on (f, index)
    fn cmp(&self, other: &Self) -> Ordering {
        other.f.total_cmp(&self.f).then_with(|| other.index.cmp(&self.index))
    }
}

impl PartialOrd for Open {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

const BLOCKING_LISTED: usize = 12;

/// Minimum-cost path from `start` to any level of `goal_cell`. Ties in `f`
/// are expanded in increasing node index.
pub fn plan(graph: &SearchGraph, start: Node, goal_cell: usize) -> Result<Trajectory, PlannerError> {
    let grid = graph.landscape.grid;
    if start.cell >= grid.cell_count() || goal_cell >= grid.cell_count() || start.level >= graph.levels() {
        return Err(PlannerError::InvalidConfig("start or goal outside the landscape".into()));
    }
    if !graph.is_passable(start) {
        let c = grid.center(start.cell);
        return Err(PlannerError::Blocked {
            what: "start",
            x: c.x,
            y: c.y,
        });
    }
    if !(0..graph.levels()).any(|l| graph.is_passable(Node { cell: goal_cell, level: l })) {
        let c = grid.center(goal_cell);
        return Err(PlannerError::Blocked {
            what: "goal",
            x: c.x,
            y: c.y,
        });
    }
    let total = grid.cell_count() * graph.levels();
    let mut g = vec![f64::INFINITY; total];
    let mut parent = vec![usize::MAX; total];
    let mut closed = vec![false; total];
    let mut heap = BinaryHeap::new();
    let s = graph.index(start);
    g[s] = 0.0;
    heap.push(Open {
        f: graph.heuristic(start.cell, goal_cell),
        index: s,
    });
    let mut expanded = 0;
    while let Some(Open { index, .. }) = heap.pop() {
        if closed[index] {
            continue;
        }
        closed[index] = true;
        expanded += 1;
        let node = graph.node(index);
        if node.cell == goal_cell {
            return Ok(trajectory(graph, &parent, index));
        }
        for e in graph.edges(node) {
            let j = graph.index(e.to);
            if closed[j] {
                continue;
            }
            let cand = g[index] + e.compliance + e.time;
            if cand < g[j] {
                g[j] = cand;
                parent[j] = index;
                heap.push(Open {
                    f: cand + graph.heuristic(e.to.cell, goal_cell),
                    index: j,
                });
            }
        }
    }
    Err(no_path(graph, &closed, expanded))
}

fn no_path(graph: &SearchGraph, closed: &[bool], expanded: usize) -> PlannerError {
    let grid = graph.landscape.grid;
    let mut blocking = Vec::new();
    let mut seen = vec![false; closed.len()];
    for i in (0..closed.len()).filter(|&i| closed[i]) {
        let n = graph.node(i);
        let (c, r) = grid.col_row(n.cell);
        for &(dc, dr) in &DIRECTIONS {
            let (nc, nr) = (c as i64 + dc, r as i64 + dr);
            if nc < 0 || nr < 0 || nc >= grid.width as i64 || nr >= grid.height as i64 {
                continue;
            }
            let m = Node {
                cell: grid.index(nc as usize, nr as usize),
                level: n.level,
            };
            let j = graph.index(m);
            if !closed[j] && !seen[j] {
                seen[j] = true;
                blocking.push(m);
            }
        }
    }
    let blocking_total = blocking.len();
    blocking.truncate(BLOCKING_LISTED);
    PlannerError::NoPath {
        expanded,
        blocking,
        blocking_total,
    }
}

fn trajectory(graph: &SearchGraph, parent: &[usize], goal: usize) -> Trajectory {
    let mut idx = vec![goal];
    while parent[*idx.last().unwrap()] != usize::MAX {
        idx.push(parent[*idx.last().unwrap()]);
    }
    idx.reverse();
    let nodes: Vec<Node> = idx.iter().map(|&i| graph.node(i)).collect();
    path_from_nodes(graph, nodes)
}

/// Costs and waypoints of a node path; consecutive nodes must be joined by edges.
pub fn path_from_nodes(graph: &SearchGraph, nodes: Vec<Node>) -> Trajectory {
    let land = graph.landscape;
    let cfg = &graph.config;
    let (mut compliance_cost, mut time_cost, mut log_penalty, mut duration) = (0.0, 0.0, 0.0, 0.0);
    for w in nodes.windows(2) {
        let edge = graph
            .edges(w[0])
            .find(|e| e.to == w[1])
            .expect("consecutive nodes are joined by an edge");
        compliance_cost += edge.compliance;
        time_cost += edge.time;
        match edge.kind {
            EdgeKind::Move { direction } => {
                let p = graph.edge_probability(w[1], direction);
                log_penalty -= p.max(cfg.p_floor).ln();
                let (dc, dr) = DIRECTIONS[direction];
                let len = ((dc * dc + dr * dr) as f64).sqrt() * land.grid.cell_size;
                duration += len / land.velocity_levels[w[1].level];
            }
            EdgeKind::Switch => duration += cfg.switch_time,
        }
    }
    // one waypoint per visited cell; a level switch only changes the speed of the next leg
    let mut cells: Vec<Node> = Vec::new();
    for n in &nodes {
        match cells.last_mut() {
            Some(last) if last.cell == n.cell => last.level = n.level,
            _ => cells.push(*n),
        }
    }
    let centers: Vec<Vec2> = cells.iter().map(|n| land.grid.center(n.cell)).collect();
    let mut waypoints = Vec::with_capacity(cells.len());
    for (k, n) in cells.iter().enumerate() {
        let heading = if k + 1 < centers.len() {
            (centers[k + 1] - centers[k]).angle()
        } else if k > 0 {
            (centers[k] - centers[k - 1]).angle()
        } else {
            0.0
        };
        waypoints.push(Waypoint {
            x: centers[k].x,
            y: centers[k].y,
            speed: land.velocity_levels[n.level],
            heading,
        });
    }
    Trajectory {
        nodes,
        waypoints,
        total_cost: compliance_cost + time_cost,
        compliance_cost,
        time_cost,
        log_penalty,
        duration,
    }
}

impl Trajectory {
    /// `index,x,y,speed,heading` rows.
    pub fn write_csv<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(w, "index,x,y,speed,heading")?;
        for (i, p) in self.waypoints.iter().enumerate() {
            writeln!(w, "{i},{},{},{},{}", p.x, p.y, p.speed, p.heading)?;
        }
        Ok(())
    }

    /// Checks neighbor steps, heading consistency and the cost identity.
    pub fn check(&self, graph: &SearchGraph) -> Result<(), String> {
        let grid = graph.landscape.grid;
        for w in self.nodes.windows(2) {
            let (a, b) = (grid.col_row(w[0].cell), grid.col_row(w[1].cell));
            let (dc, dr) = (a.0.abs_diff(b.0), a.1.abs_diff(b.1));
            if dc > 1 || dr > 1 {
                return Err(format!("cells {} and {} are not neighbors", w[0].cell, w[1].cell));
            }
            if w[0].cell == w[1].cell && w[0].level == w[1].level {
                return Err("repeated node".into());
            }
        }
        for w in self.waypoints.windows(2) {
            let h = (w[1].y - w[0].y).atan2(w[1].x - w[0].x);
            if (h - w[0].heading).abs() > 1e-12 {
                return Err("waypoint heading does not point at the next waypoint".into());
            }
        }
        if (self.total_cost - self.compliance_cost - self.time_cost).abs() > 1e-9 {
            return Err("total cost is not compliance plus time".into());
        }
        Ok(())
    }
}

/// Compliance-blind baseline: plans on the graph's passability alone, with
/// every passable node given probability 1, so only travel time matters.
pub fn plan_compliance_blind(graph: &SearchGraph, start: Node, goal_cell: usize) -> Result<Trajectory, PlannerError> {
    let mut blind = graph.landscape.clone();
    let cut = graph.config.p_cut;
    for v in blind.values.iter_mut() {
        *v = if *v >= cut { 1.0 } else { 0.0 };
    }
    let g = build_graph(&blind, &graph.config)?;
    plan(&g, start, goal_cell)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridSpec;
    use crate::landscape::{LandscapeKind, Provenance};

    pub(crate) fn land(w: usize, h: usize, levels: Vec<f64>, values: Vec<f64>) -> Landscape {
        Landscape {
            grid: GridSpec::new([0.0, 0.0], 1.0, w, h),
            velocity_levels: levels,
            headings: vec![],
            values,
            kind: LandscapeKind::Raw,
            provenance: Provenance::default(),
        }
    }

    #[test]
    fn uniform_landscape_is_pure_time() {
        let l = land(5, 5, vec![1.0], vec![1.0; 25]);
        let cfg = PlannerConfig {
            alpha: 3.7,
            ..Default::default()
        };
        let g = build_graph(&l, &cfg).unwrap();
        for e in g.edges(Node { cell: 12, level: 0 }) {
            assert_eq!(e.compliance, 0.0);
        }
        let t = plan(&g, Node { cell: 0, level: 0 }, 24).unwrap();
        // straight diagonal
        assert_eq!(t.nodes.iter().map(|n| n.cell).collect::<Vec<_>>(), vec![0, 6, 12, 18, 24]);
        assert!((t.time_cost - 4.0 * std::f64::consts::SQRT_2).abs() < 1e-12);
        assert_eq!(t.compliance_cost, 0.0);
        t.check(&g).unwrap();
    }

    #[test]
    fn cells_below_cut_are_excluded() {
        let cfg = PlannerConfig::default();
        let mut values = vec![1.0; 9];
        values[4] = cfg.p_cut / 2.0;
        let l = land(3, 3, vec![1.0], values);
        let g = build_graph(&l, &cfg).unwrap();
        assert!(!g.is_passable(Node { cell: 4, level: 0 }));
        assert_eq!(g.node_count(), 8);
        let t = plan(&g, Node { cell: 0, level: 0 }, 8).unwrap();
        assert!(t.nodes.iter().all(|n| n.cell != 4));
    }

    #[test]
    fn full_three_level_grid_counts() {
        let l = land(5, 5, vec![0.2, 0.5, 1.0], vec![1.0; 75]);
        let g = build_graph(&l, &PlannerConfig::default()).unwrap();
        assert_eq!(g.node_count(), 75);
        // 72 undirected neighbor pairs per level, both directions, plus 6 switches per cell
        assert_eq!(g.edge_count(), 3 * 144 + 25 * 6);
    }

    #[test]
    fn unreachable_goal_lists_the_blocking_frontier() {
        let mut values = vec![1.0; 25];
        for r in 0..5 {
            values[r * 5 + 2] = 0.0;
        }
        let l = land(5, 5, vec![1.0], values);
        let g = build_graph(&l, &PlannerConfig::default()).unwrap();
        match plan(&g, Node { cell: 0, level: 0 }, 4) {
            Err(PlannerError::NoPath {
                blocking,
                blocking_total,
                ..
            }) => {
                assert_eq!(blocking_total, 5);
                assert!(blocking.iter().all(|n| n.cell % 5 == 2));
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            plan(&g, Node { cell: 2, level: 0 }, 4),
            Err(PlannerError::Blocked { what: "start", .. })
        ));
    }

    #[test]
    fn config_validation() {
        let mut c = PlannerConfig::default();
        c.p_floor = 0.1;
        assert!(c.validate().is_err());
        let mut c = PlannerConfig::default();
        c.beta = vec![1.0, 2.0];
        assert!(c.validate().is_err());
        let mut c = PlannerConfig::default();
        c.alpha = -1.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn slow_level_is_used_where_fast_is_forbidden() {
        // fast level blocked in the middle column; switching is free
        let mut values = vec![1.0; 2 * 15];
        for r in 0..3 {
            values[15 + r * 5 + 2] = 0.0;
        }
        let l = land(5, 3, vec![0.5, 1.0], values);
        let g = build_graph(&l, &PlannerConfig::default()).unwrap();
        let t = plan(&g, Node { cell: 5, level: 1 }, 9).unwrap();
        let mid = t.nodes.iter().find(|n| n.cell == 7).unwrap();
        assert_eq!(mid.level, 0);
        assert_eq!(t.nodes.last().unwrap().level, 1);
        // 5→6 fast, 6→7 and 7→8 slow, 8→9 fast
        assert!((t.duration - (1.0 + 2.0 + 2.0 + 1.0)).abs() < 1e-12);
        t.check(&g).unwrap();
    }

    #[test]
    fn directed_landscape_picks_heading_layer() {
        // heading layers: east-bound travel is forbidden through the middle cell
        let mut l = land(3, 1, vec![1.0], vec![]);
        l.headings = compass_headings();
        for h in 0..8 {
            for c in 0..3 {
                l.values.push(if h == 0 && c == 1 { 0.0 } else { 1.0 });
            }
        }
        let g = build_graph(&l, &PlannerConfig::default()).unwrap();
        assert!(plan(&g, Node { cell: 0, level: 0 }, 2).is_err());
        assert!(plan(&g, Node { cell: 2, level: 0 }, 0).is_ok());
    }
}
