use serde::{Deserialize, Serialize};

use super::{AgentModel, SimError};
use crate::geometry::{Feature, MapDocument, PerturbationSpec, Vec2};
use crate::grid::GridSpec;

/// A mission world: map geometry, vertiports, agent model and the tags whose
/// physical polygons end a flight on contact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub map: MapDocument,
    pub start: Vec2,
    pub goal: Vec2,
    pub agent: AgentModel,
    /// Controller tuning flown in missions.
    pub tuning: usize,
    pub crash_tags: Vec<String>,
    /// Tag whose cells carry a speed limit, for reporting.
    #[serde(default)]
    pub speed_limit_tag: Option<String>,
    pub velocity_levels: Vec<f64>,
    /// Perturbed map samples per relation map.
    pub star_map_samples: usize,
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Scenario, SimError> {
        let mut s: Scenario = serde_json::from_str(text).map_err(|e| SimError::Scenario(e.to_string()))?;
        s.map.normalize()?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn validate(&self) -> Result<(), SimError> {
        self.agent.validate()?;
        if self.tuning >= self.agent.profiles.len() {
            return Err(SimError::Scenario(format!("no noise profile for tuning {}", self.tuning)));
        }
        let g = &self.map.grid;
        for (what, p) in [("start", self.start), ("goal", self.goal)] {
            if g.locate(p).is_none() {
                return Err(SimError::Scenario(format!("{what} ({}, {}) lies outside the grid", p.x, p.y)));
            }
        }
        if self.velocity_levels.is_empty()
            || self.velocity_levels.iter().any(|v| !(*v > 0.0 && v.is_finite()))
            || self.velocity_levels.windows(2).any(|w| w[1] <= w[0])
        {
            return Err(SimError::Scenario("velocity levels must be positive and increasing".into()));
        }
        for tag in self.crash_tags.iter().chain(&self.speed_limit_tag) {
            if !self.map.features.iter().any(|f| &f.tag == tag) {
                return Err(SimError::Scenario(format!("no feature carries tag `{tag}`")));
            }
        }
        if self.star_map_samples < 2 {
            return Err(SimError::Scenario("star_map_samples must be at least 2".into()));
        }
        Ok(())
    }

    /// Id of the first crash-tagged physical polygon containing `p`.
    pub fn crash_at(&self, p: Vec2) -> Option<u32> {
        self.map
            .features
            .iter()
            .find(|f| self.crash_tags.contains(&f.tag) && f.contains(p))
            .map(|f| f.id)
    }

    pub fn over_tag(&self, p: Vec2, tag: &str) -> bool {
        self.map.features.iter().any(|f| f.tag == tag && f.contains(p))
    }

    /// Tags that the relation map must cover: every non-vertiport tag.
    pub fn relation_tags(&self) -> Vec<String> {
        self.map
            .map()
            .tags()
            .into_iter()
            .filter(|t| t != "vertiport")
            .collect()
    }
}

const CENTER: Vec2 = Vec2::new(1.5, 1.5);

/// World point at `s` along the start-goal diagonal and `t` across it, both
/// measured from the world center.
fn diag(s: f64, t: f64) -> Vec2 {
    let r = std::f64::consts::FRAC_1_SQRT_2;
    Vec2::new(CENTER.x + r * (s - t), CENTER.y + r * (s + t))
}

fn diag_block(id: u32, tag: &str, s: f64, t0: f64, t1: f64, perturbation: PerturbationSpec) -> Feature {
    Feature::polygon(
        id,
        tag,
        vec![diag(-s, t0), diag(s, t0), diag(s, t1), diag(-s, t1)],
        perturbation,
    )
}

/// Half-thickness of the wall blocks along the diagonal.
const WALL: f64 = 0.3;
const THIN: f64 = 0.15;

/// The 3 m × 3 m testbed. A wall of blocks crosses the start-goal diagonal at
/// the world center:
///
/// * a 16 cm center corridor between two yellow blocks (|t| in [0.08, 0.35]);
/// * red no-fly blocks beyond them, t in [0.35, 1.2] and [-0.65, -0.35];
/// * a green speed-limited block closing the bottom-right side, t in [-1.9, -0.65];
/// * an open gap at the top-left, from t = 1.2 to the map edge.
///
/// `t` is measured across the diagonal, positive toward the top-left corner.
/// The yellow blocks and the bottom-right red block are 0.6 m thick along the
/// diagonal; the top-left red block and the green block are 0.3 m thick. Vertiports sit 0.35 m from the
/// bottom-left and top-right corners. Block positions are uncertain: yellow
/// by 1 cm and red and green by 5 cm (translation standard deviation).
pub fn testbed_scenario() -> Scenario {
    let yellow = PerturbationSpec::isotropic_translation(1e-4);
    let block = PerturbationSpec::isotropic_translation(2.5e-3);
    let exact = PerturbationSpec::default();
    let vertiport = |id, p: Vec2| Feature::rect(id, "vertiport", p.x - 0.1, p.y - 0.1, p.x + 0.1, p.y + 0.1, exact);
    let (start, goal) = (Vec2::new(0.35, 0.35), Vec2::new(2.65, 2.65));
    let features = vec![
        diag_block(1, "yellow", WALL, 0.08, 0.35, yellow),
        diag_block(2, "yellow", WALL, -0.35, -0.08, yellow),
        diag_block(3, "red", THIN, 0.35, 1.2, block),
        diag_block(4, "red", WALL, -0.65, -0.35, block),
        diag_block(5, "green", THIN, -1.9, -0.65, block),
        vertiport(6, start),
        vertiport(7, goal),
    ];
    Scenario {
        name: "testbed".into(),
        description: "3 m x 3 m testbed at 1 cm resolution. Vertiports at (0.35, 0.35) and (2.65, 2.65). \
            A wall crosses the diagonal at the center: a 16 cm corridor between yellow blocks, \
            red no-fly blocks beyond, a green speed-limited block on the bottom-right side and an open gap on the top-left. \
            Coordinates along (s) and across (t) the diagonal from the center: yellow |t| in [0.08, 0.35], \
            red t in [-0.65, -0.35] with |s| < 0.3 and t in [0.35, 1.2] with |s| < 0.15; green t in [-1.9, -0.65], |s| < 0.15."
            .into(),
        map: MapDocument {
            features,
            grid: GridSpec::new([0.0, 0.0], 0.01, 300, 300),
        },
        start,
        goal,
        agent: AgentModel::testbed(),
        tuning: 0,
        crash_tags: vec!["red".into(), "yellow".into()],
        speed_limit_tag: Some("green".into()),
        velocity_levels: vec![0.2, 0.5, 1.0],
        star_map_samples: 100,
    }
}
