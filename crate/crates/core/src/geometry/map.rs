use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{GeometryError, Vec2};
use crate::grid::GridSpec;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianParam {
    #[serde(default)]
    pub mean: f64,
    #[serde(default)]
    pub std: f64,
}

impl GaussianParam {
    pub fn new(mean: f64, std: f64) -> Self {
        Self { mean, std }
    }
}

/// Distribution over 2×2 linear maps `R(rotation) · exp(log_scale) · Shear(shear)`,
/// applied about the feature centroid.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LinearPerturbation {
    pub rotation: GaussianParam,
    pub log_scale: GaussianParam,
    pub shear: GaussianParam,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TranslationPerturbation {
    pub mean: Vec2,
    pub covariance: [[f64; 2]; 2],
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PerturbationSpec {
    pub linear: LinearPerturbation,
    pub translation: TranslationPerturbation,
}

impl PerturbationSpec {
    /// Pure translation with isotropic variance `variance` (m²).
    pub fn isotropic_translation(variance: f64) -> Self {
        Self {
            translation: TranslationPerturbation {
                mean: Vec2::ZERO,
                covariance: [[variance, 0.0], [0.0, variance]],
            },
            ..Default::default()
        }
    }

    fn cholesky(&self, feature: u32) -> Result<[[f64; 2]; 2], GeometryError> {
        let c = self.translation.covariance;
        let bad = |reason: &str| GeometryError::InvalidSpec {
            feature,
            reason: reason.to_string(),
        };
        if c.iter().flatten().any(|v| !v.is_finite()) {
            return Err(bad("non-finite translation covariance"));
        }
        let scale = c[0][0].abs().max(c[1][1].abs()).max(1e-300);
        if (c[0][1] - c[1][0]).abs() > 1e-12 * scale {
            return Err(bad("translation covariance is not symmetric"));
        }
        if c[0][0] < 0.0 || c[1][1] < 0.0 {
            return Err(bad("translation covariance is not positive semi-definite"));
        }
        let l00 = c[0][0].sqrt();
        let (l10, rest) = if l00 > 0.0 {
            let l10 = c[1][0] / l00;
            (l10, c[1][1] - l10 * l10)
        } else if c[1][0] == 0.0 {
            (0.0, c[1][1])
        } else {
            return Err(bad("translation covariance is not positive semi-definite"));
        };
        if rest < -1e-12 * scale {
            return Err(bad("translation covariance is not positive semi-definite"));
        }
        Ok([[l00, 0.0], [l10, rest.max(0.0).sqrt()]])
    }

    pub(crate) fn validate(&self, feature: u32) -> Result<(), GeometryError> {
        let l = &self.linear;
        let finite = [
            l.rotation.mean,
            l.rotation.std,
            l.log_scale.mean,
            l.log_scale.std,
            l.shear.mean,
            l.shear.std,
            self.translation.mean.x,
            self.translation.mean.y,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite {
            return Err(GeometryError::InvalidSpec {
                feature,
                reason: "non-finite linear-map or translation parameter".into(),
            });
        }
        if l.rotation.std < 0.0 || l.log_scale.std < 0.0 || l.shear.std < 0.0 {
            return Err(GeometryError::InvalidSpec {
                feature,
                reason: "negative standard deviation".into(),
            });
        }
        self.cholesky(feature).map(|_| ())
    }

    fn draw(&self, chol: &[[f64; 2]; 2], rng: &mut ChaCha8Rng) -> Affine {
        let mut n = || -> f64 { rng.sample(StandardNormal) };
        let l = &self.linear;
        let rot = l.rotation.mean + l.rotation.std * n();
        let log_s = l.log_scale.mean + l.log_scale.std * n();
        let shear = l.shear.mean + l.shear.std * n();
        let (z0, z1) = (n(), n());
        let s = log_s.exp();
        let (sin, cos) = rot.sin_cos();
        // R · sI · [[1, h], [0, 1]]
        let linear = [
            [s * cos, s * (cos * shear - sin)],
            [s * sin, s * (sin * shear + cos)],
        ];
        let t = self.translation.mean
            + Vec2::new(chol[0][0] * z0, chol[1][0] * z0 + chol[1][1] * z1);
        Affine { linear, t }
    }
}

struct Affine {
    linear: [[f64; 2]; 2],
    t: Vec2,
}

impl Affine {
    fn apply(&self, v: Vec2, pivot: Vec2) -> Vec2 {
        let d = v - pivot;
        let m = &self.linear;
        pivot + Vec2::new(m[0][0] * d.x + m[0][1] * d.y, m[1][0] * d.x + m[1][1] * d.y) + self.t
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Feature {
    pub id: u32,
    pub tag: String,
    pub vertices: Vec<Vec2>,
    /// Vertex-index pairs. Left empty in a document, a ring (closed) or chain
    /// (open) over the vertices in order is assumed.
    #[serde(default)]
    pub edges: Vec<(usize, usize)>,
    pub closed: bool,
    #[serde(default)]
    pub perturbation: PerturbationSpec,
}

impl Feature {
    pub fn polygon(id: u32, tag: &str, vertices: Vec<Vec2>, perturbation: PerturbationSpec) -> Self {
        let mut f = Feature {
            id,
            tag: tag.to_string(),
            vertices,
            edges: Vec::new(),
            closed: true,
            perturbation,
        };
        f.fill_default_edges();
        f
    }

    pub fn polyline(id: u32, tag: &str, vertices: Vec<Vec2>, perturbation: PerturbationSpec) -> Self {
        let mut f = Feature {
            id,
            tag: tag.to_string(),
            vertices,
            edges: Vec::new(),
            closed: false,
            perturbation,
        };
        f.fill_default_edges();
        f
    }

    /// Axis-aligned rectangle `[x0, x1] × [y0, y1]`.
    pub fn rect(id: u32, tag: &str, x0: f64, y0: f64, x1: f64, y1: f64, perturbation: PerturbationSpec) -> Self {
        Self::polygon(
            id,
            tag,
            vec![
                Vec2::new(x0, y0),
                Vec2::new(x1, y0),
                Vec2::new(x1, y1),
                Vec2::new(x0, y1),
            ],
            perturbation,
        )
    }

    fn fill_default_edges(&mut self) {
        if !self.edges.is_empty() || self.vertices.len() < 2 {
            return;
        }
        let n = self.vertices.len();
        self.edges = (0..n - 1).map(|i| (i, i + 1)).collect();
        if self.closed && n >= 3 {
            self.edges.push((n - 1, 0));
        }
    }

    pub fn centroid(&self) -> Vec2 {
        let n = self.vertices.len().max(1) as f64;
        self.vertices.iter().fold(Vec2::ZERO, |acc, v| acc + *v) * (1.0 / n)
    }

    /// Area enclosed by the oriented edge set (closed features).
    pub fn enclosed_area(&self) -> f64 {
        self.edges
            .iter()
            .map(|&(i, j)| self.vertices[i].cross(self.vertices[j]))
            .sum::<f64>()
            .abs()
            * 0.5
    }

    pub fn contains(&self, p: Vec2) -> bool {
        self.closed && super::point_in_edges(p, &self.vertices, &self.edges)
    }

    /// Unsigned distance to the feature as a point set: zero inside closed
    /// polygons, otherwise the nearest edge (or vertex, for edge-less features).
    pub fn distance(&self, p: Vec2) -> f64 {
        if self.contains(p) {
            return 0.0;
        }
        if self.edges.is_empty() {
            return self
                .vertices
                .iter()
                .map(|v| v.dist(p))
                .fold(f64::INFINITY, f64::min);
        }
        self.edges
            .iter()
            .map(|&(i, j)| super::point_segment_distance(p, self.vertices[i], self.vertices[j]))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let bad = |reason: String| GeometryError::InvalidFeature {
            feature: self.id,
            reason,
        };
        if self.tag.trim().is_empty() {
            return Err(bad("empty tag".into()));
        }
        if self.vertices.is_empty() {
            return Err(bad("no vertices".into()));
        }
        if self.vertices.iter().any(|v| !v.is_finite()) {
            return Err(bad("non-finite vertex".into()));
        }
        let n = self.vertices.len();
        if let Some(&(i, j)) = self.edges.iter().find(|&&(i, j)| i >= n || j >= n) {
            return Err(bad(format!("edge ({i}, {j}) references a missing vertex")));
        }
        if self.closed {
            if n < 3 {
                return Err(bad("closed polygon needs at least 3 vertices".into()));
            }
            if self.enclosed_area() <= 0.0 {
                return Err(bad("closed polygon has zero area".into()));
            }
        }
        self.perturbation.validate(self.id)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FeatureMap {
    pub features: Vec<Feature>,
}

impl FeatureMap {
    pub fn new(features: Vec<Feature>) -> Self {
        Self { features }
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        self.features.iter().try_for_each(Feature::validate)
    }

    pub fn has_tag(&self, tag: &str) -> bool {
        self.features.iter().any(|f| f.tag == tag)
    }

    pub fn with_tag<'a>(&'a self, tag: &'a str) -> impl Iterator<Item = &'a Feature> + 'a {
        self.features.iter().filter(move |f| f.tag == tag)
    }

    pub fn tags(&self) -> Vec<String> {
        let mut tags: Vec<String> = self.features.iter().map(|f| f.tag.clone()).collect();
        tags.sort();
        tags.dedup();
        tags
    }
}

/// Map input document: features plus the evaluation grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapDocument {
    pub features: Vec<Feature>,
    pub grid: GridSpec,
}

impl MapDocument {
    pub fn from_json(text: &str) -> Result<Self, String> {
        let mut doc: MapDocument = serde_json::from_str(text).map_err(|e| e.to_string())?;
        doc.normalize().map_err(|e| e.to_string())?;
        Ok(doc)
    }

    pub(crate) fn normalize(&mut self) -> Result<(), GeometryError> {
        for f in &mut self.features {
            f.fill_default_edges();
        }
        if !self.grid.is_valid() {
            return Err(GeometryError::InvalidArgument("invalid grid block".into()));
        }
        self.map().validate()
    }

    pub fn map(&self) -> FeatureMap {
        FeatureMap::new(self.features.clone())
    }
}

/// Draws `n` affine-perturbed copies of `map`. Within one copy every vertex of a
/// feature shares a single draw; edges are copied unchanged.
pub fn sample_maps(map: &FeatureMap, n: usize, seed: u64) -> Result<Vec<FeatureMap>, GeometryError> {
    if n == 0 {
        return Err(GeometryError::InvalidArgument("sample count must be at least 1".into()));
    }
    let chols = map
        .features
        .iter()
        .map(|f| {
            f.perturbation.validate(f.id)?;
            f.perturbation.cholesky(f.id)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let pivots: Vec<Vec2> = map.features.iter().map(Feature::centroid).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let features = map
            .features
            .iter()
            .zip(&chols)
            .zip(&pivots)
            .map(|((f, chol), &pivot)| {
                let affine = f.perturbation.draw(chol, &mut rng);
                Feature {
                    vertices: f.vertices.iter().map(|&v| affine.apply(v, pivot)).collect(),
                    ..f.clone()
                }
            })
            .collect();
        out.push(FeatureMap { features });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square(p: PerturbationSpec) -> FeatureMap {
        FeatureMap::new(vec![Feature::rect(1, "park", 0.0, 0.0, 1.0, 1.0, p)])
    }

    #[test]
    fn zero_perturbation_is_identity() {
        let map = square(PerturbationSpec::default());
        let samples = sample_maps(&map, 5, 3).unwrap();
        assert_eq!(samples.len(), 5);
        for s in samples {
            assert_eq!(s, map);
        }
    }

    #[test]
    fn zero_samples_rejected() {
        let map = square(PerturbationSpec::default());
        assert!(matches!(
            sample_maps(&map, 0, 1),
            Err(GeometryError::InvalidArgument(_))
        ));
    }

    #[test]
    fn non_psd_covariance_rejected() {
        let mut p = PerturbationSpec::isotropic_translation(1.0);
        p.translation.covariance = [[1.0, 2.0], [2.0, 1.0]];
        let err = sample_maps(&square(p), 3, 1).unwrap_err();
        assert!(matches!(err, GeometryError::InvalidSpec { .. }));
        p.translation.covariance = [[1.0, 0.5], [0.4, 1.0]];
        assert!(sample_maps(&square(p), 3, 1).is_err());
        p.translation.covariance = [[-1.0, 0.0], [0.0, 1.0]];
        assert!(sample_maps(&square(p), 3, 1).is_err());
    }

    #[test]
    fn degenerate_psd_covariance_accepted() {
        let mut p = PerturbationSpec::default();
        p.translation.covariance = [[0.0, 0.0], [0.0, 1.0]];
        let s = sample_maps(&square(p), 50, 9).unwrap();
        for m in s {
            let d = m.features[0].vertices[0] - Vec2::ZERO;
            assert_eq!(d.x, 0.0);
        }
    }

    #[test]
    fn per_feature_draws_shared_by_vertices() {
        let map = square(PerturbationSpec {
            linear: LinearPerturbation::default(),
            translation: TranslationPerturbation {
                mean: Vec2::ZERO,
                covariance: [[0.3, 0.1], [0.1, 0.2]],
            },
        });
        for s in sample_maps(&map, 20, 4).unwrap() {
            let f = &s.features[0];
            let t = f.vertices[0] - map.features[0].vertices[0];
            for (v, v0) in f.vertices.iter().zip(&map.features[0].vertices) {
                let d = *v - *v0;
                assert!((d.x - t.x).abs() < 1e-12 && (d.y - t.y).abs() < 1e-12);
            }
            assert_eq!(f.edges, map.features[0].edges);
        }
    }

    #[test]
    fn rotation_keeps_centroid_and_area() {
        let mut p = PerturbationSpec::default();
        p.linear.rotation = GaussianParam::new(0.0, 0.5);
        let map = square(p);
        for s in sample_maps(&map, 10, 2).unwrap() {
            let c = s.features[0].centroid();
            assert!((c.x - 0.5).abs() < 1e-12 && (c.y - 0.5).abs() < 1e-12);
            assert!((s.features[0].enclosed_area() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let map = square(PerturbationSpec::isotropic_translation(0.2));
        assert_eq!(sample_maps(&map, 7, 11).unwrap(), sample_maps(&map, 7, 11).unwrap());
        assert_ne!(sample_maps(&map, 7, 11).unwrap(), sample_maps(&map, 7, 12).unwrap());
    }

    #[test]
    fn single_vertex_translation_mean() {
        // Law of large numbers against the known N(0, I) translation.
        let map = FeatureMap::new(vec![Feature::polyline(
            1,
            "pilot",
            vec![Vec2::ZERO],
            PerturbationSpec::isotropic_translation(1.0),
        )]);
        let n = 10_000;
        let s = sample_maps(&map, n, 17).unwrap();
        let mean = s
            .iter()
            .fold(Vec2::ZERO, |acc, m| acc + m.features[0].vertices[0])
            * (1.0 / n as f64);
        let bound = 3.0 / (n as f64).sqrt();
        assert!(mean.x.abs() < bound && mean.y.abs() < bound, "{mean:?}");
    }

    #[test]
    fn document_rejects_unknown_fields() {
        let ok = r#"{"features":[{"id":1,"tag":"red","vertices":[[0,0],[1,0],[1,1]],"closed":true}],
                     "grid":{"origin":[0,0],"cell_size":0.1,"width":10,"height":10}}"#;
        let doc = MapDocument::from_json(ok).unwrap();
        assert_eq!(doc.features[0].edges, vec![(0, 1), (1, 2), (2, 0)]);
        let bad = ok.replace("\"closed\":true", "\"closed\":true,\"color\":3");
        assert!(MapDocument::from_json(&bad).is_err());
        let degenerate = ok.replace("[[0,0],[1,0],[1,1]]", "[[0,0],[1,0],[2,0]]");
        assert!(MapDocument::from_json(&degenerate).unwrap_err().contains("zero area"));
        let bad_edge = ok.replace("\"closed\":true", "\"closed\":true,\"edges\":[[0,5]]");
        assert!(MapDocument::from_json(&bad_edge).is_err());
    }
}
