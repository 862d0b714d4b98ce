use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{sample_maps, Feature, FeatureMap, GeometryError, Vec2};
use crate::grid::GridSpec;

pub const DEFAULT_SAMPLE_COUNT: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OverEstimate {
    pub probability: f64,
    /// Set when no feature in the samples carries the requested tag.
    pub tag_unknown: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistanceEstimate {
    pub mean: f64,
    pub variance: f64,
}

/// Fraction of sample maps in which `x` lies inside a closed feature tagged `tag`.
pub fn eval_over(samples: &[FeatureMap], x: Vec2, tag: &str) -> Result<OverEstimate, GeometryError> {
    if samples.is_empty() {
        return Err(GeometryError::InvalidArgument("no sample maps".into()));
    }
    if !samples[0].has_tag(tag) {
        log::debug!("eval_over: tag `{tag}` not present in map");
        return Ok(OverEstimate {
            probability: 0.0,
            tag_unknown: true,
        });
    }
    let hits = samples
        .iter()
        .filter(|m| m.with_tag(tag).any(|f| f.contains(x)))
        .count();
    Ok(OverEstimate {
        probability: hits as f64 / samples.len() as f64,
        tag_unknown: false,
    })
}

/// Sample mean and unbiased sample variance of the distance from `x` to the
/// nearest feature tagged `tag`.
pub fn eval_distance(samples: &[FeatureMap], x: Vec2, tag: &str) -> Result<DistanceEstimate, GeometryError> {
    if samples.len() < 2 {
        return Err(GeometryError::InvalidArgument(
            "distance variance needs at least two sample maps".into(),
        ));
    }
    if !samples[0].has_tag(tag) {
        return Err(GeometryError::NoSuchFeature(tag.to_string()));
    }
    let values = samples.iter().map(|m| nearest(m.with_tag(tag), x));
    Ok(moments(values, samples.len()))
}

fn nearest<'a>(features: impl Iterator<Item = &'a Feature>, x: Vec2) -> f64 {
    features.map(|f| f.distance(x)).fold(f64::INFINITY, f64::min)
}

/// Shifted-data moments: exact zero variance and exact mean for constant input.
fn moments(mut values: impl Iterator<Item = f64>, n: usize) -> DistanceEstimate {
    let first = values.next().expect("non-empty");
    let (mut s, mut s2) = (0.0, 0.0);
    for v in values {
        let d = v - first;
        s += d;
        s2 += d * d;
    }
    let nf = n as f64;
    let variance = ((s2 - s * s / nf) / (nf - 1.0)).max(0.0);
    DistanceEstimate {
        mean: first + s / nf,
        variance,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TagLayer {
    pub over: Vec<f64>,
    pub distance_mean: Vec<f64>,
    pub distance_variance: Vec<f64>,
}

/// Grid of fitted spatial-relation parameters: a Bernoulli for `over` and a
/// Gaussian for `distance`, per cell and tag, evaluated at cell centers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StaRMap {
    pub grid: GridSpec,
    pub sample_count: usize,
    pub seed: u64,
    pub layers: BTreeMap<String, TagLayer>,
}

impl StaRMap {
    pub fn tags(&self) -> impl Iterator<Item = &str> {
        self.layers.keys().map(String::as_str)
    }

    pub fn over_at(&self, tag: &str, x: Vec2) -> Option<f64> {
        let cell = self.grid.locate(x)?;
        self.layers.get(tag).map(|l| l.over[cell])
    }

    pub fn distance_at(&self, tag: &str, x: Vec2) -> Option<DistanceEstimate> {
        let cell = self.grid.locate(x)?;
        self.layers.get(tag).map(|l| DistanceEstimate {
            mean: l.distance_mean[cell],
            variance: l.distance_variance[cell],
        })
    }

    /// SHA-256 over the grid, sampling settings and every layer value.
    pub fn content_hash(&self) -> String {
        let mut h = crate::hash::ContentHasher::new();
        let g = &self.grid;
        h.f64s(&[g.origin[0], g.origin[1], g.cell_size])
            .u64(g.width as u64)
            .u64(g.height as u64)
            .u64(self.sample_count as u64)
            .u64(self.seed);
        for (tag, l) in &self.layers {
            h.str(tag).f64s(&l.over).f64s(&l.distance_mean).f64s(&l.distance_variance);
        }
        h.finish()
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let n = self.grid.cell_count();
        for (tag, l) in &self.layers {
            if l.over.len() != n || l.distance_mean.len() != n || l.distance_variance.len() != n {
                return Err(GeometryError::InvalidArgument(format!(
                    "layer `{tag}` does not match the grid dimensions"
                )));
            }
            if l.over.iter().any(|p| !(0.0..=1.0).contains(p))
                || l.distance_variance.iter().any(|v| !(*v >= 0.0))
            {
                return Err(GeometryError::InvalidArgument(format!(
                    "layer `{tag}` holds out-of-range parameters"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct StarMapOptions {
    pub max_cells: usize,
}

impl Default for StarMapOptions {
    fn default() -> Self {
        Self {
            max_cells: 4_000_000,
        }
    }
}

struct SampledFeature {
    feature: Feature,
    lo: Vec2,
    hi: Vec2,
}

impl SampledFeature {
    fn new(feature: Feature) -> Self {
        let (mut lo, mut hi) = (
            Vec2::new(f64::INFINITY, f64::INFINITY),
            Vec2::new(f64::NEG_INFINITY, f64::NEG_INFINITY),
        );
        for v in &feature.vertices {
            lo = Vec2::new(lo.x.min(v.x), lo.y.min(v.y));
            hi = Vec2::new(hi.x.max(v.x), hi.y.max(v.y));
        }
        Self { feature, lo, hi }
    }

    #[inline]
    fn contains(&self, p: Vec2) -> bool {
        p.x >= self.lo.x && p.x <= self.hi.x && p.y >= self.lo.y && p.y <= self.hi.y && self.feature.contains(p)
    }

    /// Distance assuming `p` is not inside the feature.
    #[inline]
    fn distance_outside(&self, p: Vec2) -> f64 {
        let f = &self.feature;
        if f.edges.is_empty() {
            return f.vertices.iter().map(|v| v.dist(p)).fold(f64::INFINITY, f64::min);
        }
        f.edges
            .iter()
            .map(|&(i, j)| super::point_segment_distance(p, f.vertices[i], f.vertices[j]))
            .fold(f64::INFINITY, f64::min)
    }
}

/// Evaluates `over` and `distance` for every cell center and tag over one
/// shared set of `n` sample maps.
pub fn build_star_map(
    map: &FeatureMap,
    tags: &[String],
    grid: GridSpec,
    n: usize,
    seed: u64,
    options: StarMapOptions,
) -> Result<StaRMap, GeometryError> {
    if !grid.is_valid() {
        return Err(GeometryError::InvalidArgument("empty or malformed grid".into()));
    }
    if grid.cell_count() > options.max_cells {
        return Err(GeometryError::GridTooLarge {
            cells: grid.cell_count(),
            limit: options.max_cells,
        });
    }
    if n < 2 {
        return Err(GeometryError::InvalidArgument(
            "a relation map needs at least two sample maps".into(),
        ));
    }
    map.validate()?;
    if let Some(t) = tags.iter().find(|t| !map.has_tag(t)) {
        return Err(GeometryError::NoSuchFeature(t.clone()));
    }
    let samples = sample_maps(map, n, seed)?;

    let mut layers = BTreeMap::new();
    for tag in tags {
        // per sample, the features carrying this tag
        let per_sample: Vec<Vec<SampledFeature>> = samples
            .iter()
            .map(|m| m.with_tag(tag).cloned().map(SampledFeature::new).collect())
            .collect();
        let cells: Vec<(f64, DistanceEstimate)> = (0..grid.cell_count())
            .into_par_iter()
            .map(|cell| {
                let x = grid.center(cell);
                let mut hits = 0usize;
                let values = per_sample.iter().map(|fs| {
                    let mut best = f64::INFINITY;
                    let mut inside = false;
                    for f in fs {
                        if f.feature.closed && f.contains(x) {
                            inside = true;
                            best = 0.0;
                        } else if best > 0.0 {
                            best = best.min(f.distance_outside(x));
                        }
                    }
                    hits += inside as usize;
                    best
                });
                let d = moments(values, n);
                (hits as f64 / n as f64, d)
            })
            .collect();
        layers.insert(
            tag.clone(),
            TagLayer {
                over: cells.iter().map(|c| c.0).collect(),
                distance_mean: cells.iter().map(|c| c.1.mean).collect(),
                distance_variance: cells.iter().map(|c| c.1.variance).collect(),
            },
        );
    }
    Ok(StaRMap {
        grid,
        sample_count: n,
        seed,
        layers,
    })
}
