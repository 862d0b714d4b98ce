use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{DoubtFeatureVector, DoubtRow, FeatureSchema, FlowError, EVENT_DIM};

pub const DEFAULT_HIDDEN: usize = 100;
pub const DEFAULT_LAYERS: usize = 5;
/// Bound on every log-scale output.
pub const LOG_SCALE_CLAMP: f64 = 7.0;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Fixed elementwise affine map from error to network coordinates,
/// `(e - mean) / scale`, fitted once from training data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: [f64; 2],
    pub scale: [f64; 2],
}

impl Standardizer {
    pub const IDENTITY: Standardizer = Standardizer {
        mean: [0.0, 0.0],
        scale: [1.0, 1.0],
    };

    /// Per-dimension mean and standard deviation, with the deviation floored
    /// so constant data stays invertible.
    pub fn fit(errors: impl Iterator<Item = [f64; 2]> + Clone) -> Standardizer {
        let n = errors.clone().count().max(1) as f64;
        let mut mean = [0.0; 2];
        for e in errors.clone() {
            mean[0] += e[0];
            mean[1] += e[1];
        }
        mean = [mean[0] / n, mean[1] / n];
        let mut var = [0.0; 2];
        for e in errors {
            var[0] += (e[0] - mean[0]).powi(2);
            var[1] += (e[1] - mean[1]).powi(2);
        }
        let scale = [(var[0] / n).sqrt().max(1e-6), (var[1] / n).sqrt().max(1e-6)];
        Standardizer { mean, scale }
    }

    fn log_det(&self) -> f64 {
        -(self.scale[0].ln() + self.scale[1].ln())
    }
}

/// Masked autoregressive flow. Each layer reverses the coordinate order and
/// applies `z_i = (u_i - mu_i) * exp(-s_i)`, where `mu_i, s_i` come from a
/// masked one-hidden-layer tanh network of `u_{<i}` and the conditioning.
///
/// Hidden units in the first half have degree 0 (conditioning only), the
/// rest degree 1 (also see `u_0`); output `i` reads units of degree `<= i`.
#[derive(Debug, Clone, PartialEq)]
pub struct DoubtFlow {
    pub schema: FeatureSchema,
    pub layers: usize,
    pub hidden: usize,
    pub standardizer: Standardizer,
    pub params: Vec<f64>,
}

/// Offsets of one layer's parameter blocks.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Shape {
    pub h: usize,
    pub c: usize,
}

impl Shape {
    pub fn w_x(&self) -> usize {
        0
    }
    pub fn w_c(&self) -> usize {
        self.h * EVENT_DIM
    }
    pub fn b_h(&self) -> usize {
        self.w_c() + self.h * self.c
    }
    pub fn w_o(&self) -> usize {
        self.b_h() + self.h
    }
    pub fn b_o(&self) -> usize {
        self.w_o() + 2 * EVENT_DIM * self.h
    }
    pub fn per_layer(&self) -> usize {
        self.b_o() + 2 * EVENT_DIM
    }
    pub fn degree(&self, unit: usize) -> usize {
        usize::from(unit >= self.h / 2)
    }
    /// Input `j` feeds hidden `unit`.
    pub fn input_mask(&self, unit: usize, j: usize) -> bool {
        self.degree(unit) > j
    }
    /// Hidden `unit` feeds output `o` (`o = 0, 1` shifts, `2, 3` log-scales).
    pub fn output_mask(&self, o: usize, unit: usize) -> bool {
        o % EVENT_DIM >= self.degree(unit)
    }
}

/// Per-point intermediate values of one layer in the density direction.
#[derive(Debug, Clone, Default)]
pub(crate) struct LayerCache {
    pub u: [f64; 2],
    pub a: Vec<f64>,
    pub s: [f64; 2],
    pub clamped: [bool; 2],
    pub z: [f64; 2],
}

impl DoubtFlow {
    /// Randomly initialised hidden weights and zero output layer, so the
    /// flow starts as the identity map.
    pub fn new(schema: FeatureSchema, layers: usize, hidden: usize, seed: u64) -> Self {
        Self::with_random_weights(schema, layers, hidden, 0.0, seed)
    }

    /// Like [`DoubtFlow::new`] but with output weights drawn uniformly from
    /// `±output_scale / sqrt(fan_in)`.
    pub fn with_random_weights(schema: FeatureSchema, layers: usize, hidden: usize, output_scale: f64, seed: u64) -> Self {
        let shape = Shape {
            h: hidden,
            c: schema.width(),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = vec![0.0; layers * shape.per_layer()];
        let in_bound = 1.0 / ((shape.c + 1) as f64).sqrt();
        let out_bound = output_scale / (hidden.max(1) as f64).sqrt();
        for l in 0..layers {
            let p = &mut params[l * shape.per_layer()..(l + 1) * shape.per_layer()];
            for unit in 0..hidden {
                for j in 0..EVENT_DIM {
                    if shape.input_mask(unit, j) {
                        p[shape.w_x() + unit * EVENT_DIM + j] = rng.random_range(-in_bound..in_bound);
                    }
                }
                for k in 0..shape.c {
                    p[shape.w_c() + unit * shape.c + k] = rng.random_range(-in_bound..in_bound);
                }
            }
            if output_scale > 0.0 {
                for o in 0..2 * EVENT_DIM {
                    for unit in 0..hidden {
                        if shape.output_mask(o, unit) {
                            p[shape.w_o() + o * hidden + unit] = rng.random_range(-out_bound..out_bound);
                        }
                    }
                    p[shape.b_o() + o] = rng.random_range(-out_bound..out_bound);
                }
            }
        }
        DoubtFlow {
            schema,
            layers,
            hidden,
            standardizer: Standardizer::IDENTITY,
            params,
        }
    }

    pub(crate) fn shape(&self) -> Shape {
        Shape {
            h: self.hidden,
            c: self.schema.width(),
        }
    }

    /// Checks parameter count, finiteness and that masked weights are zero.
    pub fn validate(&self) -> Result<(), FlowError> {
        let shape = self.shape();
        if self.layers == 0 || self.hidden == 0 {
            return Err(FlowError::Format("flow needs at least one layer and one hidden unit".into()));
        }
        if self.params.len() != self.layers * shape.per_layer() {
            return Err(FlowError::Format(format!(
                "expected {} parameters, found {}",
                self.layers * shape.per_layer(),
                self.params.len()
            )));
        }
        if self.params.iter().any(|p| !p.is_finite()) {
            return Err(FlowError::Format("non-finite weight".into()));
        }
        let st = &self.standardizer;
        if !(st.mean.iter().all(|m| m.is_finite()) && st.scale.iter().all(|s| s.is_finite() && *s > 0.0)) {
            return Err(FlowError::Format("invalid standardizer".into()));
        }
        for l in 0..self.layers {
            let p = self.layer(l);
            for unit in 0..self.hidden {
                for j in 0..EVENT_DIM {
                    if !shape.input_mask(unit, j) && p[shape.w_x() + unit * EVENT_DIM + j] != 0.0 {
                        return Err(FlowError::Format(format!("layer {l}: masked input weight is non-zero")));
                    }
                }
                for o in 0..2 * EVENT_DIM {
                    if !shape.output_mask(o, unit) && p[shape.w_o() + o * self.hidden + unit] != 0.0 {
                        return Err(FlowError::Format(format!("layer {l}: masked output weight is non-zero")));
                    }
                }
            }
        }
        Ok(())
    }

    pub(crate) fn layer(&self, l: usize) -> &[f64] {
        let n = self.shape().per_layer();
        &self.params[l * n..(l + 1) * n]
    }

    /// One density-direction layer step.
    pub(crate) fn layer_step(&self, l: usize, x: [f64; 2], cond: &[f64], cache: &mut LayerCache) {
        let shape = self.shape();
        let p = self.layer(l);
        let u = [x[1], x[0]];
        cache.u = u;
        cache.a.resize(self.hidden, 0.0);
        let mut out = [0.0; 4];
        out.copy_from_slice(&p[shape.b_o()..shape.b_o() + 4]);
        for unit in 0..self.hidden {
            let mut pre = p[shape.b_h() + unit];
            let wc = &p[shape.w_c() + unit * shape.c..shape.w_c() + (unit + 1) * shape.c];
            for (w, c) in wc.iter().zip(cond) {
                pre += w * c;
            }
            if shape.degree(unit) >= 1 {
                pre += p[shape.w_x() + unit * EVENT_DIM] * u[0];
            }
            let a = pre.tanh();
            cache.a[unit] = a;
            for (o, v) in out.iter_mut().enumerate() {
                if shape.output_mask(o, unit) {
                    *v += p[shape.w_o() + o * self.hidden + unit] * a;
                }
            }
        }
        for i in 0..EVENT_DIM {
            let raw = out[2 + i];
            cache.clamped[i] = !(-LOG_SCALE_CLAMP..=LOG_SCALE_CLAMP).contains(&raw);
            cache.s[i] = raw.clamp(-LOG_SCALE_CLAMP, LOG_SCALE_CLAMP);
            cache.z[i] = (u[i] - out[i]) * (-cache.s[i]).exp();
        }
    }

    /// Maps an error to base coordinates; returns the point and the log
    /// absolute Jacobian determinant of this map.
    pub fn inverse(&self, e: [f64; 2], features: &DoubtFeatureVector) -> Result<([f64; 2], f64), FlowError> {
        let cond = self.schema.encode(features)?;
        Ok(self.inverse_encoded(e, &cond))
    }

    pub(crate) fn inverse_encoded(&self, e: [f64; 2], cond: &[f64]) -> ([f64; 2], f64) {
        let st = &self.standardizer;
        let mut x = [(e[0] - st.mean[0]) / st.scale[0], (e[1] - st.mean[1]) / st.scale[1]];
        let mut log_det = st.log_det();
        let mut cache = LayerCache::default();
        for l in 0..self.layers {
            self.layer_step(l, x, cond, &mut cache);
            log_det -= cache.s[0] + cache.s[1];
            x = cache.z;
        }
        (x, log_det)
    }

    /// Log-density of an error in nats.
    pub fn log_density(&self, e: [f64; 2], features: &DoubtFeatureVector) -> Result<f64, FlowError> {
        if !e.iter().all(|v| v.is_finite()) {
            return Err(FlowError::InvalidArgument("error vector is not finite".into()));
        }
        let cond = self.schema.encode(features)?;
        Ok(self.log_density_encoded(e, &cond))
    }

    pub(crate) fn log_density_encoded(&self, e: [f64; 2], cond: &[f64]) -> f64 {
        let (z, log_det) = self.inverse_encoded(e, cond);
        base_log_density(z) + log_det
    }

    /// Maps a base point to an error; returns the point and the log absolute
    /// Jacobian determinant of this map.
    pub fn forward(&self, z: [f64; 2], features: &DoubtFeatureVector) -> Result<([f64; 2], f64), FlowError> {
        Ok(self.sampler(features)?.forward_with_log_det(z))
    }

    pub fn sampler(&self, features: &DoubtFeatureVector) -> Result<ConditionedSampler, FlowError> {
        let cond = self.schema.encode(features)?;
        Ok(ConditionedSampler::new(self, &cond))
    }

    /// Draws `count` errors; deterministic given `seed`.
    pub fn sample(&self, count: usize, features: &DoubtFeatureVector, seed: u64) -> Result<Vec<[f64; 2]>, FlowError> {
        if count == 0 {
            return Err(FlowError::InvalidArgument("sample count must be positive".into()));
        }
        let sampler = self.sampler(features)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok((0..count).map(|_| sampler.draw(&mut rng)).collect())
    }

    /// Mean negative log-likelihood of `rows` and its gradient with respect
    /// to `params`.
    pub fn nll_gradient(&self, rows: &[DoubtRow]) -> Result<(f64, Vec<f64>), FlowError> {
        if rows.is_empty() {
            return Err(FlowError::InvalidArgument("no rows".into()));
        }
        let conds = rows
            .iter()
            .map(|r| self.schema.encode(&r.features))
            .collect::<Result<Vec<_>, _>>()?;
        let batch: Vec<([f64; 2], &[f64])> = rows.iter().zip(&conds).map(|(r, c)| (r.error, c.as_slice())).collect();
        let mut grad = vec![0.0; self.params.len()];
        let nll = self.nll_and_grad(&batch, &mut grad);
        Ok((nll, grad))
    }

    /// Mean negative log-likelihood of `batch` and its gradient with respect
    /// to `params`, written into `grad` (overwritten).
    pub(crate) fn nll_and_grad(&self, batch: &[([f64; 2], &[f64])], grad: &mut [f64]) -> f64 {
        grad.fill(0.0);
        let shape = self.shape();
        let per = shape.per_layer();
        let h = self.hidden;
        let n = batch.len() as f64;
        let st = &self.standardizer;
        let mut caches = vec![LayerCache::default(); self.layers];
        let mut total = 0.0;
        for &(e, cond) in batch {
            let mut x = [(e[0] - st.mean[0]) / st.scale[0], (e[1] - st.mean[1]) / st.scale[1]];
            let mut log_det = st.log_det();
            for (l, cache) in caches.iter_mut().enumerate() {
                self.layer_step(l, x, cond, cache);
                log_det -= cache.s[0] + cache.s[1];
                x = cache.z;
            }
            total -= base_log_density(x) + log_det;

            // reverse pass; loss = 0.5|z|^2 + sum of s + const
            let mut gz = [x[0] / n, x[1] / n];
            for l in (0..self.layers).rev() {
                let c = &caches[l];
                let p = self.layer(l);
                let g = &mut grad[l * per..(l + 1) * per];
                let mut gout = [0.0; 4];
                let mut gu = [0.0; 2];
                for i in 0..EVENT_DIM {
                    let inv = (-c.s[i]).exp();
                    gu[i] = gz[i] * inv;
                    gout[i] = -gz[i] * inv;
                    gout[2 + i] = if c.clamped[i] { 0.0 } else { -gz[i] * c.z[i] + 1.0 / n };
                }
                for (o, go) in gout.iter().enumerate() {
                    g[shape.b_o() + o] += go;
                }
                for unit in 0..h {
                    let a = c.a[unit];
                    let mut ga = 0.0;
                    for (o, go) in gout.iter().enumerate() {
                        if shape.output_mask(o, unit) {
                            g[shape.w_o() + o * h + unit] += go * a;
                            ga += go * p[shape.w_o() + o * h + unit];
                        }
                    }
                    let gpre = ga * (1.0 - a * a);
                    if gpre == 0.0 {
                        continue;
                    }
                    g[shape.b_h() + unit] += gpre;
                    let base = shape.w_c() + unit * shape.c;
                    for (k, cv) in cond.iter().enumerate() {
                        g[base + k] += gpre * cv;
                    }
                    if shape.degree(unit) >= 1 {
                        g[shape.w_x() + unit * EVENT_DIM] += gpre * c.u[0];
                        gu[0] += gpre * p[shape.w_x() + unit * EVENT_DIM];
                    }
                }
                // undo the reversal: u = [x1, x0]
                gz = [gu[1], gu[0]];
            }
        }
        total / n
    }
}

/// Standard bivariate normal log-density.
pub(crate) fn base_log_density(z: [f64; 2]) -> f64 {
    -LN_2PI - 0.5 * (z[0] * z[0] + z[1] * z[1])
}

#[derive(Debug, Clone)]
struct SamplerLayer {
    mu0: f64,
    s0: f64,
    base_mu1: f64,
    base_s1: f64,
    /// Degree-1 units: (conditioned pre-activation, input weight, shift weight, log-scale weight).
    units: Vec<[f64; 4]>,
}

/// Flow specialised to one conditioning vector for fast repeated sampling.
#[derive(Debug, Clone)]
pub struct ConditionedSampler {
    layers: Vec<SamplerLayer>,
    standardizer: Standardizer,
}

impl ConditionedSampler {
    fn new(flow: &DoubtFlow, cond: &[f64]) -> Self {
        let shape = flow.shape();
        let h = flow.hidden;
        let mut layers = Vec::with_capacity(flow.layers);
        for l in 0..flow.layers {
            let p = flow.layer(l);
            let mut out = [0.0; 4];
            out.copy_from_slice(&p[shape.b_o()..shape.b_o() + 4]);
            let mut units = Vec::new();
            for unit in 0..h {
                let mut pre = p[shape.b_h() + unit];
                for (w, c) in p[shape.w_c() + unit * shape.c..shape.w_c() + (unit + 1) * shape.c].iter().zip(cond) {
                    pre += w * c;
                }
                if shape.degree(unit) == 0 {
                    let a = pre.tanh();
                    for (o, v) in out.iter_mut().enumerate() {
                        *v += p[shape.w_o() + o * h + unit] * a;
                    }
                } else {
                    units.push([
                        pre,
                        p[shape.w_x() + unit * EVENT_DIM],
                        p[shape.w_o() + h + unit],
                        p[shape.w_o() + 3 * h + unit],
                    ]);
                }
            }
            layers.push(SamplerLayer {
                mu0: out[0],
                s0: out[2].clamp(-LOG_SCALE_CLAMP, LOG_SCALE_CLAMP),
                base_mu1: out[1],
                base_s1: out[3],
                units,
            });
        }
        ConditionedSampler {
            layers,
            standardizer: flow.standardizer,
        }
    }

    /// Maps a base point to an error with the log-determinant of the map.
    pub fn forward_with_log_det(&self, z: [f64; 2]) -> ([f64; 2], f64) {
        let mut v = z;
        let mut log_det = 0.0;
        for layer in self.layers.iter().rev() {
            let u0 = v[0] * layer.s0.exp() + layer.mu0;
            let (mut mu1, mut s1) = (layer.base_mu1, layer.base_s1);
            for &[pre, wx, wm, ws] in &layer.units {
                let a = (pre + wx * u0).tanh();
                mu1 += wm * a;
                s1 += ws * a;
            }
            let s1 = s1.clamp(-LOG_SCALE_CLAMP, LOG_SCALE_CLAMP);
            let u1 = v[1] * s1.exp() + mu1;
            log_det += layer.s0 + s1;
            v = [u1, u0];
        }
        let st = &self.standardizer;
        log_det -= st.log_det();
        ([v[0] * st.scale[0] + st.mean[0], v[1] * st.scale[1] + st.mean[1]], log_det)
    }

    pub fn forward(&self, z: [f64; 2]) -> [f64; 2] {
        self.forward_with_log_det(z).0
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> [f64; 2] {
        let z0: f64 = rng.sample(StandardNormal);
        let z1: f64 = rng.sample(StandardNormal);
        self.forward([z0, z1])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    pub(crate) fn schema() -> FeatureSchema {
        FeatureSchema::new("tuning", &["t0", "t1", "t2"], [0.0, 1.5], [-PI, PI])
    }

    fn features() -> DoubtFeatureVector {
        DoubtFeatureVector::new(1, 0.7, 0.4)
    }

    #[test]
    fn identity_at_init() {
        let f = DoubtFlow::new(schema(), DEFAULT_LAYERS, DEFAULT_HIDDEN, 3);
        let lp = f.log_density([0.0, 0.0], &features()).unwrap();
        assert!((lp - (-1.837877)).abs() < 1e-6);
        let lp = f.log_density([1.0, 0.0], &features()).unwrap();
        assert!((lp - (-2.337877)).abs() < 1e-6);
        f.validate().unwrap();
    }

    #[test]
    fn base_samples_pass_through() {
        let f = DoubtFlow::new(schema(), DEFAULT_LAYERS, DEFAULT_HIDDEN, 3);
        let xs = f.sample(100_000, &features(), 11).unwrap();
        let n = xs.len() as f64;
        let m = [xs.iter().map(|x| x[0]).sum::<f64>() / n, xs.iter().map(|x| x[1]).sum::<f64>() / n];
        let mut c = [[0.0; 2]; 2];
        for x in &xs {
            for i in 0..2 {
                for j in 0..2 {
                    c[i][j] += (x[i] - m[i]) * (x[j] - m[j]) / (n - 1.0);
                }
            }
        }
        assert!(m[0].abs() < 0.02 && m[1].abs() < 0.02);
        assert!((c[0][0] - 1.0).abs() < 0.02 && (c[1][1] - 1.0).abs() < 0.02 && c[0][1].abs() < 0.02);
    }

    #[test]
    fn forward_inverse_round_trip() {
        let mut f = DoubtFlow::with_random_weights(schema(), DEFAULT_LAYERS, DEFAULT_HIDDEN, 1.0, 5);
        f.standardizer = Standardizer {
            mean: [0.01, -0.02],
            scale: [0.05, 0.2],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..1000 {
            let z = [rng.sample::<f64, _>(StandardNormal), rng.sample::<f64, _>(StandardNormal)];
            let (x, ld_fwd) = f.forward(z, &features()).unwrap();
            let (back, ld_inv) = f.inverse(x, &features()).unwrap();
            assert!((back[0] - z[0]).abs() < 1e-9 && (back[1] - z[1]).abs() < 1e-9);
            assert!((ld_fwd + ld_inv).abs() < 1e-9);
            let lp = f.log_density(x, &features()).unwrap();
            assert!((lp + ld_fwd - base_log_density(z)).abs() < 1e-9);
        }
    }

    #[test]
    fn dimension_zero_ignores_dimension_one() {
        let f = DoubtFlow::with_random_weights(schema(), 1, 16, 1.0, 2);
        let cond = schema().encode(&features()).unwrap();
        let mut a = LayerCache::default();
        let mut b = LayerCache::default();
        // after the reversal, u_0 is x_1 and u_1 is x_0
        f.layer_step(0, [0.3, -0.2], &cond, &mut a);
        f.layer_step(0, [5.0, -0.2], &cond, &mut b);
        assert_eq!(a.z[0], b.z[0]);
        assert_eq!(a.s[0], b.s[0]);
        assert_ne!(a.z[1], b.z[1]);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut f = DoubtFlow::with_random_weights(schema(), DEFAULT_LAYERS, 12, 0.5, 8);
        f.standardizer = Standardizer {
            mean: [0.0, 0.1],
            scale: [0.5, 0.8],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let conds: Vec<Vec<f64>> = (0..6)
            .map(|i| {
                schema()
                    .encode(&DoubtFeatureVector::new(i % 3, rng.random_range(0.0..1.5), rng.random_range(-3.0..3.0)))
                    .unwrap()
            })
            .collect();
        let points: Vec<[f64; 2]> = (0..6)
            .map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)])
            .collect();
        let batch: Vec<([f64; 2], &[f64])> = points.iter().zip(&conds).map(|(p, c)| (*p, c.as_slice())).collect();
        let mut grad = vec![0.0; f.params.len()];
        f.nll_and_grad(&batch, &mut grad);
        let shape = f.shape();
        let mut checked = 0;
        while checked < 20 {
            let k = rng.random_range(0..f.params.len());
            let off = k % shape.per_layer();
            let masked = (off < shape.w_c() && {
                let unit = off / EVENT_DIM;
                !shape.input_mask(unit, off % EVENT_DIM)
            }) || (off >= shape.w_o() && off < shape.b_o() && {
                let r = off - shape.w_o();
                !shape.output_mask(r / f.hidden, r % f.hidden)
            });
            if masked {
                continue;
            }
            let h = 1e-6;
            let mut g2 = vec![0.0; f.params.len()];
            let orig = f.params[k];
            f.params[k] = orig + h;
            let up = f.nll_and_grad(&batch, &mut g2);
            f.params[k] = orig - h;
            let down = f.nll_and_grad(&batch, &mut g2);
            f.params[k] = orig;
            let numeric = (up - down) / (2.0 * h);
            let rel = (grad[k] - numeric).abs() / grad[k].abs().max(numeric.abs()).max(1e-7);
            assert!(rel < 1e-4, "param {k}: analytic {} numeric {numeric}", grad[k]);
            checked += 1;
        }
    }
}
