//! The prototype-based evidential regression network.
//!
//! Inputs are z-scored, compared with `K` prototypes through Gaussian RBF
//! similarities, each prototype contributes a GRFN on `Y = log T` whose
//! precision is damped by its similarity, and the contributions are fused
//! with the unnormalized product-intersection rule.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Dataset;
use crate::grfn::{Grfn, GrfnError, Interval};

pub const MODEL_FORMAT: &str = "ennsurv-model";
pub const MODEL_VERSION: u32 = 1;

/// Fused precision below this is treated as total ignorance.
pub const H_FLOOR: f64 = 1e-300;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("prototype index {index} out of range (K = {k})")]
    IndexOutOfRange { index: usize, k: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("{0}")]
    Grfn(#[from] GrfnError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed model file: {0}")]
    Malformed(String),
    #[error("unsupported version: {0}")]
    UnsupportedVersion(String),
}

/// All trainable parameters. Matrices are row-major `K × p`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub k: usize,
    pub p: usize,
    pub prototypes: Vec<f64>,
    /// RBF scales, used squared.
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub beta0: Vec<f64>,
    pub log_sigma2: Vec<f64>,
    pub log_h: Vec<f64>,
}

impl ModelParams {
    pub fn zeros(k: usize, p: usize) -> Self {
        ModelParams {
            k,
            p,
            prototypes: vec![0.0; k * p],
            gamma: vec![0.0; k],
            beta: vec![0.0; k * p],
            beta0: vec![0.0; k],
            log_sigma2: vec![0.0; k],
            log_h: vec![0.0; k],
        }
    }

    pub fn n_params(&self) -> usize {
        2 * self.k * self.p + 4 * self.k
    }

    pub fn prototype(&self, k: usize) -> &[f64] {
        &self.prototypes[k * self.p..(k + 1) * self.p]
    }

    pub fn coefficients(&self, k: usize) -> &[f64] {
        &self.beta[k * self.p..(k + 1) * self.p]
    }

    /// Parameter blocks in a fixed order, for flat iteration.
    pub fn blocks(&self) -> [&Vec<f64>; 6] {
        [&self.prototypes, &self.gamma, &self.beta, &self.beta0, &self.log_sigma2, &self.log_h]
    }

    pub fn blocks_mut(&mut self) -> [&mut Vec<f64>; 6] {
        [
            &mut self.prototypes,
            &mut self.gamma,
            &mut self.beta,
            &mut self.beta0,
            &mut self.log_sigma2,
            &mut self.log_h,
        ]
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.blocks().iter().flat_map(|b| b.iter().copied()).collect()
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.n_params(), "flat parameter length");
        let mut off = 0;
        for b in self.blocks_mut() {
            let n = b.len();
            b.copy_from_slice(&flat[off..off + n]);
            off += n;
        }
    }

    pub fn check_consistent(&self) -> Result<(), ModelError> {
        let (k, p) = (self.k, self.p);
        let want = [k * p, k, k * p, k, k, k];
        for (b, w) in self.blocks().iter().zip(want) {
            if b.len() != w {
                return Err(ModelError::Dimension { expected: w, got: b.len() });
            }
        }
        if k == 0 {
            return Err(ModelError::InvalidArgument("model needs at least one prototype".into()));
        }
        Ok(())
    }

    pub fn sigma2(&self, k: usize) -> f64 {
        self.log_sigma2[k].exp()
    }

    pub fn precision(&self, k: usize) -> f64 {
        self.log_h[k].exp()
    }

    fn check_dim(&self, x: &[f64]) -> Result<(), ModelError> {
        if x.len() != self.p {
            return Err(ModelError::Dimension { expected: self.p, got: x.len() });
        }
        Ok(())
    }

    /// `s_k = exp(-γ_k² ‖x - p_k‖²)` for a standardized input.
    pub fn similarities(&self, x: &[f64]) -> Result<Vec<f64>, ModelError> {
        self.check_dim(x)?;
        Ok((0..self.k).map(|k| self.similarity(x, k)).collect())
    }

    fn similarity(&self, x: &[f64], k: usize) -> f64 {
        let d2: f64 = x.iter().zip(self.prototype(k)).map(|(a, b)| (a - b) * (a - b)).sum();
        (-self.gamma[k] * self.gamma[k] * d2).exp()
    }

    fn local_mean(&self, x: &[f64], k: usize) -> f64 {
        self.beta0[k] + x.iter().zip(self.coefficients(k)).map(|(a, b)| a * b).sum::<f64>()
    }

    /// Evidence of prototype `k`: `Ñ(β_kᵀx + β_k0, σ²_k, s_k(x) h_k)`.
    pub fn evidence(&self, x: &[f64], k: usize) -> Result<Grfn, ModelError> {
        self.check_dim(x)?;
        if k >= self.k {
            return Err(ModelError::IndexOutOfRange { index: k, k: self.k });
        }
        Ok(Grfn::new(self.local_mean(x, k), self.sigma2(k), self.similarity(x, k) * self.precision(k))?)
    }

    /// Fused output for a standardized input.
    pub fn fuse(&self, x: &[f64]) -> Result<Fused, ModelError> {
        self.check_dim(x)?;
        Ok(self.fuse_unchecked(x))
    }

    pub(crate) fn fuse_unchecked(&self, x: &[f64]) -> Fused {
        let (mut sh, mut shmu, mut sh2s2, mut smu, mut ss2) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for k in 0..self.k {
            let a = self.similarity(x, k) * self.precision(k);
            let mu = self.local_mean(x, k);
            let s2 = self.sigma2(k);
            sh += a;
            shmu += a * mu;
            sh2s2 += a * a * s2;
            smu += mu;
            ss2 += s2;
        }
        if sh < H_FLOOR || !sh.is_finite() {
            let kf = self.k as f64;
            return Fused { grfn: Grfn { mu: smu / kf, sigma2: ss2 / kf, h: H_FLOOR }, vacuous: true };
        }
        Fused { grfn: Grfn { mu: shmu / sh, sigma2: sh2s2 / (sh * sh), h: sh }, vacuous: false }
    }
}

/// Output of the fusion layer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Fused {
    pub grfn: Grfn,
    /// Set when every prototype's evidence underflowed.
    pub vacuous: bool,
}

/// Feature z-scoring fitted on training data, plus the spread of `log t*`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub x_mean: Vec<f64>,
    pub x_scale: Vec<f64>,
    pub y_sd: f64,
}

impl Standardizer {
    pub fn fit(data: &Dataset) -> Self {
        let n = data.len() as f64;
        let p = data.dim();
        let mut x_mean = vec![0.0; p];
        for r in &data.records {
            for (m, v) in x_mean.iter_mut().zip(&r.x) {
                *m += v;
            }
        }
        x_mean.iter_mut().for_each(|m| *m /= n);
        let mut x_scale = vec![0.0; p];
        for r in &data.records {
            for j in 0..p {
                let d = r.x[j] - x_mean[j];
                x_scale[j] += d * d;
            }
        }
        for s in x_scale.iter_mut() {
            *s = sd_or_one(*s, n);
        }
        let ys: Vec<f64> = data.records.iter().map(|r| r.log_duration()).collect();
        let y_mean = ys.iter().sum::<f64>() / n;
        let y_ss: f64 = ys.iter().map(|y| (y - y_mean) * (y - y_mean)).sum();
        Standardizer { x_mean, x_scale, y_sd: sd_or_one(y_ss, n) }
    }

    pub fn identity(p: usize) -> Self {
        Standardizer { x_mean: vec![0.0; p], x_scale: vec![1.0; p], y_sd: 1.0 }
    }

    pub fn transform(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(self.x_mean.iter().zip(&self.x_scale)).map(|(v, (m, s))| (v - m) / s).collect()
    }

    pub fn transform_into(&self, x: &[f64], out: &mut [f64]) {
        for j in 0..x.len() {
            out[j] = (x[j] - self.x_mean[j]) / self.x_scale[j];
        }
    }
}

fn sd_or_one(sum_sq: f64, n: f64) -> f64 {
    if n < 2.0 {
        return 1.0;
    }
    let sd = (sum_sq / (n - 1.0)).sqrt();
    if sd > 0.0 && sd.is_finite() {
        sd
    } else {
        1.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    /// Output GRFN on `Y = log T`.
    pub grfn: Grfn,
    /// Mode of the time contour, `exp(μ)`.
    pub most_plausible_time: f64,
    pub vacuous: bool,
}

impl Prediction {
    /// Survival bounds at `t`; `[0, 1]` when the prediction is vacuous.
    pub fn survival_bounds(&self, t: f64) -> Result<(f64, f64), ModelError> {
        if self.vacuous {
            if !(t > 0.0) {
                return Err(ModelError::InvalidArgument(format!("time must be positive, got {t}")));
            }
            return Ok((0.0, 1.0));
        }
        survival_bounds_of(&self.grfn, t)
    }
}

/// Trained parameters together with the input standardizer.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub params: ModelParams,
    pub standardizer: Standardizer,
}

impl Model {
    pub fn new(params: ModelParams, standardizer: Standardizer) -> Result<Self, ModelError> {
        params.check_consistent()?;
        if standardizer.x_mean.len() != params.p || standardizer.x_scale.len() != params.p {
            return Err(ModelError::Dimension { expected: params.p, got: standardizer.x_mean.len() });
        }
        Ok(Model { params, standardizer })
    }

    pub fn dim(&self) -> usize {
        self.params.p
    }

    pub fn forward(&self, x_raw: &[f64]) -> Result<Prediction, ModelError> {
        self.params.check_dim(x_raw)?;
        let fused = self.params.fuse_unchecked(&self.standardizer.transform(x_raw));
        Ok(Prediction {
            grfn: fused.grfn,
            most_plausible_time: fused.grfn.mu.exp(),
            vacuous: fused.vacuous,
        })
    }

    /// Lower and upper conditional survival `(Bel, Pl)` of `[t, ∞)`.
    pub fn survival_bounds(&self, x_raw: &[f64], t: f64) -> Result<(f64, f64), ModelError> {
        self.forward(x_raw)?.survival_bounds(t)
    }

    pub fn save(&self, path: &Path, config: Option<serde_json::Value>) -> Result<(), ModelError> {
        fs::write(path, self.to_json(config))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn to_json(&self, config: Option<serde_json::Value>) -> String {
        let file = ModelFile {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            k: self.params.k,
            p: self.params.p,
            params: self.params.clone(),
            standardizer: self.standardizer.clone(),
            config: config.unwrap_or(serde_json::Value::Null),
        };
        let mut s = serde_json::to_string_pretty(&file).expect("model serialization");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| ModelError::Malformed(e.to_string()))?;
        match value.get("format").and_then(|v| v.as_str()) {
            Some(MODEL_FORMAT) => {}
            other => return Err(ModelError::Malformed(format!("unexpected format tag {other:?}"))),
        }
        match value.get("version").and_then(|v| v.as_u64()) {
            Some(v) if v == MODEL_VERSION as u64 => {}
            Some(v) => return Err(ModelError::UnsupportedVersion(v.to_string())),
            None => return Err(ModelError::Malformed("missing version".into())),
        }
        let file: ModelFile = serde_json::from_value(value).map_err(|e| ModelError::Malformed(e.to_string()))?;
        if file.k != file.params.k || file.p != file.params.p {
            return Err(ModelError::Malformed("header dimensions disagree with parameters".into()));
        }
        Model::new(file.params, file.standardizer).map_err(|e| ModelError::Malformed(e.to_string()))
    }
}

/// `(Bel([log t, ∞)), Pl([log t, ∞)))` for an output GRFN.
pub fn survival_bounds_of(g: &Grfn, t: f64) -> Result<(f64, f64), ModelError> {
    if !(t > 0.0) {
        return Err(ModelError::InvalidArgument(format!("time must be positive, got {t}")));
    }
    Ok(g.bel_pl(&Interval::above(t.ln())))
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    k: usize,
    p: usize,
    params: ModelParams,
    standardizer: Standardizer,
    #[serde(default)]
    config: serde_json::Value,
}

/// Initial parameters: k-means++ prototypes on standardized features,
/// `γ_k = 1 / median prototype distance`, constant local models at the mean
/// log duration and unit precisions.
pub fn init_params(data: &Dataset, k: usize, seed: u64) -> Result<(ModelParams, Standardizer), ModelError> {
    let n = data.len();
    if n == 0 {
        return Err(ModelError::InvalidArgument("empty training data".into()));
    }
    if k == 0 || k > n {
        return Err(ModelError::InvalidArgument(format!("need 1 <= K <= n, got K = {k}, n = {n}")));
    }
    let std = Standardizer::fit(data);
    let p = data.dim();
    let xs: Vec<Vec<f64>> = data.records.iter().map(|r| std.transform(&r.x)).collect();
    let centers = kmeans(&xs, k, 50, seed);

    let mut params = ModelParams::zeros(k, p);
    for (c, row) in centers.iter().enumerate() {
        params.prototypes[c * p..(c + 1) * p].copy_from_slice(row);
    }
    let gamma = 1.0 / median_pairwise_distance(&centers).unwrap_or(1.0);
    let y_mean = data.records.iter().map(|r| r.log_duration()).sum::<f64>() / n as f64;
    let log_var = 2.0 * std.y_sd.ln();
    for c in 0..k {
        params.gamma[c] = gamma;
        params.beta0[c] = y_mean;
        params.log_sigma2[c] = log_var;
        params.log_h[c] = 0.0;
    }
    Ok((params, std))
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// k-means with k-means++ seeding; deterministic for a fixed seed.
pub(crate) fn kmeans(xs: &[Vec<f64>], k: usize, iters: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = xs.len();
    let mut centers: Vec<Vec<f64>> = vec![xs[rng.random_range(0..n)].clone()];
    let mut d2: Vec<f64> = xs.iter().map(|x| dist2(x, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, w) in d2.iter().enumerate() {
                if *w > 0.0 && target < *w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            // rounding can leave `chosen` on a point already selected
            if d2[chosen] == 0.0 {
                chosen = d2.iter().rposition(|w| *w > 0.0).unwrap_or(chosen);
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        let c = xs[pick].clone();
        for (i, x) in xs.iter().enumerate() {
            d2[i] = d2[i].min(dist2(x, &c));
        }
        centers.push(c);
    }

    let p = xs[0].len();
    let mut assign = vec![usize::MAX; n];
    for _ in 0..iters {
        let mut changed = false;
        for (i, x) in xs.iter().enumerate() {
            let mut best = (f64::INFINITY, 0);
            for (c, ctr) in centers.iter().enumerate() {
                let d = dist2(x, ctr);
                if d < best.0 {
                    best = (d, c);
                }
            }
            if assign[i] != best.1 {
                assign[i] = best.1;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = vec![vec![0.0; p]; k];
        let mut counts = vec![0usize; k];
        for (i, x) in xs.iter().enumerate() {
            counts[assign[i]] += 1;
            for j in 0..p {
                sums[assign[i]][j] += x[j];
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                for j in 0..p {
                    centers[c][j] = sums[c][j] / counts[c] as f64;
                }
            }
        }
    }
    centers
}

fn median_pairwise_distance(centers: &[Vec<f64>]) -> Option<f64> {
    let mut d: Vec<f64> = Vec::new();
    for i in 0..centers.len() {
        for j in i + 1..centers.len() {
            d.push(dist2(&centers[i], &centers[j]).sqrt());
        }
    }
    if d.is_empty() {
        return None;
    }
    d.sort_by(|a, b| a.total_cmp(b));
    let m = d.len();
    let med = if m % 2 == 1 { d[m / 2] } else { 0.5 * (d[m / 2 - 1] + d[m / 2]) };
    (med > 0.0).then_some(med)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::SurvivalRecord;
    use approx::assert_relative_eq;
    use rand::Rng;

    fn random_params(k: usize, p: usize, seed: u64) -> ModelParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = ModelParams::zeros(k, p);
        for b in m.blocks_mut() {
            for v in b.iter_mut() {
                *v = rng.random_range(-1.0..1.0);
            }
        }
        m
    }

    fn toy_data(n: usize, p: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let recs = (0..n)
            .map(|_| {
                let x: Vec<f64> = (0..p).map(|_| rng.random_range(-2.0..2.0)).collect();
                SurvivalRecord::new(x, rng.random_range(0.5..20.0), rng.random_bool(0.7))
            })
            .collect();
        Dataset::new(recs, Dataset::default_names(p)).unwrap()
    }

    #[test]
    fn similarity_examples() {
        let mut m = ModelParams::zeros(2, 2);
        m.prototypes = vec![0.5, -1.0, 0.0, 0.0];
        m.gamma = vec![3.0, 1.0];
        let s = m.similarities(&[0.5, -1.0]).unwrap();
        assert_eq!(s[0], 1.0);
        let s = m.similarities(&[1.0, 0.0]).unwrap();
        assert_relative_eq!(s[1], (-1.0f64).exp());
        m.gamma[1] = 0.0;
        assert_eq!(m.similarities(&[100.0, -40.0]).unwrap()[1], 1.0);
        assert!(matches!(m.similarities(&[1.0]), Err(ModelError::Dimension { expected: 2, got: 1 })));
    }

    #[test]
    fn evidence_examples() {
        let mut m = ModelParams::zeros(2, 2);
        m.beta0 = vec![0.7, 0.5];
        m.beta[2..4].copy_from_slice(&[1.0, 2.0]);
        m.gamma = vec![1.0, 0.0];
        assert_eq!(m.evidence(&[5.0, -3.0], 0).unwrap().mu, 0.7);
        assert_eq!(m.evidence(&[1.0, 1.0], 1).unwrap().mu, 3.5);
        let far = m.evidence(&[1e3, 1e3], 0).unwrap();
        assert_eq!(far.h, 0.0);
        assert!(matches!(m.evidence(&[0.0, 0.0], 2), Err(ModelError::IndexOutOfRange { .. })));
    }

    #[test]
    fn single_prototype_is_identity() {
        let m = random_params(1, 3, 5);
        let x = [0.3, -0.2, 0.9];
        let f = m.fuse(&x).unwrap().grfn;
        let e = m.evidence(&x, 0).unwrap();
        assert_relative_eq!(f.mu, e.mu, max_relative = 1e-14);
        assert_relative_eq!(f.sigma2, e.sigma2, max_relative = 1e-14);
        assert_relative_eq!(f.h, e.h, max_relative = 1e-14);
    }

    #[test]
    fn symmetric_fusion() {
        let mut m = ModelParams::zeros(2, 1);
        m.beta0 = vec![0.0, 2.0];
        let f = m.fuse(&[0.4]).unwrap().grfn;
        assert_eq!(f.mu, 1.0);
    }

    #[test]
    fn fusion_equals_combination_fold() {
        for seed in 0..20 {
            let m = random_params(5, 3, seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
            let x: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
            let fused = m.fuse(&x).unwrap().grfn;
            let ev: Vec<Grfn> = (0..5).map(|k| m.evidence(&x, k).unwrap()).collect();
            let fold = ev[1..].iter().fold(ev[0], |acc, g| acc.combine(g));
            let rev = ev[..4].iter().rev().fold(ev[4], |acc, g| acc.combine(g));
            for other in [fold, rev] {
                assert_relative_eq!(fused.mu, other.mu, max_relative = 1e-12);
                assert_relative_eq!(fused.sigma2, other.sigma2, max_relative = 1e-12);
                assert_relative_eq!(fused.h, other.h, max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn precision_decays_along_a_ray() {
        let m = random_params(4, 2, 11);
        let dir = [0.6, 0.8];
        let mut last = f64::INFINITY;
        for i in 0..40 {
            let r = 3.0 + i as f64;
            let h = m.fuse(&[r * dir[0], r * dir[1]]).unwrap().grfn.h;
            assert!(h > 0.0 || i > 10);
            assert!(h <= last);
            last = h;
        }
        assert!(last < 1e-10);
    }

    #[test]
    fn vacuous_output_is_flagged() {
        let mut m = random_params(3, 1, 2);
        m.gamma = vec![10.0; 3];
        let f = m.fuse(&[1e6]).unwrap();
        assert!(f.vacuous);
        let (lo, hi) = survival_bounds_of(&f.grfn, 2.0).unwrap();
        assert!(lo < 1e-100);
        assert!((hi - 1.0).abs() < 1e-12);
    }

    #[test]
    fn survival_bounds_are_ordered_and_monotone() {
        let data = toy_data(50, 3, 1);
        let (p, s) = init_params(&data, 4, 7).unwrap();
        let mut p = p;
        p.log_h = vec![0.3, -0.5, 1.0, 0.0];
        let model = Model::new(p, s).unwrap();
        let x = [0.2, 1.0, -1.0];
        let mut prev = (1.0, 1.0);
        for i in 0..200 {
            let t = 0.01 * 1.05f64.powi(i);
            let (lo, hi) = model.survival_bounds(&x, t).unwrap();
            assert!(lo <= hi);
            assert!(lo <= prev.0 + 1e-15 && hi <= prev.1 + 1e-15);
            prev = (lo, hi);
        }
        let (lo, hi) = model.survival_bounds(&x, 1e-300).unwrap();
        assert!(lo > 1.0 - 1e-9 && hi > 1.0 - 1e-9);
        let (lo, hi) = model.survival_bounds(&x, 1e300).unwrap();
        assert!(lo < 1e-9 && hi < 1e-9);
        assert!(model.survival_bounds(&x, 0.0).is_err());
        assert!(model.survival_bounds(&x, -1.0).is_err());
    }

    #[test]
    fn init_single_prototype_is_mean() {
        let data = toy_data(30, 2, 3);
        let (p, s) = init_params(&data, 1, 0).unwrap();
        // standardized features have mean zero
        assert!(p.prototypes.iter().all(|v| v.abs() < 1e-12));
        let y_mean = data.records.iter().map(|r| r.duration.ln()).sum::<f64>() / 30.0;
        assert_relative_eq!(p.beta0[0], y_mean, max_relative = 1e-14);
        assert_relative_eq!(p.log_sigma2[0], (s.y_sd * s.y_sd).ln(), max_relative = 1e-12);
        assert_eq!(p.log_h[0], 0.0);
        assert!(p.beta.iter().all(|&b| b == 0.0));
    }

    #[test]
    fn init_on_duplicates_picks_distinct_points() {
        let pts = [[0.0, 0.0], [1.0, 0.0], [0.0, 3.0]];
        let recs = (0..30).map(|i| SurvivalRecord::new(pts[i % 3].to_vec(), 1.0 + i as f64, true)).collect();
        let data = Dataset::new(recs, Dataset::default_names(2)).unwrap();
        let (p, s) = init_params(&data, 3, 4).unwrap();
        let std_pts: Vec<Vec<f64>> = pts.iter().map(|x| s.transform(x)).collect();
        let mut hit = [false; 3];
        for k in 0..3 {
            let proto = p.prototype(k);
            let j = std_pts.iter().position(|q| dist2(q, proto) < 1e-20).expect("prototype at a data point");
            hit[j] = true;
        }
        assert_eq!(hit, [true; 3]);
    }

    #[test]
    fn init_is_deterministic_and_checks_k() {
        let data = toy_data(40, 3, 9);
        let a = init_params(&data, 6, 123).unwrap();
        let b = init_params(&data, 6, 123).unwrap();
        assert_eq!(a, b);
        let c = init_params(&data, 6, 124).unwrap();
        assert_ne!(a.0.prototypes, c.0.prototypes);
        assert!(init_params(&data, 41, 0).is_err());
        assert!(init_params(&data, 0, 0).is_err());
    }

    #[test]
    fn model_file_round_trip() {
        let data = toy_data(40, 3, 2);
        let (mut p, s) = init_params(&data, 5, 1).unwrap();
        let extra = random_params(5, 3, 77);
        for (dst, src) in p.blocks_mut().into_iter().zip(extra.blocks()) {
            for (d, v) in dst.iter_mut().zip(src.iter()) {
                *d += v * std::f64::consts::PI / 7.0;
            }
        }
        let model = Model::new(p, s).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        model.save(&path, Some(serde_json::json!({"k": 5}))).unwrap();
        let back = Model::load(&path).unwrap();
        assert_eq!(back, model);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..100 {
            let x: Vec<f64> = (0..3).map(|_| rng.random_range(-5.0..5.0)).collect();
            assert_eq!(model.forward(&x).unwrap(), back.forward(&x).unwrap());
        }
    }

    #[test]
    fn model_file_errors() {
        let data = toy_data(10, 2, 2);
        let (p, s) = init_params(&data, 2, 1).unwrap();
        let text = Model::new(p, s).unwrap().to_json(None);
        let truncated = &text[..text.len() / 2];
        assert!(matches!(Model::from_json(truncated), Err(ModelError::Malformed(_))));
        let bumped = text.replace("\"version\": 1", "\"version\": 99");
        assert!(matches!(Model::from_json(&bumped), Err(ModelError::UnsupportedVersion(v)) if v == "99"));
        let wrong = text.replace("\"k\": 2,\n  \"p\"", "\"k\": 3,\n  \"p\"");
        assert!(matches!(Model::from_json(&wrong), Err(ModelError::Malformed(_))));
    }
}
