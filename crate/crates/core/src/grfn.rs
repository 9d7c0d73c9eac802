//! Gaussian fuzzy numbers, Gaussian random fuzzy numbers and their
//! lognormal transforms.
//!
//! A GRFN `Ñ(μ, σ², h)` is the random fuzzy set `M ↦ GFN(M, h)` with
//! `M ~ N(μ, σ²)`. All interval measures below are closed-form; the
//! Monte-Carlo estimator at the bottom samples `M` directly and is kept as an
//! independent check.

use std::sync::OnceLock;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dual::Real;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GrfnError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("invalid interval [{lo}, {hi}]")]
    InvalidInterval { lo: f64, hi: f64 },
    #[error("domain error: {0}")]
    Domain(String),
    #[error("unreachable belief level {alpha} (supremum {sup})")]
    UnreachableBelief { alpha: f64, sup: f64 },
}

/// Closed real interval; either endpoint may be infinite.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Result<Self, GrfnError> {
        if lo.is_nan() || hi.is_nan() || lo > hi || lo == f64::INFINITY || hi == f64::NEG_INFINITY {
            return Err(GrfnError::InvalidInterval { lo, hi });
        }
        Ok(Interval { lo, hi })
    }

    /// `(-∞, y]`
    pub fn below(y: f64) -> Self {
        Interval { lo: f64::NEG_INFINITY, hi: y }
    }

    /// `[x, +∞)`
    pub fn above(x: f64) -> Self {
        Interval { lo: x, hi: f64::INFINITY }
    }

    pub fn real_line() -> Self {
        Interval { lo: f64::NEG_INFINITY, hi: f64::INFINITY }
    }

    pub fn centered(center: f64, radius: f64) -> Self {
        Interval { lo: center - radius, hi: center + radius }
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }

    pub fn is_subset_of(&self, other: &Interval) -> bool {
        other.lo <= self.lo && self.hi <= other.hi
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }
}

/// Gaussian fuzzy number with membership `exp(-h (x - m)² / 2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianFuzzyNumber {
    pub mode: f64,
    pub precision: f64,
}

impl GaussianFuzzyNumber {
    pub fn new(mode: f64, precision: f64) -> Result<Self, GrfnError> {
        if !mode.is_finite() || !(precision >= 0.0) || precision.is_infinite() {
            return Err(GrfnError::InvalidParameter(format!(
                "GFN requires finite mode and finite precision >= 0, got ({mode}, {precision})"
            )));
        }
        Ok(GaussianFuzzyNumber { mode, precision })
    }

    pub fn membership(&self, x: f64) -> f64 {
        if x.is_infinite() {
            return if self.precision > 0.0 { 0.0 } else { 1.0 };
        }
        let d = x - self.mode;
        (-0.5 * self.precision * d * d).exp()
    }

    pub fn is_vacuous(&self) -> bool {
        self.precision == 0.0
    }

    /// Possibility of the interval: the supremum of the membership over it.
    pub fn possibility(&self, iv: &Interval) -> f64 {
        if iv.contains(self.mode) {
            1.0
        } else if self.mode < iv.lo {
            self.membership(iv.lo)
        } else {
            self.membership(iv.hi)
        }
    }

    /// Necessity of the interval: one minus the possibility of its complement.
    pub fn necessity(&self, iv: &Interval) -> f64 {
        if !iv.contains(self.mode) {
            return 0.0;
        }
        let left = if iv.lo.is_finite() { self.membership(iv.lo) } else { 0.0 };
        let right = if iv.hi.is_finite() { self.membership(iv.hi) } else { 0.0 };
        1.0 - left.max(right)
    }

    /// Normalized product intersection. Two vacuous inputs give a vacuous
    /// result whose mode is the midpoint of the input modes.
    pub fn product(&self, other: &Self) -> Self {
        let h = self.precision + other.precision;
        if h == 0.0 {
            return GaussianFuzzyNumber { mode: 0.5 * (self.mode + other.mode), precision: 0.0 };
        }
        GaussianFuzzyNumber {
            mode: (self.precision * self.mode + other.precision * other.mode) / h,
            precision: h,
        }
    }
}

/// Gaussian random fuzzy number `Ñ(μ, σ², h)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grfn {
    pub mu: f64,
    pub sigma2: f64,
    pub h: f64,
}

impl Grfn {
    pub fn new(mu: f64, sigma2: f64, h: f64) -> Result<Self, GrfnError> {
        if !mu.is_finite() {
            return Err(GrfnError::InvalidParameter(format!("mu must be finite, got {mu}")));
        }
        if !(sigma2 >= 0.0) || sigma2.is_infinite() {
            return Err(GrfnError::InvalidParameter(format!("sigma2 must be finite and >= 0, got {sigma2}")));
        }
        if !(h >= 0.0) || h.is_infinite() {
            return Err(GrfnError::InvalidParameter(format!("h must be finite and >= 0, got {h}")));
        }
        Ok(Grfn { mu, sigma2, h })
    }

    pub fn vacuous(mu: f64) -> Self {
        Grfn { mu, sigma2: 0.0, h: 0.0 }
    }

    pub fn is_vacuous(&self) -> bool {
        self.h == 0.0
    }

    /// Plausibility of the singleton `{x}`.
    pub fn contour(&self, x: f64) -> f64 {
        contour_generic(self.mu, self.sigma2, self.h, x)
    }

    pub fn bel(&self, iv: &Interval) -> f64 {
        self.bel_pl(iv).0
    }

    pub fn pl(&self, iv: &Interval) -> f64 {
        self.bel_pl(iv).1
    }

    /// Belief and plausibility of an interval.
    pub fn bel_pl(&self, iv: &Interval) -> (f64, f64) {
        if self.sigma2 == 0.0 {
            // possibilistic limit: M is the constant μ
            let gfn = GaussianFuzzyNumber { mode: self.mu, precision: self.h };
            return (gfn.necessity(iv), gfn.possibility(iv));
        }
        let (bel, pl) = bel_pl_generic(self.mu, self.sigma2, self.h, iv);
        let pl = pl.clamp(0.0, 1.0);
        (bel.clamp(0.0, pl), pl)
    }

    /// Lower cdf `Bel((-∞, y])`.
    pub fn lower_cdf(&self, y: f64) -> f64 {
        self.bel(&Interval::below(y))
    }

    /// Upper cdf `Pl((-∞, y])`.
    pub fn upper_cdf(&self, y: f64) -> f64 {
        self.pl(&Interval::below(y))
    }

    /// Unnormalized product-intersection `self ⊞ other`.
    pub fn combine(&self, other: &Grfn) -> Grfn {
        let h = self.h + other.h;
        if h == 0.0 {
            return Grfn::vacuous(0.5 * (self.mu + other.mu));
        }
        Grfn {
            mu: (self.h * self.mu + other.h * other.mu) / h,
            sigma2: (self.h * self.h * self.sigma2 + other.h * other.h * other.sigma2) / (h * h),
            h,
        }
    }

    /// n-ary `⊞`, evaluated from the precision-weighted sums in one pass.
    /// Returns `None` for an empty input.
    pub fn combine_all<'a, I>(items: I) -> Option<Grfn>
    where
        I: IntoIterator<Item = &'a Grfn>,
    {
        let (mut n, mut sh, mut shmu, mut sh2s2, mut smu) = (0usize, 0.0, 0.0, 0.0, 0.0);
        for g in items {
            n += 1;
            sh += g.h;
            shmu += g.h * g.mu;
            sh2s2 += g.h * g.h * g.sigma2;
            smu += g.mu;
        }
        if n == 0 {
            return None;
        }
        if sh == 0.0 {
            return Some(Grfn::vacuous(smu / n as f64));
        }
        Some(Grfn { mu: shmu / sh, sigma2: sh2s2 / (sh * sh), h: sh })
    }

    /// Symmetric interval `[μ - r, μ + r]` whose belief equals `alpha`.
    pub fn prediction_interval(&self, alpha: f64) -> Result<Interval, GrfnError> {
        if !(0.0..1.0).contains(&alpha) {
            return Err(GrfnError::Domain(format!("belief level must be in [0, 1), got {alpha}")));
        }
        if alpha == 0.0 {
            return Ok(Interval::centered(self.mu, 0.0));
        }
        if self.h == 0.0 {
            return Err(GrfnError::UnreachableBelief { alpha, sup: 0.0 });
        }
        let bel_at = |r: f64| self.bel(&Interval::centered(self.mu, r));

        let mut hi = self.sigma2.sqrt() + 1.0 / self.h.max(f64::EPSILON).sqrt();
        let mut lo = 0.0;
        let mut grown = 0;
        while bel_at(hi) < alpha {
            lo = hi;
            hi *= 2.0;
            grown += 1;
            if grown > 200 || !hi.is_finite() {
                return Err(GrfnError::UnreachableBelief { alpha, sup: bel_at(lo) });
            }
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if bel_at(mid) < alpha {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(Interval::centered(self.mu, hi))
    }
}

/// Lognormal random fuzzy number: `exp` applied to a GRFN on `log T`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LognormalRfn {
    pub base: Grfn,
}

impl LognormalRfn {
    pub fn new(base: Grfn) -> Self {
        LognormalRfn { base }
    }

    pub fn contour(&self, t: f64) -> Result<f64, GrfnError> {
        if !(t > 0.0) {
            return Err(GrfnError::Domain(format!("time must be positive, got {t}")));
        }
        Ok(self.base.contour(t.ln()))
    }

    /// Belief and plausibility of `[t1, t2]`, 0 < t1 <= t2 (t2 may be +∞).
    pub fn bel_pl(&self, t1: f64, t2: f64) -> Result<(f64, f64), GrfnError> {
        if !(t1 > 0.0) || !(t2 >= t1) {
            return Err(GrfnError::Domain(format!("time interval must satisfy 0 < t1 <= t2, got [{t1}, {t2}]")));
        }
        let iv = Interval::new(t1.ln(), t2.ln())?;
        Ok(self.base.bel_pl(&iv))
    }

    pub fn most_plausible(&self) -> f64 {
        self.base.mu.exp()
    }
}

pub(crate) fn contour_generic<T: Real>(mu: T, sigma2: T, h: T, x: f64) -> T {
    let one_plus = h * sigma2 + T::cst(1.0);
    let d = T::cst(x) - mu;
    (-(h * d * d) / (one_plus.scale(2.0))).exp() / one_plus.sqrt()
}

/// Closed-form belief and plausibility for `sigma2 > 0`.
///
/// Finite intervals with `h·w² ≤ 1` (half-width `w`) take the quadrature
/// route for the belief, where the three-term closed form cancels down to a
/// value of order `h·w²` times the interval probability.
pub(crate) fn bel_pl_generic<T: Real>(mu: T, sigma2: T, h: T, iv: &Interval) -> (T, T) {
    let (lo, hi) = (iv.lo, iv.hi);
    let one = T::cst(1.0);
    let sigma = sigma2.sqrt();
    let spread = (h * sigma2 + one).sqrt();
    match (lo.is_finite(), hi.is_finite()) {
        (false, false) => (one, one),
        (false, true) => {
            let u = (T::cst(hi) - mu) / sigma;
            let pl_y = contour_generic(mu, sigma2, h, hi);
            let p = u.norm_cdf();
            let us = u / spread;
            let bel = if is_flat_tail(sigma2.value(), h.value(), hi - mu.value()) {
                side_integral(mu, sigma, h, f64::NEG_INFINITY, hi, hi)
            } else {
                p - pl_y * us.norm_cdf()
            };
            (bel, p + pl_y * (-us).norm_cdf())
        }
        (true, false) => {
            let u = (T::cst(lo) - mu) / sigma;
            let pl_x = contour_generic(mu, sigma2, h, lo);
            let p = (-u).norm_cdf();
            let us = u / spread;
            let bel = if is_flat_tail(sigma2.value(), h.value(), mu.value() - lo) {
                side_integral(mu, sigma, h, lo, f64::INFINITY, lo)
            } else {
                p - pl_x * (-us).norm_cdf()
            };
            (bel, p + pl_x * us.norm_cdf())
        }
        (true, true) => {
            let ux = (T::cst(lo) - mu) / sigma;
            let uy = (T::cst(hi) - mu) / sigma;
            let prob = T::norm_cdf_diff(ux, uy);
            let pl_x = contour_generic(mu, sigma2, h, lo);
            let pl_y = contour_generic(mu, sigma2, h, hi);
            let denom = sigma * spread;
            let ux_s = ux / spread;
            let uy_s = uy / spread;
            let pl = prob + pl_x * ux_s.norm_cdf() + pl_y * (-uy_s).norm_cdf();

            let half = 0.5 * (hi - lo);
            let bel = if is_narrow(h.value(), half) {
                narrow_bel(mu, sigma, h, lo, hi)
            } else {
                let center = T::cst(0.5 * (lo + hi)) - mu;
                let pull = h * sigma2.scale(half);
                let a = (center + pull) / denom;
                let b = (center - pull) / denom;
                prob - pl_x * T::norm_cdf_diff(ux_s, a) - pl_y * T::norm_cdf_diff(b, uy_s)
            };
            (bel, pl)
        }
    }
}

fn is_narrow(h: f64, half: f64) -> bool {
    half > 0.0 && h * half * half <= 1.0
}

/// Half-line belief where the closed form loses more than two digits;
/// `inside` is how far the mean lies within the half-line.
fn is_flat_tail(sigma2: f64, h: f64, inside: f64) -> bool {
    let d = inside.max(0.0);
    h * (sigma2 + d * d) <= FLAT_TAIL
}

const FLAT_TAIL: f64 = 1e-2;

/// Span, in standard deviations, kept around the mean by the quadrature.
const QUAD_SPAN: f64 = 12.0;

/// `Bel([lo, hi]) = ∫ n(m) (1 - exp(-h d(m)²/2)) dm` with `n` the N(μ, σ²)
/// density and `d` the distance to the nearer endpoint, by composite
/// Gauss–Legendre on each half.
fn narrow_bel<T: Real>(mu: T, sigma: T, h: T, lo: f64, hi: f64) -> T {
    let c = 0.5 * (lo + hi);
    side_integral(mu, sigma, h, lo, c, lo) + side_integral(mu, sigma, h, c, hi, hi)
}

fn side_integral<T: Real>(mu: T, sigma: T, h: T, a: f64, b: f64, anchor: f64) -> T {
    let (nodes, weights) = gauss_legendre();
    let (m, sd) = (mu.value(), sigma.value());
    let nearest = m.clamp(a, b);
    let start = a.max(nearest - QUAD_SPAN * sd);
    let end = b.min(nearest + QUAD_SPAN * sd);
    if !(end > start) {
        return T::cst(0.0);
    }
    let panels = ((end - start) / sd).ceil().clamp(1.0, 2.0 * QUAD_SPAN) as usize;
    let width = (end - start) / panels as f64;
    let two_var = sigma * sigma.scale(2.0);
    let mut acc = T::cst(0.0);
    for p in 0..panels {
        let left = start + p as f64 * width;
        for (&xi, &wt) in nodes.iter().zip(weights.iter()) {
            let z = left + 0.5 * width * (xi + 1.0);
            let gap = z - anchor;
            let nec = -(-h.scale(0.5 * gap * gap)).exp_m1();
            let d = T::cst(z) - mu;
            acc = acc + ((-(d * d) / two_var).exp() * nec).scale(wt);
        }
    }
    acc.scale(0.5 * width) / sigma.scale((2.0 * std::f64::consts::PI).sqrt())
}

const GL_ORDER: usize = 20;

fn gauss_legendre() -> &'static ([f64; GL_ORDER], [f64; GL_ORDER]) {
    static TABLE: OnceLock<([f64; GL_ORDER], [f64; GL_ORDER])> = OnceLock::new();
    TABLE.get_or_init(|| {
        let n = GL_ORDER;
        let mut x = [0.0; GL_ORDER];
        let mut w = [0.0; GL_ORDER];
        for i in 0..n {
            let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (mut p0, mut p1) = (1.0, z);
                for k in 2..=n {
                    let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                    p0 = p1;
                    p1 = p2;
                }
                dp = n as f64 * (z * p1 - p0) / (z * z - 1.0);
                let dz = p1 / dp;
                z -= dz;
                if dz.abs() < 1e-16 {
                    break;
                }
            }
            x[i] = z;
            w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
        }
        (x, w)
    })
}

/// Monte-Carlo estimate of belief and plausibility with standard errors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub bel: f64,
    pub pl: f64,
    pub bel_se: f64,
    pub pl_se: f64,
    pub n: usize,
}

/// Samples `M ~ N(μ, σ²)` and averages the necessity and possibility of the
/// interval under `GFN(M, h)`.
pub fn mc_bel_pl(g: &Grfn, iv: &Interval, n: usize, seed: u64) -> McEstimate {
    let n = n.max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sigma = g.sigma2.sqrt();
    let (mut s_nec, mut s_nec2, mut s_pos, mut s_pos2) = (0.0, 0.0, 0.0, 0.0);
    for _ in 0..n {
        let z: f64 = StandardNormal.sample(&mut rng);
        let gfn = GaussianFuzzyNumber { mode: g.mu + sigma * z, precision: g.h };
        let nec = gfn.necessity(iv);
        let pos = gfn.possibility(iv);
        s_nec += nec;
        s_nec2 += nec * nec;
        s_pos += pos;
        s_pos2 += pos * pos;
    }
    let nf = n as f64;
    let (bel, pl) = (s_nec / nf, s_pos / nf);
    // an all-zero or all-one sample still leaves ~1/n of unresolved mass
    let floor = (1.0 - 1.0 / nf) / nf;
    let se = |s2: f64, m: f64| ((s2 / nf - m * m).max(floor) / nf).sqrt();
    McEstimate { bel, pl, bel_se: se(s_nec2, bel), pl_se: se(s_pos2, pl), n }
}
