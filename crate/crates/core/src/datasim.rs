//! Seeded generators for simulated survival data.
//!
//! * `illustrative`: one covariate, heteroscedastic log-normal-like times,
//!   random censoring with a configurable probability.
//! * `lph` / `nlph`: exponential Cox models with a linear or Gaussian-bump
//!   log-risk on ten uniform covariates.
//! * `nlnph`: a time-varying log-risk, times drawn by inverting the
//!   cumulative hazard numerically.
//!
//! The Cox-type generators censor administratively at the sample median of
//! the event times, so roughly half of the records are observed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::data::{DataError, Dataset, SurvivalRecord};

pub const COX_DIM: usize = 10;
pub const DEFAULT_COX_LAMBDA0: f64 = 0.1;
pub const DEFAULT_NLNPH_LAMBDA0: f64 = 0.02;
/// Peak hazard ratio and width of the Gaussian bump.
pub const NLPH_LAMBDA_MAX: f64 = 5.0;
pub const NLPH_R: f64 = 0.5;

#[derive(Debug, Error)]
pub enum DatasimError {
    #[error("invalid generator argument: {0}")]
    InvalidArgument(String),
    #[error("log-risk is not finite at t = {t}")]
    NonFinite { t: f64 },
    #[error("cumulative hazard stays below {target} up to t = {horizon}")]
    NoEvent { target: f64, horizon: f64 },
    #[error("{0}")]
    Data(#[from] DataError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoxKind {
    Lph,
    Nlph,
}

impl CoxKind {
    /// Time-invariant log-risk `g(x)`.
    pub fn log_risk(&self, x: &[f64]) -> f64 {
        match self {
            CoxKind::Lph => x[0] + 2.0 * x[1],
            CoxKind::Nlph => NLPH_LAMBDA_MAX.ln() * (-(x[0] * x[0] + x[1] * x[1]) / (2.0 * NLPH_R * NLPH_R)).exp(),
        }
    }
}

/// `log T = 1.5x + 2cos(3x)³ + (x² + 5)/(3√5)·V` for `x ~ U[-2, 2]`, `V ~ N(0, 1)`.
pub fn illustrative_log_time(x: f64, v: f64) -> f64 {
    1.5 * x + 2.0 * (3.0 * x).cos().powi(3) + (x * x + 5.0) / (3.0 * 5f64.sqrt()) * v
}

fn check_n(n: usize) -> Result<(), DatasimError> {
    if n == 0 {
        return Err(DatasimError::InvalidArgument("n must be >= 1".into()));
    }
    Ok(())
}

/// How a record selected for censoring is flagged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CensorFlag {
    /// `d = 1` iff the event happened before the drawn censoring time.
    #[default]
    Observed,
    /// Every selected record is flagged censored, even when `τ ≥ t`.
    Selected,
}

pub fn gen_illustrative(n: usize, censor_prob: f64, seed: u64) -> Result<Dataset, DatasimError> {
    gen_illustrative_with(n, censor_prob, CensorFlag::Observed, seed)
}

pub fn gen_illustrative_with(n: usize, censor_prob: f64, flag: CensorFlag, seed: u64) -> Result<Dataset, DatasimError> {
    check_n(n)?;
    if !(0.0..=1.0).contains(&censor_prob) {
        return Err(DatasimError::InvalidArgument(format!("censor_prob must lie in [0, 1], got {censor_prob}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut xs = Vec::with_capacity(n);
    let mut ts = Vec::with_capacity(n);
    for _ in 0..n {
        let x: f64 = rng.random_range(-2.0..=2.0);
        let v: f64 = rng.sample(StandardNormal);
        xs.push(x);
        ts.push(illustrative_log_time(x, v).exp());
    }
    let t_max = ts.iter().cloned().fold(0.0, f64::max);
    let records = xs
        .into_iter()
        .zip(ts)
        .map(|(x, t)| {
            let selected = rng.random::<f64>() < censor_prob;
            let tau = rng.random::<f64>() * t_max;
            let (duration, event) = match (selected, flag) {
                (true, _) if tau < t => (tau.max(f64::MIN_POSITIVE), false),
                (true, CensorFlag::Selected) => (t, false),
                _ => (t, true),
            };
            SurvivalRecord { x: vec![x], duration, event, true_duration: Some(t) }
        })
        .collect();
    Ok(Dataset::new(records, Dataset::default_names(1))?)
}

/// Administrative censoring at the median of the event times.
fn censor_at_median(xs: Vec<Vec<f64>>, ts: Vec<f64>) -> Result<Dataset, DatasimError> {
    let p = xs[0].len();
    let mut sorted = ts.clone();
    sorted.sort_by(f64::total_cmp);
    let m = sorted.len();
    let tau_end = if m % 2 == 1 { sorted[m / 2] } else { 0.5 * (sorted[m / 2 - 1] + sorted[m / 2]) };
    let records = xs
        .into_iter()
        .zip(ts)
        .map(|(x, t)| {
            let event = t <= tau_end;
            SurvivalRecord { x, duration: if event { t } else { tau_end }, event, true_duration: Some(t) }
        })
        .collect();
    Ok(Dataset::new(records, Dataset::default_names(p))?)
}

fn uniform_covariates(rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..COX_DIM).map(|_| rng.random_range(-1.0..=1.0)).collect()
}

/// Open-interval uniform draw, safe for `-ln(u)`.
fn open_unit(rng: &mut ChaCha8Rng) -> f64 {
    loop {
        let u: f64 = rng.random();
        if u > 0.0 {
            return u;
        }
    }
}

/// Exponential Cox model: `T = -ln U / (λ₀ e^{g(x)})`.
pub fn gen_cox_exponential(n: usize, kind: CoxKind, lambda0: f64, seed: u64) -> Result<Dataset, DatasimError> {
    check_n(n)?;
    if !(lambda0 > 0.0) || !lambda0.is_finite() {
        return Err(DatasimError::InvalidArgument(format!("lambda0 must be positive, got {lambda0}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut xs = Vec::with_capacity(n);
    let mut ts = Vec::with_capacity(n);
    for _ in 0..n {
        let x = uniform_covariates(&mut rng);
        let u = open_unit(&mut rng);
        ts.push(-u.ln() / (lambda0 * kind.log_risk(&x).exp()));
        xs.push(x);
    }
    censor_at_median(xs, ts)
}

/// Time-varying log-risk `g(t, x)`.
pub trait LogRisk {
    fn log_risk(&self, t: f64, x: &[f64]) -> f64;
}

impl<F: Fn(f64, &[f64]) -> f64> LogRisk for F {
    fn log_risk(&self, t: f64, x: &[f64]) -> f64 {
        self(t, x)
    }
}

/// Default nonproportional log-risk `g(t, x) = g₁(x) + g₂(x)·t` with a
/// Gaussian bump `g₁` on `(x₀, x₁)` and a nonnegative slope driven by `x₂`:
/// `g₁(x) = ln(peak)·exp(-(x₀² + x₁²)/(2r²))`, `g₂(x) = slope·(1 + x₂)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NlnphStandIn {
    pub peak: f64,
    pub r: f64,
    pub slope: f64,
}

impl Default for NlnphStandIn {
    fn default() -> Self {
        NlnphStandIn { peak: NLPH_LAMBDA_MAX, r: NLPH_R, slope: 0.02 }
    }
}

impl LogRisk for NlnphStandIn {
    fn log_risk(&self, t: f64, x: &[f64]) -> f64 {
        let g1 = self.peak.ln() * (-(x[0] * x[0] + x[1] * x[1]) / (2.0 * self.r * self.r)).exp();
        g1 + self.slope * (1.0 + x[2]) * t
    }
}

const HORIZON: f64 = 1e12;

/// `Λ(t) = ∫₀ᵗ λ₀ e^{g(s, x)} ds` and its inverse.
pub struct CumulativeHazard<'a, G: LogRisk + ?Sized> {
    pub lambda0: f64,
    pub g: &'a G,
    pub x: &'a [f64],
}

impl<G: LogRisk + ?Sized> CumulativeHazard<'_, G> {
    pub fn hazard(&self, t: f64) -> Result<f64, DatasimError> {
        let v = self.lambda0 * self.g.log_risk(t, self.x).exp();
        if v.is_finite() {
            Ok(v)
        } else {
            Err(DatasimError::NonFinite { t })
        }
    }

    /// `∫ₐᵇ λ(s) ds` by adaptive Simpson.
    pub fn integral(&self, a: f64, b: f64) -> Result<f64, DatasimError> {
        let (fa, fm, fb) = (self.hazard(a)?, self.hazard(0.5 * (a + b))?, self.hazard(b)?);
        let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
        self.simpson(a, b, fa, fm, fb, whole, 1e-12 * (1.0 + whole.abs()), 50)
    }

    #[allow(clippy::too_many_arguments)]
    fn simpson(&self, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> Result<f64, DatasimError> {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (self.hazard(lm)?, self.hazard(rm)?);
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return Ok(left + right + delta / 15.0);
        }
        Ok(self.simpson(a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)?
            + self.simpson(m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)?)
    }

    /// Smallest `t` with `Λ(t) = target`, to an absolute residual of 1e-9.
    pub fn invert(&self, target: f64) -> Result<f64, DatasimError> {
        if target <= 0.0 {
            return Ok(0.0);
        }
        // bracket [lo, hi] with Λ(lo) ≤ target ≤ Λ(hi)
        let (mut lo, mut big_lo) = (0.0, 0.0);
        let mut hi = (target / self.hazard(0.0)?).min(HORIZON);
        let mut big_hi = self.integral(0.0, hi)?;
        while big_hi < target {
            if hi >= HORIZON {
                return Err(DatasimError::NoEvent { target, horizon: HORIZON });
            }
            let next = (2.0 * hi).min(HORIZON);
            let add = self.integral(hi, next)?;
            lo = hi;
            big_lo = big_hi;
            hi = next;
            big_hi += add;
        }
        // safeguarded Newton from the lower end, tracking Λ at the iterate
        let (mut t, mut big_t) = (lo, big_lo);
        for _ in 0..200 {
            let r = big_t - target;
            if r.abs() <= 1e-9 {
                return Ok(t);
            }
            if r < 0.0 {
                lo = t;
                big_lo = big_t;
            } else {
                hi = t;
            }
            let mut next = t - r / self.hazard(t)?;
            if !(next > lo && next < hi) {
                next = 0.5 * (lo + hi);
            }
            big_t = big_lo + self.integral(lo, next)?;
            t = next;
            if hi - lo <= 1e-15 * hi {
                return Ok(t);
            }
        }
        Ok(t)
    }
}

/// Nonproportional-hazards data with `p = 10` uniform covariates.
pub fn gen_nlnph<G: LogRisk + ?Sized>(n: usize, lambda0: f64, g: &G, seed: u64) -> Result<Dataset, DatasimError> {
    check_n(n)?;
    if !(lambda0 > 0.0) || !lambda0.is_finite() {
        return Err(DatasimError::InvalidArgument(format!("lambda0 must be positive, got {lambda0}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut xs = Vec::with_capacity(n);
    let mut ts = Vec::with_capacity(n);
    for _ in 0..n {
        let x = uniform_covariates(&mut rng);
        let e = -open_unit(&mut rng).ln();
        let t = CumulativeHazard { lambda0, g, x: &x }.invert(e)?;
        ts.push(t.max(f64::MIN_POSITIVE));
        xs.push(x);
    }
    censor_at_median(xs, ts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
        let mut a = a.to_vec();
        let mut b = b.to_vec();
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        let (mut i, mut j, mut d) = (0, 0, 0.0f64);
        while i < a.len() && j < b.len() {
            let v = a[i].min(b[j]);
            while i < a.len() && a[i] <= v {
                i += 1;
            }
            while j < b.len() && b[j] <= v {
                j += 1;
            }
            d = d.max((i as f64 / a.len() as f64 - j as f64 / b.len() as f64).abs());
        }
        d
    }

    fn true_times(d: &Dataset) -> Vec<f64> {
        d.records.iter().map(|r| r.true_duration.unwrap()).collect()
    }

    fn bookkeeping_holds(d: &Dataset) {
        for r in &d.records {
            let t = r.true_duration.unwrap();
            if r.event {
                assert_eq!(r.duration, t);
            } else {
                assert!(r.duration <= t);
            }
        }
    }

    #[test]
    fn illustrative_formula_and_no_censoring() {
        assert_relative_eq!(illustrative_log_time(0.0, 0.0).exp(), 2f64.exp(), max_relative = 1e-15);
        let d = gen_illustrative(500, 0.0, 1).unwrap();
        assert!(d.records.iter().all(|r| r.event && Some(r.duration) == r.true_duration));
        assert!(d.records.iter().all(|r| (-2.0..=2.0).contains(&r.x[0])));
        assert_eq!(d.dim(), 1);
    }

    #[test]
    fn illustrative_censoring_rate() {
        let p = 0.5;
        let d = gen_illustrative(2000, p, 3).unwrap();
        bookkeeping_holds(&d);
        let t = true_times(&d);
        let t_max = t.iter().cloned().fold(0.0, f64::max);
        // P(censored | t) = p · t / t_max
        let q: f64 = t.iter().map(|ti| p * ti / t_max).sum::<f64>() / t.len() as f64;
        let n = d.len() as f64;
        let half_width = 2.576 * (q * (1.0 - q) / n).sqrt();
        let rate = d.censoring_rate();
        assert!((rate - q).abs() <= half_width, "rate {rate}, expected {q} ± {half_width}");
        assert!(d.records.iter().filter(|r| !r.event).all(|r| r.duration < r.true_duration.unwrap()));
    }

    #[test]
    fn selected_flagging_censors_every_pick() {
        let a = gen_illustrative_with(2000, 0.5, CensorFlag::Selected, 3).unwrap();
        let b = gen_illustrative(2000, 0.5, 3).unwrap();
        bookkeeping_holds(&a);
        let half_width = 2.576 * (0.25f64 / 2000.0).sqrt();
        assert!((a.censoring_rate() - 0.5).abs() <= half_width);
        for (ra, rb) in a.records.iter().zip(&b.records) {
            assert_eq!((ra.x[0], ra.duration, ra.true_duration), (rb.x[0], rb.duration, rb.true_duration));
            assert!(ra.event <= rb.event);
        }
    }

    #[test]
    fn cox_peak_risks() {
        let zero = vec![0.0; COX_DIM];
        assert_eq!(DEFAULT_COX_LAMBDA0 * CoxKind::Lph.log_risk(&zero).exp(), DEFAULT_COX_LAMBDA0);
        assert_relative_eq!(CoxKind::Nlph.log_risk(&zero), 5f64.ln());
        assert_relative_eq!(DEFAULT_COX_LAMBDA0 * CoxKind::Nlph.log_risk(&zero).exp(), 5.0 * DEFAULT_COX_LAMBDA0, max_relative = 1e-15);
    }

    #[test]
    fn cox_median_censoring() {
        for kind in [CoxKind::Lph, CoxKind::Nlph] {
            let d = gen_cox_exponential(5000, kind, DEFAULT_COX_LAMBDA0, 2).unwrap();
            bookkeeping_holds(&d);
            let rate = d.censoring_rate();
            assert!((0.48..=0.52).contains(&rate), "{kind:?}: {rate}");
            assert_eq!(d.dim(), COX_DIM);
            let tau = d.records.iter().filter(|r| !r.event).map(|r| r.duration).collect::<Vec<_>>();
            assert!(tau.windows(2).all(|w| w[0] == w[1]));
        }
    }

    #[test]
    fn lph_risk_is_anticoncordant_with_time() {
        let d = gen_cox_exponential(5000, CoxKind::Lph, DEFAULT_COX_LAMBDA0, 4).unwrap();
        let g: Vec<f64> = d.records.iter().map(|r| CoxKind::Lph.log_risk(&r.x)).collect();
        let lt: Vec<f64> = true_times(&d).iter().map(|t| t.ln()).collect();
        let n = g.len();
        let mut s = 0i64;
        for i in 0..n {
            for j in i + 1..n {
                let a = (g[i] - g[j]).signum() * (lt[i] - lt[j]).signum();
                s += a as i64;
            }
        }
        let nf = n as f64;
        let tau = s as f64 / (nf * (nf - 1.0) / 2.0);
        let z = 3.0 * tau * (nf * (nf - 1.0)).sqrt() / (2.0 * (2.0 * nf + 5.0)).sqrt();
        assert!(tau < 0.0 && z < -3.29, "tau {tau}, z {z}");
    }

    #[test]
    fn generators_are_seeded() {
        assert_eq!(gen_illustrative(50, 0.3, 9).unwrap(), gen_illustrative(50, 0.3, 9).unwrap());
        assert_ne!(gen_illustrative(50, 0.3, 9).unwrap(), gen_illustrative(50, 0.3, 10).unwrap());
        let a = gen_cox_exponential(50, CoxKind::Nlph, 0.1, 1).unwrap();
        assert_eq!(a, gen_cox_exponential(50, CoxKind::Nlph, 0.1, 1).unwrap());
        assert_ne!(a, gen_cox_exponential(50, CoxKind::Nlph, 0.1, 2).unwrap());
        let s = NlnphStandIn::default();
        assert_eq!(gen_nlnph(30, 0.02, &s, 1).unwrap(), gen_nlnph(30, 0.02, &s, 1).unwrap());
        assert_ne!(gen_nlnph(30, 0.02, &s, 1).unwrap(), gen_nlnph(30, 0.02, &s, 2).unwrap());
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(gen_illustrative(0, 0.1, 0).is_err());
        assert!(gen_illustrative(10, 1.5, 0).is_err());
        assert!(gen_cox_exponential(10, CoxKind::Lph, 0.0, 0).is_err());
        assert!(gen_nlnph(10, -1.0, &NlnphStandIn::default(), 0).is_err());
        let bad = |_t: f64, _x: &[f64]| f64::NAN;
        assert!(matches!(gen_nlnph(10, 0.02, &bad, 0), Err(DatasimError::NonFinite { .. })));
        let dying = |t: f64, _x: &[f64]| -t;
        assert!(matches!(gen_nlnph(50, 0.02, &dying, 0), Err(DatasimError::NoEvent { .. })));
    }

    #[test]
    fn nlnph_zero_risk_is_exponential() {
        let zero = |_t: f64, _x: &[f64]| 0.0;
        let d = gen_nlnph(25_000, DEFAULT_NLNPH_LAMBDA0, &zero, 5).unwrap();
        let mean = true_times(&d).iter().sum::<f64>() / d.len() as f64;
        assert!((mean - 50.0).abs() <= 0.05 * 50.0, "mean {mean}");
        bookkeeping_holds(&d);
        assert!((0.48..=0.52).contains(&d.censoring_rate()));
    }

    #[test]
    fn nlnph_constant_risk_matches_cox_law() {
        let c = 0.7;
        let konst = move |_t: f64, _x: &[f64]| c;
        let a = true_times(&gen_nlnph(10_000, 0.05, &konst, 11).unwrap());
        // Cox draws with zero log-risk and baseline λ₀e^c
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let rate = 0.05 * f64::exp(c);
        let reference: Vec<f64> = (0..10_000).map(|_| -open_unit(&mut rng).ln() / rate).collect();
        // two-sample KS at the 0.1% level
        let crit = 1.949 * (2.0 / 10_000.0f64).sqrt();
        assert!(ks_statistic(&a, &reference) < crit);
        let shifted: Vec<f64> = reference.iter().map(|t| 1.2 * t).collect();
        assert!(ks_statistic(&a, &shifted) > crit);
    }

    #[test]
    fn inversion_residual_is_tiny() {
        let g = NlnphStandIn::default();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..300 {
            let x = uniform_covariates(&mut rng);
            let e = -open_unit(&mut rng).ln();
            let ch = CumulativeHazard { lambda0: DEFAULT_NLNPH_LAMBDA0, g: &g, x: &x };
            let t = ch.invert(e).unwrap();
            let resid = (ch.integral(0.0, t).unwrap() - e).abs();
            assert!(resid <= 1e-6, "residual {resid} at t = {t}");
        }
    }

    #[test]
    fn simpson_is_exact_on_closed_forms() {
        let lin = |t: f64, _x: &[f64]| 0.3 * t;
        let ch = CumulativeHazard { lambda0: 2.0, g: &lin, x: &[] };
        let want = 2.0 / 0.3 * ((0.3f64 * 7.0).exp() - 1.0);
        assert_relative_eq!(ch.integral(0.0, 7.0).unwrap(), want, max_relative = 1e-11);
        assert_relative_eq!(ch.invert(want).unwrap(), 7.0, max_relative = 1e-9);
    }
}
