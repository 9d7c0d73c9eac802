//! Censoring-aware generalized negative log-likelihood, the regularized
//! training cost and its exact gradient.
//!
//! An uncensored record contributes the belief/plausibility of the
//! ε-neighbourhood `[y* - ε, y* + ε]`; a censored one those of `[y*, ∞)`.
//! The two are mixed with weight `eta` on the belief term.
//!
//! The gradient is accumulated in reverse through the fusion and RBF layers.
//! The local derivative of each record's loss with respect to the output
//! GRFN `(μ, σ², h)` comes from evaluating the closed-form measures on
//! [`Dual3`] numbers.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Dataset;
use crate::dual::{Dual3, Real};
use crate::grfn::{bel_pl_generic, Grfn, Interval};
use crate::model::{ModelParams, Standardizer, H_FLOOR};

/// Lower clamp applied to belief/plausibility values before taking logs.
pub const DEFAULT_PROB_FLOOR: f64 = 1e-300;

#[derive(Debug, Error, PartialEq)]
pub enum LossError {
    #[error("invalid loss hyperparameter: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossHyper {
    /// Weight of the belief term; smaller is more cautious.
    pub eta: f64,
    /// Half-width of the observation interval, in units of `log t`.
    pub eps: f64,
    /// Penalty on prototype precisions.
    pub xi: f64,
    /// Penalty on squared RBF scales.
    pub rho: f64,
    pub prob_floor: f64,
}

impl Default for LossHyper {
    fn default() -> Self {
        LossHyper { eta: 0.1, eps: 1e-4, xi: 0.0, rho: 0.0, prob_floor: DEFAULT_PROB_FLOOR }
    }
}

impl LossHyper {
    pub fn validate(&self) -> Result<(), LossError> {
        if !(0.0..=1.0).contains(&self.eta) {
            return Err(LossError::Invalid(format!("eta must lie in [0, 1], got {}", self.eta)));
        }
        if !(self.eps > 0.0) || !self.eps.is_finite() {
            return Err(LossError::Invalid(format!("eps must be positive, got {}", self.eps)));
        }
        if !(self.xi >= 0.0) || !(self.rho >= 0.0) {
            return Err(LossError::Invalid("regularization coefficients must be >= 0".into()));
        }
        if !(self.prob_floor > 0.0 && self.prob_floor <= 1e-6) {
            return Err(LossError::Invalid(format!("prob_floor must lie in (0, 1e-6], got {}", self.prob_floor)));
        }
        Ok(())
    }

    /// Same hyperparameters without the regularizers.
    pub fn unregularized(&self) -> Self {
        LossHyper { xi: 0.0, rho: 0.0, ..*self }
    }

    fn observation(&self, y_star: f64, event: bool) -> Interval {
        if event {
            Interval { lo: y_star - self.eps, hi: y_star + self.eps }
        } else {
            Interval::above(y_star)
        }
    }
}

fn mix<T: Real>(bel: T, pl: T, hyper: &LossHyper) -> T {
    let nl_bel = -bel.floor_at(hyper.prob_floor).ln();
    let nl_pl = -pl.floor_at(hyper.prob_floor).ln();
    nl_bel.scale(hyper.eta) + nl_pl.scale(1.0 - hyper.eta)
}

/// Loss of one record given the predicted GRFN on `log t`.
pub fn instance_loss(g: &Grfn, y_star: f64, event: bool, hyper: &LossHyper) -> f64 {
    let (bel, pl) = g.bel_pl(&hyper.observation(y_star, event));
    mix(bel, pl, hyper)
}

/// Loss and its partial derivatives with respect to `(μ, σ², h)`.
/// Requires `sigma2 > 0`.
pub fn instance_loss_grad(g: &Grfn, y_star: f64, event: bool, hyper: &LossHyper) -> (f64, [f64; 3]) {
    let iv = hyper.observation(y_star, event);
    let (bel, pl) = bel_pl_generic(Dual3::var(g.mu, 0), Dual3::var(g.sigma2, 1), Dual3::var(g.h, 2), &iv);
    let l = mix(bel, pl, hyper);
    (l.v, l.d)
}

/// Training data with features standardized once.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub p: usize,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub event: Vec<bool>,
}

impl Prepared {
    pub fn new(data: &Dataset, std: &Standardizer) -> Self {
        let p = data.dim();
        let mut x = vec![0.0; data.len() * p];
        for (i, r) in data.records.iter().enumerate() {
            std.transform_into(&r.x, &mut x[i * p..(i + 1) * p]);
        }
        Prepared {
            p,
            x,
            y: data.records.iter().map(|r| r.log_duration()).collect(),
            event: data.events(),
        }
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.p..(i + 1) * self.p]
    }
}

fn penalty(m: &ModelParams, hyper: &LossHyper) -> f64 {
    let kf = m.k as f64;
    let mut pen = 0.0;
    if hyper.xi > 0.0 {
        pen += hyper.xi / kf * m.log_h.iter().map(|v| v.exp()).sum::<f64>();
    }
    if hyper.rho > 0.0 {
        pen += hyper.rho / kf * m.gamma.iter().map(|g| g * g).sum::<f64>();
    }
    pen
}

fn record_loss(m: &ModelParams, batch: &Prepared, i: usize, hyper: &LossHyper) -> f64 {
    let fused = m.fuse_unchecked(batch.row(i));
    let g = fused.grfn;
    if fused.vacuous || g.sigma2 == 0.0 {
        return instance_loss(&g, batch.y[i], batch.event[i], hyper);
    }
    let (bel, pl) = bel_pl_generic(g.mu, g.sigma2, g.h, &hyper.observation(batch.y[i], batch.event[i]));
    mix(bel, pl, hyper)
}

/// Regularized average loss over the given rows (all rows when `None`).
pub fn cost_prepared(m: &ModelParams, batch: &Prepared, rows: Option<&[usize]>, hyper: &LossHyper) -> f64 {
    let mut sum = 0.0;
    let n = match rows {
        Some(idx) => {
            for &i in idx {
                sum += record_loss(m, batch, i, hyper);
            }
            idx.len()
        }
        None => {
            for i in 0..batch.len() {
                sum += record_loss(m, batch, i, hyper);
            }
            batch.len()
        }
    };
    sum / n as f64 + penalty(m, hyper)
}

/// Regularized training cost on a raw dataset.
pub fn total_cost(m: &ModelParams, std: &Standardizer, data: &Dataset, hyper: &LossHyper) -> f64 {
    cost_prepared(m, &Prepared::new(data, std), None, hyper)
}

/// Cost and its gradient with respect to every stored parameter.
pub fn grad_total_cost(m: &ModelParams, std: &Standardizer, data: &Dataset, hyper: &LossHyper) -> (f64, ModelParams) {
    cost_grad_prepared(m, &Prepared::new(data, std), None, hyper)
}

struct Scratch {
    diff: Vec<f64>,
    d2: Vec<f64>,
    s: Vec<f64>,
    a: Vec<f64>,
    mu: Vec<f64>,
    var: Vec<f64>,
    prec: Vec<f64>,
}

pub fn cost_grad_prepared(
    m: &ModelParams,
    batch: &Prepared,
    rows: Option<&[usize]>,
    hyper: &LossHyper,
) -> (f64, ModelParams) {
    let (k, p) = (m.k, m.p);
    let mut grad = ModelParams::zeros(k, p);
    let mut sc = Scratch {
        diff: vec![0.0; k * p],
        d2: vec![0.0; k],
        s: vec![0.0; k],
        a: vec![0.0; k],
        mu: vec![0.0; k],
        var: (0..k).map(|c| m.sigma2(c)).collect(),
        prec: (0..k).map(|c| m.precision(c)).collect(),
    };
    let all: Vec<usize>;
    let idx = match rows {
        Some(r) => r,
        None => {
            all = (0..batch.len()).collect();
            &all
        }
    };
    let w = 1.0 / idx.len() as f64;
    let mut sum = 0.0;
    for &i in idx {
        sum += accumulate_record(m, batch.row(i), batch.y[i], batch.event[i], hyper, w, &mut sc, &mut grad);
    }

    let kf = k as f64;
    for c in 0..k {
        if hyper.xi > 0.0 {
            grad.log_h[c] += hyper.xi / kf * sc.prec[c];
        }
        if hyper.rho > 0.0 {
            grad.gamma[c] += 2.0 * hyper.rho / kf * m.gamma[c];
        }
    }
    (sum / idx.len() as f64 + penalty(m, hyper), grad)
}

#[allow(clippy::too_many_arguments)]
fn accumulate_record(
    m: &ModelParams,
    x: &[f64],
    y: f64,
    event: bool,
    hyper: &LossHyper,
    weight: f64,
    sc: &mut Scratch,
    grad: &mut ModelParams,
) -> f64 {
    let (k, p) = (m.k, m.p);
    let mut big_h = 0.0;
    let mut num_mu = 0.0;
    let mut num_var = 0.0;
    for c in 0..k {
        let proto = m.prototype(c);
        let coef = m.coefficients(c);
        let mut d2 = 0.0;
        let mut mu = m.beta0[c];
        for j in 0..p {
            let d = x[j] - proto[j];
            sc.diff[c * p + j] = d;
            d2 += d * d;
            mu += coef[j] * x[j];
        }
        let s = (-m.gamma[c] * m.gamma[c] * d2).exp();
        let a = s * sc.prec[c];
        sc.d2[c] = d2;
        sc.s[c] = s;
        sc.a[c] = a;
        sc.mu[c] = mu;
        big_h += a;
        num_mu += a * mu;
        num_var += a * a * sc.var[c];
    }
    if big_h < H_FLOOR || !big_h.is_finite() {
        // total ignorance: loss from the vacuous prediction, no usable gradient
        let g = Grfn { mu: 0.0, sigma2: 0.0, h: 0.0 };
        return instance_loss(&g, y, event, hyper);
    }
    let mu = num_mu / big_h;
    let sigma2 = num_var / (big_h * big_h);
    let (loss, [g_mu, g_s2, g_h]) = instance_loss_grad(&Grfn { mu, sigma2, h: big_h }, y, event, hyper);

    let inv_h = 1.0 / big_h;
    for c in 0..k {
        let a = sc.a[c];
        let v = sc.var[c];
        let g_a = g_mu * (sc.mu[c] - mu) * inv_h + g_s2 * (2.0 * a * v * inv_h * inv_h - 2.0 * sigma2 * inv_h) + g_h;
        grad.log_h[c] += weight * g_a * a;
        grad.log_sigma2[c] += weight * g_s2 * a * a * v * inv_h * inv_h;

        let g_muk = weight * g_mu * a * inv_h;
        grad.beta0[c] += g_muk;
        for (gb, xj) in grad.beta[c * p..(c + 1) * p].iter_mut().zip(x) {
            *gb += g_muk * xj;
        }

        // s = exp(-γ² d²)
        let g_s = weight * g_a * sc.prec[c];
        let gam = m.gamma[c];
        let s = sc.s[c];
        grad.gamma[c] += g_s * (-2.0 * gam * sc.d2[c] * s);
        let coef = g_s * s * gam * gam * 2.0;
        for j in 0..p {
            grad.prototypes[c * p + j] += coef * sc.diff[c * p + j];
        }
    }
    loss
}

/// Central differences of `f` at `theta` with per-coordinate step
/// `step * max(1, |θ_i|)`.
pub fn central_differences<F>(f: F, theta: &[f64], step: f64) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64,
{
    let mut work = theta.to_vec();
    (0..theta.len())
        .map(|i| {
            let h = step * theta[i].abs().max(1.0);
            work[i] = theta[i] + h;
            let up = f(&work);
            work[i] = theta[i] - h;
            let down = f(&work);
            work[i] = theta[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Finite-difference gradient of [`total_cost`], as an independent check.
pub fn finite_diff_grad(
    m: &ModelParams,
    std: &Standardizer,
    data: &Dataset,
    hyper: &LossHyper,
    step: f64,
) -> ModelParams {
    let batch = Prepared::new(data, std);
    let mut probe = m.clone();
    let fd = central_differences(
        |theta| {
            let mut q = probe.clone();
            q.set_flat(theta);
            cost_prepared(&q, &batch, None, hyper)
        },
        &m.to_flat(),
        step,
    );
    probe.set_flat(&fd);
    probe
}
