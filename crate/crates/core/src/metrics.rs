//! Survival evaluation: Kaplan–Meier, time-dependent concordance, IPCW
//! Brier score and binomial log-likelihood, and interval calibration.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::data::SurvivalRecord;
use crate::model::{Model, ModelError};
use crate::normal;

/// Clamp for log arguments in the binomial log-likelihood.
pub const BLL_CLAMP: f64 = 1e-7;
/// Number of integration points for IBS / IBLL.
pub const INTEGRATION_POINTS: usize = 100;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("empty input")]
    Empty,
    #[error("no comparable pairs")]
    NoComparablePairs,
    #[error("no uncensored records to evaluate")]
    NoUncensored,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("{0}")]
    Model(#[from] ModelError),
}

/// Right-continuous step function that equals 1 before the first knot.
#[derive(Debug, Clone, PartialEq)]
pub struct StepFunction {
    pub knots: Vec<f64>,
    pub values: Vec<f64>,
}

impl StepFunction {
    /// Value at `t`.
    pub fn eval(&self, t: f64) -> f64 {
        match self.knots.partition_point(|k| *k <= t) {
            0 => 1.0,
            i => self.values[i - 1],
        }
    }

    /// Left limit at `t`.
    pub fn eval_left(&self, t: f64) -> f64 {
        match self.knots.partition_point(|k| *k < t) {
            0 => 1.0,
            i => self.values[i - 1],
        }
    }
}

fn check_inputs(durations: &[f64], events: &[bool]) -> Result<(), MetricsError> {
    if durations.is_empty() {
        return Err(MetricsError::Empty);
    }
    if durations.len() != events.len() {
        return Err(MetricsError::InvalidArgument(format!(
            "{} durations but {} event flags",
            durations.len(),
            events.len()
        )));
    }
    if durations.iter().any(|t| !(*t > 0.0) || !t.is_finite()) {
        return Err(MetricsError::InvalidArgument("durations must be positive and finite".into()));
    }
    Ok(())
}

/// Product-limit estimator with one knot per distinct time.
pub fn kaplan_meier(times: &[f64], events: &[bool]) -> Result<StepFunction, MetricsError> {
    check_inputs(times, events)?;
    let mut order: Vec<usize> = (0..times.len()).collect();
    order.sort_by(|&a, &b| times[a].total_cmp(&times[b]));
    let mut at_risk = times.len();
    let mut s = 1.0;
    let (mut knots, mut values) = (Vec::new(), Vec::new());
    let mut i = 0;
    while i < order.len() {
        let t = times[order[i]];
        let (mut deaths, mut leaving) = (0, 0);
        while i < order.len() && times[order[i]] == t {
            deaths += events[order[i]] as usize;
            leaving += 1;
            i += 1;
        }
        s *= 1.0 - deaths as f64 / at_risk as f64;
        at_risk -= leaving;
        knots.push(t);
        values.push(s);
    }
    Ok(StepFunction { knots, values })
}

/// Kaplan–Meier estimate of the censoring survival function.
pub fn censoring_km(times: &[f64], events: &[bool]) -> Result<StepFunction, MetricsError> {
    let flipped: Vec<bool> = events.iter().map(|e| !e).collect();
    kaplan_meier(times, &flipped)
}

/// Which survival estimate of the model feeds the point metrics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SurvMode {
    /// Belief-based lower survival.
    Lower,
    /// Plausibility-based upper survival.
    Upper,
    /// Average of the two.
    #[default]
    Mid,
}

impl fmt::Display for SurvMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SurvMode::Lower => "lower",
            SurvMode::Upper => "upper",
            SurvMode::Mid => "mid",
        })
    }
}

impl FromStr for SurvMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "lower" => Ok(SurvMode::Lower),
            "upper" => Ok(SurvMode::Upper),
            "mid" => Ok(SurvMode::Mid),
            _ => Err(format!("unknown survival mode `{s}` (expected lower, mid or upper)")),
        }
    }
}

/// Survival curves of `n` subjects on a common ascending time grid,
/// stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SurvivalGrid {
    pub times: Vec<f64>,
    pub surv: Vec<f64>,
    pub mode: SurvMode,
}

impl SurvivalGrid {
    pub fn new(times: Vec<f64>, surv: Vec<f64>, mode: SurvMode) -> Result<Self, MetricsError> {
        if times.is_empty() || !surv.len().is_multiple_of(times.len()) {
            return Err(MetricsError::InvalidArgument("survival matrix does not match the time grid".into()));
        }
        if times.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(MetricsError::InvalidArgument("grid times must be strictly ascending".into()));
        }
        Ok(SurvivalGrid { times, surv, mode })
    }

    pub fn n_rows(&self) -> usize {
        self.surv.len() / self.times.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let g = self.times.len();
        &self.surv[i * g..(i + 1) * g]
    }

    /// Column holding the value at `t`; `None` before the first grid time.
    fn column(&self, t: f64) -> Option<usize> {
        self.times.partition_point(|k| *k <= t).checked_sub(1)
    }

    /// Stepwise value of row `i` at `t` (1 before the first grid time).
    pub fn at(&self, i: usize, t: f64) -> f64 {
        match self.column(t) {
            Some(c) => self.row(i)[c],
            None => 1.0,
        }
    }

    /// Applies `f` to every entry.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> SurvivalGrid {
        SurvivalGrid { times: self.times.clone(), surv: self.surv.iter().map(|v| f(*v)).collect(), mode: self.mode }
    }
}

/// Antolini's time-dependent concordance with Ishwaran's tie rules.
pub fn c_index_td(grid: &SurvivalGrid, durations: &[f64], events: &[bool]) -> Result<f64, MetricsError> {
    check_inputs(durations, events)?;
    let n = durations.len();
    if grid.n_rows() != n {
        return Err(MetricsError::InvalidArgument(format!("grid has {} rows for {n} records", grid.n_rows())));
    }
    let (mut conc, mut comparable) = (0.0, 0usize);
    for i in 0..n {
        let (ti, di) = (durations[i], events[i]);
        let col = grid.column(ti);
        let s_at = |r: usize| col.map_or(1.0, |c| grid.row(r)[c]);
        let si = s_at(i);
        for j in 0..n {
            if i == j {
                continue;
            }
            let (tj, dj) = (durations[j], events[j]);
            let score = if ti < tj && di {
                let sj = s_at(j);
                half_step(si < sj, si == sj)
            } else if ti == tj && (di || dj) {
                let sj = s_at(j);
                match (di, dj) {
                    (true, true) => 1.0 - 0.5 * (si != sj) as u8 as f64,
                    (true, false) => half_step(si < sj, si == sj),
                    _ => half_step(si > sj, si == sj),
                }
            } else {
                continue;
            };
            conc += score;
            comparable += 1;
        }
    }
    if comparable == 0 {
        return Err(MetricsError::NoComparablePairs);
    }
    Ok(conc / comparable as f64)
}

fn half_step(win: bool, tie: bool) -> f64 {
    win as u8 as f64 + 0.5 * tie as u8 as f64
}

fn ipcw_terms(
    t: f64,
    grid: &SurvivalGrid,
    durations: &[f64],
    events: &[bool],
    cens: &StepFunction,
    term: impl Fn(f64, bool) -> f64,
) -> Result<f64, MetricsError> {
    check_inputs(durations, events)?;
    let n = durations.len();
    if grid.n_rows() != n {
        return Err(MetricsError::InvalidArgument(format!("grid has {} rows for {n} records", grid.n_rows())));
    }
    let floor = 1.0 / (n as f64 + 1.0);
    let g_t = cens.eval(t).max(floor);
    let mut sum = 0.0;
    for i in 0..n {
        let s = grid.at(i, t);
        if durations[i] <= t && events[i] {
            sum += term(s, true) / cens.eval_left(durations[i]).max(floor);
        } else if durations[i] > t {
            sum += term(s, false) / g_t;
        }
    }
    Ok(sum / n as f64)
}

/// IPCW Brier score at `t`.
pub fn brier_score(t: f64, grid: &SurvivalGrid, durations: &[f64], events: &[bool], cens: &StepFunction) -> Result<f64, MetricsError> {
    ipcw_terms(t, grid, durations, events, cens, |s, died| if died { s * s } else { (1.0 - s) * (1.0 - s) })
}

/// IPCW binomial log-likelihood at `t`; log arguments clamped at [`BLL_CLAMP`].
pub fn binomial_ll(t: f64, grid: &SurvivalGrid, durations: &[f64], events: &[bool], cens: &StepFunction) -> Result<f64, MetricsError> {
    ipcw_terms(t, grid, durations, events, cens, |s, died| {
        let p = if died { 1.0 - s } else { s };
        p.max(BLL_CLAMP).ln()
    })
}

/// Midpoints of `n` equal cells on `[t1, t2]`.
pub fn integration_times(t1: f64, t2: f64, n: usize) -> Vec<f64> {
    let w = (t2 - t1) / n as f64;
    (0..n).map(|i| t1 + (i as f64 + 0.5) * w).collect()
}

fn integrate(
    t1: f64,
    t2: f64,
    n_points: usize,
    f: impl Fn(f64) -> Result<f64, MetricsError>,
) -> Result<f64, MetricsError> {
    if !(t1 < t2) || n_points == 0 {
        return Err(MetricsError::InvalidArgument(format!("need t1 < t2 and points >= 1, got [{t1}, {t2}], {n_points}")));
    }
    let mut sum = 0.0;
    for t in integration_times(t1, t2, n_points) {
        sum += f(t)?;
    }
    Ok(sum / n_points as f64)
}

/// `1/(t2 - t1) ∫ BS(t) dt` by the rectangle rule on `n_points` cells.
#[allow(clippy::too_many_arguments)]
pub fn integrated_brier_n(
    grid: &SurvivalGrid,
    durations: &[f64],
    events: &[bool],
    cens: &StepFunction,
    t1: f64,
    t2: f64,
    n_points: usize,
) -> Result<f64, MetricsError> {
    integrate(t1, t2, n_points, |t| brier_score(t, grid, durations, events, cens))
}

pub fn integrated_brier(grid: &SurvivalGrid, durations: &[f64], events: &[bool], cens: &StepFunction, t1: f64, t2: f64) -> Result<f64, MetricsError> {
    integrated_brier_n(grid, durations, events, cens, t1, t2, INTEGRATION_POINTS)
}

/// Integrated binomial log-likelihood (a nonpositive number).
pub fn integrated_bll(grid: &SurvivalGrid, durations: &[f64], events: &[bool], cens: &StepFunction, t1: f64, t2: f64) -> Result<f64, MetricsError> {
    integrate(t1, t2, INTEGRATION_POINTS, |t| binomial_ll(t, grid, durations, events, cens))
}

/// Lower, mid and upper survival grids of `model` for `records` at `times`.
pub fn survival_grids(model: &Model, records: &[SurvivalRecord], times: &[f64]) -> Result<[SurvivalGrid; 3], MetricsError> {
    if times.iter().any(|t| !(*t > 0.0)) {
        return Err(MetricsError::InvalidArgument("grid times must be positive".into()));
    }
    let cap = records.len() * times.len();
    let (mut lo, mut mid, mut hi) = (Vec::with_capacity(cap), Vec::with_capacity(cap), Vec::with_capacity(cap));
    for r in records {
        let pred = model.forward(&r.x)?;
        for &t in times {
            let (l, u) = pred.survival_bounds(t)?;
            lo.push(l);
            hi.push(u);
            mid.push(0.5 * (l + u));
        }
    }
    Ok([
        SurvivalGrid::new(times.to_vec(), lo, SurvMode::Lower)?,
        SurvivalGrid::new(times.to_vec(), mid, SurvMode::Mid)?,
        SurvivalGrid::new(times.to_vec(), hi, SurvMode::Upper)?,
    ])
}

pub fn survival_grid(model: &Model, records: &[SurvivalRecord], times: &[f64], mode: SurvMode) -> Result<SurvivalGrid, MetricsError> {
    let [lo, mid, hi] = survival_grids(model, records, times)?;
    Ok(match mode {
        SurvMode::Lower => lo,
        SurvMode::Mid => mid,
        SurvMode::Upper => hi,
    })
}

/// Sorted distinct durations.
pub fn unique_times(durations: &[f64]) -> Vec<f64> {
    let mut t = durations.to_vec();
    t.sort_by(f64::total_cmp);
    t.dedup();
    t
}

/// Ctd, IBS and IBLL of one survival grid whose times include every duration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointMetrics {
    pub ctd: f64,
    pub ibs: f64,
    /// Integrated binomial log-likelihood, nonpositive.
    pub ibll: f64,
}

pub fn point_metrics(grid: &SurvivalGrid, durations: &[f64], events: &[bool]) -> Result<PointMetrics, MetricsError> {
    let cens = censoring_km(durations, events)?;
    let t1 = durations.iter().cloned().fold(f64::INFINITY, f64::min);
    let t2 = durations.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Ok(PointMetrics {
        ctd: c_index_td(grid, durations, events)?,
        ibs: integrated_brier(grid, durations, events, &cens, t1, t2)?,
        ibll: integrated_bll(grid, durations, events, &cens, t1, t2)?,
    })
}

/// Which log-times a calibration curve is scored against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CalibrationTarget {
    /// Observed durations of uncensored records.
    #[default]
    Events,
    /// Simulated true durations of every record that carries one.
    TrueDurations,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationCurve {
    pub alphas: Vec<f64>,
    pub coverage_bpi: Vec<f64>,
    pub coverage_prob: Vec<f64>,
    pub n_eval: usize,
    /// Records dropped because the predicted belief cannot reach a level.
    pub n_excluded: usize,
}

/// Empirical coverage of belief prediction intervals and of central
/// intervals of `N(μ, σ² + 1/h)` at each level.
pub fn calibration_curve(
    model: &Model,
    records: &[SurvivalRecord],
    alphas: &[f64],
    target: CalibrationTarget,
) -> Result<CalibrationCurve, MetricsError> {
    if alphas.iter().any(|a| !(*a > 0.0 && *a < 1.0)) {
        return Err(MetricsError::InvalidArgument("levels must lie in (0, 1)".into()));
    }
    let truth: Vec<(&SurvivalRecord, f64)> = records
        .iter()
        .filter_map(|r| match target {
            CalibrationTarget::Events => r.event.then_some((r, r.duration.ln())),
            CalibrationTarget::TrueDurations => r.true_duration.map(|t| (r, t.ln())),
        })
        .collect();
    if truth.is_empty() {
        return Err(MetricsError::NoUncensored);
    }
    let mut hits_bpi = vec![0usize; alphas.len()];
    let mut hits_prob = vec![0usize; alphas.len()];
    let (mut n_eval, mut n_excluded) = (0, 0);
    'records: for (r, y) in truth {
        let pred = model.forward(&r.x)?;
        if pred.vacuous {
            n_excluded += 1;
            continue;
        }
        let g = pred.grfn;
        let mut bpi = Vec::with_capacity(alphas.len());
        for &a in alphas {
            match g.prediction_interval(a) {
                Ok(iv) => bpi.push(iv),
                Err(_) => {
                    n_excluded += 1;
                    continue 'records;
                }
            }
        }
        let sd = (g.sigma2 + 1.0 / g.h).sqrt();
        for (k, &a) in alphas.iter().enumerate() {
            hits_bpi[k] += bpi[k].contains(y) as usize;
            let half = normal::quantile(0.5 + 0.5 * a) * sd;
            hits_prob[k] += ((y - g.mu).abs() <= half) as usize;
        }
        n_eval += 1;
    }
    let frac = |h: &[usize]| h.iter().map(|c| if n_eval == 0 { 0.0 } else { *c as f64 / n_eval as f64 }).collect();
    Ok(CalibrationCurve {
        alphas: alphas.to_vec(),
        coverage_bpi: frac(&hits_bpi),
        coverage_prob: frac(&hits_prob),
        n_eval,
        n_excluded,
    })
}
