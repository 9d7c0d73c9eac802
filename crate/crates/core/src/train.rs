//! Fitting: dataset splitting, Adam with a plateau learning-rate schedule,
//! early stopping on the validation loss and best-model checkpointing.

use std::fmt;
use std::io::Write;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{fmt_f64, Dataset};
use crate::loss::{cost_grad_prepared, cost_prepared, total_cost, LossError, LossHyper, Prepared, DEFAULT_PROB_FLOOR};
use crate::model::{init_params, ModelError, ModelParams, Standardizer};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("{0}")]
    Loss(#[from] LossError),
    #[error("{0}")]
    Model(#[from] ModelError),
    #[error("cannot split {n} records into train/validation/test")]
    TooSmall { n: usize },
    #[error("training diverged at epoch {epoch}: {what} is not finite")]
    Diverged { epoch: usize, what: &'static str },
}

/// Full-batch or fixed-size minibatch gradient steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(try_from = "BatchRepr", into = "BatchRepr")]
pub enum Batch {
    #[default]
    Full,
    Size(usize),
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum BatchRepr {
    Size(usize),
    Word(String),
}

impl TryFrom<BatchRepr> for Batch {
    type Error = String;
    fn try_from(r: BatchRepr) -> Result<Self, String> {
        match r {
            BatchRepr::Size(0) => Err("batch size must be >= 1".into()),
            BatchRepr::Size(n) => Ok(Batch::Size(n)),
            BatchRepr::Word(w) if w == "full" => Ok(Batch::Full),
            BatchRepr::Word(w) => Err(format!("batch must be \"full\" or a positive count, got \"{w}\"")),
        }
    }
}

impl From<Batch> for BatchRepr {
    fn from(b: Batch) -> Self {
        match b {
            Batch::Full => BatchRepr::Word("full".into()),
            Batch::Size(n) => BatchRepr::Size(n),
        }
    }
}

impl fmt::Display for Batch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Batch::Full => write!(f, "full"),
            Batch::Size(n) => write!(f, "{n}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    /// Epochs without a decrease of the training cost before decaying `lr`.
    pub lr_plateau_patience: usize,
    pub lr_decay: f64,
    /// Epochs without a validation improvement before stopping.
    pub early_stop_patience: usize,
    /// Number of prototypes.
    pub k: usize,
    pub eta: f64,
    /// Observation half-width as a multiple of the spread of `log t*`.
    pub eps_rel: f64,
    pub xi: f64,
    pub rho: f64,
    pub prob_floor: f64,
    pub seed: u64,
    pub batch: Batch,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 500,
            lr: 0.1,
            lr_plateau_patience: 100,
            lr_decay: 0.1,
            early_stop_patience: 20,
            k: 40,
            eta: 0.1,
            eps_rel: 1e-4,
            xi: 0.0,
            rho: 0.0,
            prob_floor: DEFAULT_PROB_FLOOR,
            seed: 0,
            batch: Batch::Full,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let counts =
            [("epochs", self.epochs), ("lr_plateau_patience", self.lr_plateau_patience), ("early_stop_patience", self.early_stop_patience), ("k", self.k)];
        for (name, v) in counts {
            if v == 0 {
                return Err(TrainError::Config(format!("{name} must be >= 1")));
            }
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(TrainError::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay < 1.0) {
            return Err(TrainError::Config(format!("lr_decay must lie in (0, 1), got {}", self.lr_decay)));
        }
        self.hyper(1.0).validate()?;
        Ok(())
    }

    /// Loss hyperparameters for a training set whose `log t*` spread is `y_sd`.
    pub fn hyper(&self, y_sd: f64) -> LossHyper {
        LossHyper { eta: self.eta, eps: self.eps_rel * y_sd, xi: self.xi, rho: self.rho, prob_floor: self.prob_floor }
    }

    pub fn from_toml(text: &str) -> Result<Self, TrainError> {
        let cfg: TrainConfig = toml::from_str(text).map_err(|e| TrainError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

/// Per-epoch record of the state before that epoch's update.
#[derive(Debug, Clone, Default)]
pub struct TrainHistory {
    pub train_cost: Vec<f64>,
    pub val_cost: Vec<f64>,
    pub lr: Vec<f64>,
    /// Seconds since the start of training; excluded from equality.
    pub wall_time: Vec<f64>,
}

impl PartialEq for TrainHistory {
    fn eq(&self, other: &Self) -> bool {
        self.train_cost == other.train_cost && self.val_cost == other.val_cost && self.lr == other.lr
    }
}

impl TrainHistory {
    pub fn len(&self) -> usize {
        self.train_cost.len()
    }

    pub fn is_empty(&self) -> bool {
        self.train_cost.is_empty()
    }

    /// Index of the lowest validation cost (first one on ties).
    pub fn best_epoch(&self) -> Option<usize> {
        let mut best: Option<usize> = None;
        for (i, v) in self.val_cost.iter().enumerate() {
            if best.is_none_or(|b| *v < self.val_cost[b]) {
                best = Some(i);
            }
        }
        best
    }

    pub fn write_csv<W: Write>(&self, out: W) -> std::io::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["epoch", "train_cost", "val_cost", "lr"])?;
        for i in 0..self.len() {
            w.write_record([i.to_string(), fmt_f64(self.train_cost[i]), fmt_f64(self.val_cost[i]), fmt_f64(self.lr[i])])?;
        }
        w.flush()
    }
}

/// Shuffled train/validation/test split with sizes
/// `round(f_train·n)`, `round(f_val·n)` and the remainder.
pub fn split_dataset(data: &Dataset, fractions: (f64, f64, f64), seed: u64) -> Result<(Dataset, Dataset, Dataset), TrainError> {
    let (a, b, c) = fractions;
    if [a, b, c].iter().any(|f| !(*f >= 0.0)) || ((a + b + c) - 1.0).abs() > 1e-9 {
        return Err(TrainError::Config(format!("split fractions must be >= 0 and sum to 1, got {fractions:?}")));
    }
    let n = data.len();
    let n_train = (a * n as f64).round() as usize;
    let n_val = (b * n as f64).round() as usize;
    if n < 5 || n_train == 0 || n_val == 0 || n_train + n_val >= n {
        return Err(TrainError::TooSmall { n });
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok((
        data.subset(&idx[..n_train]),
        data.subset(&idx[n_train..n_train + n_val]),
        data.subset(&idx[n_train + n_val..]),
    ))
}

/// Validation cost: the unregularized mean loss.
pub fn evaluate_cost(m: &ModelParams, s: &Standardizer, data: &Dataset, hyper: &LossHyper) -> f64 {
    total_cost(m, s, data, &hyper.unregularized())
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize) -> Self {
        Adam { m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    fn step(&mut self, theta: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        for i in 0..theta.len() {
            self.m[i] = Self::B1 * self.m[i] + (1.0 - Self::B1) * grad[i];
            self.v[i] = Self::B2 * self.v[i] + (1.0 - Self::B2) * grad[i] * grad[i];
            theta[i] -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + Self::EPS);
        }
    }
}

/// Fits a model. Returns the parameters with the lowest validation cost,
/// the standardizer fitted on `train` and the training history.
pub fn train(train: &Dataset, val: &Dataset, cfg: &TrainConfig) -> Result<(ModelParams, Standardizer, TrainHistory), TrainError> {
    cfg.validate()?;
    if train.dim() != val.dim() {
        return Err(ModelError::Dimension { expected: train.dim(), got: val.dim() }.into());
    }
    let (init, std) = init_params(train, cfg.k.min(train.len()), cfg.seed)?;
    train_from(init, std, train, val, cfg)
}

/// Like [`train`] but starting from given parameters.
pub fn train_from(
    init: ModelParams,
    std: Standardizer,
    train: &Dataset,
    val: &Dataset,
    cfg: &TrainConfig,
) -> Result<(ModelParams, Standardizer, TrainHistory), TrainError> {
    cfg.validate()?;
    let hyper = cfg.hyper(std.y_sd);
    let val_hyper = hyper.unregularized();
    let tr = Prepared::new(train, &std);
    let va = Prepared::new(val, &std);

    let mut params = init;
    let mut theta = params.to_flat();
    let mut adam = Adam::new(theta.len());
    let mut lr = cfg.lr;
    let mut order: Vec<usize> = (0..tr.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));

    let mut hist = TrainHistory::default();
    let mut best = (f64::INFINITY, params.clone());
    let mut since_val_improved = 0;
    let mut best_train = f64::INFINITY;
    let mut since_train_decreased = 0;
    let start = Instant::now();

    for epoch in 0..cfg.epochs {
        let (train_cost, full_grad) = match cfg.batch {
            Batch::Full => {
                let (c, g) = cost_grad_prepared(&params, &tr, None, &hyper);
                (c, Some(g))
            }
            Batch::Size(_) => (cost_prepared(&params, &tr, None, &hyper), None),
        };
        let val_cost = cost_prepared(&params, &va, None, &val_hyper);
        if !train_cost.is_finite() {
            return Err(TrainError::Diverged { epoch, what: "training cost" });
        }
        if !val_cost.is_finite() {
            return Err(TrainError::Diverged { epoch, what: "validation cost" });
        }
        hist.train_cost.push(train_cost);
        hist.val_cost.push(val_cost);
        hist.lr.push(lr);
        hist.wall_time.push(start.elapsed().as_secs_f64());

        if val_cost < best.0 {
            best = (val_cost, params.clone());
            since_val_improved = 0;
        } else {
            since_val_improved += 1;
            if since_val_improved >= cfg.early_stop_patience {
                break;
            }
        }
        if train_cost < best_train {
            best_train = train_cost;
            since_train_decreased = 0;
        } else {
            since_train_decreased += 1;
            if since_train_decreased >= cfg.lr_plateau_patience {
                lr *= cfg.lr_decay;
                since_train_decreased = 0;
            }
        }
        if epoch + 1 == cfg.epochs {
            break;
        }

        match (cfg.batch, full_grad) {
            (Batch::Full, Some(g)) => {
                step(&mut adam, &mut theta, &g, lr, epoch)?;
                params.set_flat(&theta);
            }
            (Batch::Size(size), _) => {
                order.shuffle(&mut rng);
                for chunk in order.chunks(size) {
                    let (_, g) = cost_grad_prepared(&params, &tr, Some(chunk), &hyper);
                    step(&mut adam, &mut theta, &g, lr, epoch)?;
                    params.set_flat(&theta);
                }
            }
            (Batch::Full, None) => unreachable!("full batch always computes the gradient"),
        }
    }
    Ok((best.1, std, hist))
}

fn step(adam: &mut Adam, theta: &mut [f64], grad: &ModelParams, lr: f64, epoch: usize) -> Result<(), TrainError> {
    let g = grad.to_flat();
    if g.iter().any(|v| !v.is_finite()) {
        return Err(TrainError::Diverged { epoch, what: "gradient" });
    }
    adam.step(theta, &g, lr);
    if theta.iter().any(|v| !v.is_finite()) {
        return Err(TrainError::Diverged { epoch, what: "parameter vector" });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::SurvivalRecord;
    use crate::loss::grad_total_cost;
    use crate::model::Model;
    use rand::Rng;

    fn toy(n: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let recs = (0..n)
            .map(|_| {
                let x: f64 = rng.random_range(-2.0..2.0);
                let t = (1.0 + 0.8 * x + 0.3 * rng.random::<f64>()).exp();
                SurvivalRecord::new(vec![x], t, rng.random_bool(0.7))
            })
            .collect();
        Dataset::new(recs, Dataset::default_names(1)).unwrap()
    }

    fn quick() -> TrainConfig {
        TrainConfig { epochs: 60, k: 4, seed: 7, ..TrainConfig::default() }
    }

    #[test]
    fn defaults_and_config_parsing() {
        let c = TrainConfig::default();
        assert_eq!((c.k, c.epochs, c.lr, c.eta, c.eps_rel, c.xi, c.rho), (40, 500, 0.1, 0.1, 1e-4, 0.0, 0.0));
        assert_eq!((c.lr_plateau_patience, c.early_stop_patience, c.lr_decay), (100, 20, 0.1));
        assert_eq!(TrainConfig::from_toml("").unwrap(), c);
        let t = TrainConfig::from_toml("k = 5\nbatch = 64\nseed = 3\n").unwrap();
        assert_eq!((t.k, t.batch, t.seed), (5, Batch::Size(64), 3));
        assert_eq!(TrainConfig::from_toml(&t.to_toml()).unwrap(), t);
        assert_eq!(TrainConfig::from_toml("batch = \"full\"").unwrap().batch, Batch::Full);
        assert!(TrainConfig::from_toml("batch = \"half\"").is_err());
        assert!(TrainConfig::from_toml("lr_decay = 1.0").is_err());
        assert!(TrainConfig::from_toml("k = 0").is_err());
        assert!(TrainConfig::from_toml("lr = -1").is_err());
        assert!(TrainConfig::from_toml("learning_rate = 0.1").is_err());
        assert_eq!(c.hyper(2.0).eps, 2e-4);
    }

    #[test]
    fn split_sizes_and_partition() {
        let d = toy(10, 0);
        let (a, b, c) = split_dataset(&d, (0.6, 0.2, 0.2), 1).unwrap();
        assert_eq!((a.len(), b.len(), c.len()), (6, 2, 2));
        let (a2, b2, c2) = split_dataset(&d, (0.6, 0.2, 0.2), 1).unwrap();
        assert_eq!((&a, &b, &c), (&a2, &b2, &c2));
        let mut all: Vec<f64> = a.records.iter().chain(&b.records).chain(&c.records).map(|r| r.duration).collect();
        let mut orig = d.durations();
        all.sort_by(f64::total_cmp);
        orig.sort_by(f64::total_cmp);
        assert_eq!(all, orig);
        assert!(matches!(split_dataset(&toy(4, 0), (0.6, 0.2, 0.2), 1), Err(TrainError::TooSmall { n: 4 })));
        assert!(split_dataset(&d, (0.6, 0.3, 0.2), 1).is_err());
    }

    #[test]
    fn evaluate_cost_drops_regularizers() {
        let d = toy(20, 1);
        let (m, s) = init_params(&d, 3, 0).unwrap();
        let h = LossHyper { xi: 0.5, rho: 0.5, ..quick().hyper(s.y_sd) };
        let plain = LossHyper { xi: 0.0, rho: 0.0, ..h };
        assert_eq!(evaluate_cost(&m, &s, &d, &h), total_cost(&m, &s, &d, &plain));
        assert!(evaluate_cost(&m, &s, &d, &h) < total_cost(&m, &s, &d, &h));
    }

    #[test]
    fn vacuous_model_on_censored_data_is_bounded() {
        let recs = (1..6).map(|i| SurvivalRecord::new(vec![i as f64], i as f64, false)).collect();
        let d = Dataset::new(recs, Dataset::default_names(1)).unwrap();
        let mut m = ModelParams::zeros(1, 1);
        m.log_h[0] = -1e4;
        m.gamma[0] = 1.0;
        let h = quick().hyper(1.0);
        let c = evaluate_cost(&m, &Standardizer::identity(1), &d, &h);
        assert!(c.is_finite() && c <= -h.prob_floor.ln() + 1e-9);
    }

    #[test]
    fn history_bookkeeping_and_best_checkpoint() {
        let d = toy(60, 2);
        let (tr, va, _) = split_dataset(&d, (0.6, 0.2, 0.2), 0).unwrap();
        let cfg = quick();
        let (best, std, hist) = train(&tr, &va, &cfg).unwrap();
        assert!(hist.len() <= cfg.epochs && !hist.is_empty());
        assert_eq!(hist.val_cost.len(), hist.len());
        assert_eq!(hist.lr.len(), hist.len());
        assert_eq!(hist.wall_time.len(), hist.len());

        let h = cfg.hyper(std.y_sd);
        let (init, _) = init_params(&tr, cfg.k, cfg.seed).unwrap();
        approx::assert_relative_eq!(hist.train_cost[0], total_cost(&init, &std, &tr, &h), max_relative = 1e-12);
        assert_eq!(hist.val_cost[0], evaluate_cost(&init, &std, &va, &h));

        let v = evaluate_cost(&best, &std, &va, &h);
        let min = hist.val_cost.iter().cloned().fold(f64::INFINITY, f64::min);
        assert_eq!(v, min);
        assert!(v <= hist.val_cost[0]);
        assert_eq!(hist.val_cost[hist.best_epoch().unwrap()], min);
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let d = toy(40, 3);
        let (tr, va, _) = split_dataset(&d, (0.6, 0.2, 0.2), 0).unwrap();
        let r1 = train(&tr, &va, &quick()).unwrap();
        let r2 = train(&tr, &va, &quick()).unwrap();
        assert_eq!(r1.0, r2.0);
        assert_eq!(r1.2, r2.2);
        let mut buf1 = Vec::new();
        let mut buf2 = Vec::new();
        r1.2.write_csv(&mut buf1).unwrap();
        r2.2.write_csv(&mut buf2).unwrap();
        assert_eq!(buf1, buf2);
        let other = train(&tr, &va, &TrainConfig { seed: 8, ..quick() }).unwrap();
        assert_ne!(other.0, r1.0);

        let mb = TrainConfig { batch: Batch::Size(8), ..quick() };
        assert_eq!(train(&tr, &va, &mb).unwrap().0, train(&tr, &va, &mb).unwrap().0);
    }

    #[test]
    fn early_stopping_and_lr_plateau() {
        let d = toy(40, 4);
        let (tr, va, _) = split_dataset(&d, (0.6, 0.2, 0.2), 0).unwrap();
        let cfg = TrainConfig { epochs: 400, early_stop_patience: 3, lr: 0.5, ..quick() };
        let (_, _, hist) = train(&tr, &va, &cfg).unwrap();
        let best = hist.best_epoch().unwrap();
        assert!(hist.len() < 400);
        assert_eq!(hist.len(), best + 1 + 3);

        let cfg = TrainConfig { epochs: 30, lr_plateau_patience: 1, early_stop_patience: 1000, ..quick() };
        let (_, _, hist) = train(&tr, &va, &cfg).unwrap();
        assert!(hist.len() > 2);
        for i in 0..hist.len() - 1 {
            let stalled = i >= 1 && hist.train_cost[i] >= hist.train_cost[..i].iter().cloned().fold(f64::INFINITY, f64::min);
            let want = if stalled { hist.lr[i] * cfg.lr_decay } else { hist.lr[i] };
            assert_eq!(hist.lr[i + 1], want);
        }
    }

    #[test]
    fn constant_durations_converge_to_log_t() {
        let recs = (0..20).map(|i| SurvivalRecord::new(vec![i as f64 / 10.0], 5.0, true)).collect();
        let d = Dataset::new(recs, Dataset::default_names(1)).unwrap();
        let cfg = TrainConfig { k: 1, epochs: 500, early_stop_patience: 500, ..TrainConfig::default() };
        let (m, s, _) = train(&d, &d, &cfg).unwrap();
        let model = Model::new(m, s).unwrap();
        for r in &d.records {
            let mu = model.forward(&r.x).unwrap().grfn.mu;
            assert!((mu - 5f64.ln()).abs() < 1e-2, "mu = {mu}");
        }
    }

    #[test]
    fn duration_rescaling_shifts_mu_only() {
        let d = toy(50, 5);
        let c: f64 = 3.0;
        let mut scaled = d.clone();
        scaled.records.iter_mut().for_each(|r| r.duration *= c);
        let cfg = TrainConfig { epochs: 25, ..quick() };
        let (m1, s1, _) = train(&d, &d, &cfg).unwrap();
        let (m2, s2, _) = train(&scaled, &scaled, &cfg).unwrap();
        let a = Model::new(m1, s1).unwrap();
        let b = Model::new(m2, s2).unwrap();
        for r in &d.records {
            let (pa, pb) = (a.forward(&r.x).unwrap().grfn, b.forward(&r.x).unwrap().grfn);
            assert!((pb.mu - pa.mu - c.ln()).abs() <= 1e-6);
            assert!((pb.h - pa.h).abs() <= 1e-6 * pa.h.max(1.0));
            assert!((pb.sigma2 - pa.sigma2).abs() <= 1e-6 * pa.sigma2.max(1.0));
            let (sa, sb) = (a.params.similarities(&a.standardizer.transform(&r.x)).unwrap(), b.params.similarities(&b.standardizer.transform(&r.x)).unwrap());
            for (u, v) in sa.iter().zip(&sb) {
                assert!((u - v).abs() <= 1e-6);
            }
        }
    }

    #[test]
    fn training_reduces_gradient_norm() {
        let d = crate::datasim::gen_illustrative(300, 0.0, 1).unwrap();
        let (tr, va, _) = split_dataset(&d, (0.6, 0.2, 0.2), 0).unwrap();
        let cfg = TrainConfig { k: 10, epochs: 200, ..TrainConfig::default() };
        let (best, std, _) = train(&tr, &va, &cfg).unwrap();
        let (init, _) = init_params(&tr, cfg.k, cfg.seed).unwrap();
        let h = cfg.hyper(std.y_sd);
        let norm = |m: &ModelParams| grad_total_cost(m, &std, &tr, &h).1.to_flat().iter().map(|g| g * g).sum::<f64>().sqrt();
        assert!(norm(&best) < norm(&init));
    }

    #[test]
    fn divergence_is_reported() {
        let d = toy(20, 6);
        let (mut init, std) = init_params(&d, 2, 0).unwrap();
        init.beta0[0] = f64::NAN;
        let r = train_from(init, std, &d, &d, &quick());
        assert!(matches!(r, Err(TrainError::Diverged { epoch: 0, .. })));
    }
}
