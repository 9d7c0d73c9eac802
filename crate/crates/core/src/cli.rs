//! Command-line front end: argument definitions and the four commands.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use crate::data::{fmt_f64, DataError, Dataset};
use crate::datasim::{
    gen_cox_exponential, gen_illustrative_with, gen_nlnph, CensorFlag, CoxKind, DatasimError, NlnphStandIn,
    DEFAULT_COX_LAMBDA0, DEFAULT_NLNPH_LAMBDA0,
};
use crate::metrics::{
    calibration_curve, integration_times, point_metrics, survival_grids, unique_times, CalibrationCurve,
    CalibrationTarget, MetricsError, PointMetrics, SurvMode, INTEGRATION_POINTS,
};
use crate::model::{Model, ModelError};
use crate::train::{split_dataset, train, TrainConfig, TrainError};

pub const EXIT_INPUT: u8 = 2;
pub const EXIT_NUMERIC: u8 = 3;

#[derive(Debug, Parser)]
#[command(name = "ennsurv", version, about = "Evidential survival regression with Gaussian random fuzzy numbers")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a simulated dataset as CSV.
    Simulate(SimulateArgs),
    /// Train a model and write it with its training history.
    Train(TrainArgs),
    /// Evaluate a model: metrics, calibration curve and survival grids.
    Eval(EvalArgs),
    /// Repeated split / train / evaluate runs with a mean ± se summary.
    Protocol(ProtocolArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SimKind {
    Illustrative,
    Lph,
    Nlph,
    Nlnph,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FlagArg {
    Observed,
    Selected,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Lower,
    Mid,
    Upper,
}

impl From<ModeArg> for SurvMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Lower => SurvMode::Lower,
            ModeArg::Mid => SurvMode::Mid,
            ModeArg::Upper => SurvMode::Upper,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TargetArg {
    /// Observed times of uncensored records.
    Events,
    /// `true_duration` of every record (simulated data).
    Truth,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, value_enum)]
    pub kind: SimKind,
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Censoring probability (illustrative only).
    #[arg(long, default_value_t = 0.0)]
    pub censor: f64,
    /// How selected records are flagged (illustrative only).
    #[arg(long, value_enum, default_value = "observed")]
    pub censor_flag: FlagArg,
    /// Baseline hazard; defaults to 0.1 (lph, nlph) or 0.02 (nlnph).
    #[arg(long)]
    pub lambda0: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Validation CSV; without it `data` is split 60/20/20.
    #[arg(long)]
    pub val: Option<PathBuf>,
    /// TOML file with training settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub model_out: PathBuf,
    /// History CSV; defaults to `<model_out>.history.csv`.
    #[arg(long)]
    pub history: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub split_seed: u64,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, value_enum, default_value = "mid")]
    pub mode: ModeArg,
    #[arg(long, value_enum, default_value = "events")]
    pub calibration_target: TargetArg,
    /// Sweep this feature against time for lower/upper survival maps.
    #[arg(long)]
    pub heatmap: Option<String>,
    #[arg(long, default_value_t = 21)]
    pub heatmap_grid: usize,
}

#[derive(Debug, Args)]
pub struct ProtocolArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub n_splits: usize,
    /// Comma-separated split seeds; defaults to 0..n_splits.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "mid")]
    pub mode: ModeArg,
}

/// Failure with its process exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    fn input(msg: impl ToString) -> Self {
        CliError { code: EXIT_INPUT, message: msg.to_string() }
    }

    fn numeric(msg: impl ToString) -> Self {
        CliError { code: EXIT_NUMERIC, message: msg.to_string() }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        CliError::input(e)
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        CliError::input(e)
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Diverged { .. } => CliError::numeric(e),
            _ => CliError::input(e),
        }
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        CliError::input(e)
    }
}

impl From<DatasimError> for CliError {
    fn from(e: DatasimError) -> Self {
        match e {
            DatasimError::NonFinite { .. } | DatasimError::NoEvent { .. } => CliError::numeric(e),
            _ => CliError::input(e),
        }
    }
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::input(format!("{}: {e}", path.display()))
}

fn load_data(path: &Path) -> Result<Dataset, CliError> {
    Dataset::load_csv(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

fn load_config(path: Option<&Path>) -> Result<TrainConfig, CliError> {
    match path {
        None => Ok(TrainConfig::default()),
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| io_err(p, e))?;
            TrainConfig::from_toml(&text).map_err(|e| CliError::input(format!("{}: {e}", p.display())))
        }
    }
}

fn write_file(path: &Path, contents: &[u8]) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| io_err(path, e))
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

/// Runs a parsed command and returns the JSON status payload.
pub fn run(cli: Cli) -> Result<serde_json::Value, CliError> {
    match cli.command {
        Command::Simulate(a) => cmd_simulate(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Protocol(a) => cmd_protocol(&a),
    }
}

pub fn cmd_simulate(a: &SimulateArgs) -> Result<serde_json::Value, CliError> {
    let data = match a.kind {
        SimKind::Illustrative => {
            let flag = match a.censor_flag {
                FlagArg::Observed => CensorFlag::Observed,
                FlagArg::Selected => CensorFlag::Selected,
            };
            gen_illustrative_with(a.n, a.censor, flag, a.seed)?
        }
        SimKind::Lph => gen_cox_exponential(a.n, CoxKind::Lph, a.lambda0.unwrap_or(DEFAULT_COX_LAMBDA0), a.seed)?,
        SimKind::Nlph => gen_cox_exponential(a.n, CoxKind::Nlph, a.lambda0.unwrap_or(DEFAULT_COX_LAMBDA0), a.seed)?,
        SimKind::Nlnph => {
            gen_nlnph(a.n, a.lambda0.unwrap_or(DEFAULT_NLNPH_LAMBDA0), &NlnphStandIn::default(), a.seed)?
        }
    };
    data.save_csv(&a.out).map_err(|e| CliError::input(format!("{}: {e}", a.out.display())))?;
    let rate = data.censoring_rate();
    println!("wrote {} records to {} (censoring rate {rate:.4})", data.len(), a.out.display());
    Ok(json!({ "command": "simulate", "n": data.len(), "censoring_rate": rate, "out": a.out }))
}

fn history_path(model_out: &Path) -> PathBuf {
    let mut s = model_out.as_os_str().to_owned();
    s.push(".history.csv");
    PathBuf::from(s)
}

pub fn cmd_train(a: &TrainArgs) -> Result<serde_json::Value, CliError> {
    let cfg = load_config(a.config.as_deref())?;
    let data = load_data(&a.data)?;
    let (tr, va) = match &a.val {
        Some(v) => (data, load_data(v)?),
        None => {
            let (tr, va, _) = split_dataset(&data, (0.6, 0.2, 0.2), a.split_seed)?;
            (tr, va)
        }
    };
    let (params, std, hist) = train(&tr, &va, &cfg)?;
    let model = Model::new(params, std)?;
    let cfg_json = serde_json::to_value(&cfg).expect("config serializes");
    write_file(&a.model_out, model.to_json(Some(cfg_json)).as_bytes())?;
    let hpath = a.history.clone().unwrap_or_else(|| history_path(&a.model_out));
    let mut buf = Vec::new();
    hist.write_csv(&mut buf).map_err(|e| io_err(&hpath, e))?;
    write_file(&hpath, &buf)?;
    let best = hist.best_epoch().unwrap_or(0);
    println!(
        "trained K={} on {} records; best validation cost {:.6} at epoch {best} of {}",
        model.params.k,
        tr.len(),
        hist.val_cost[best],
        hist.len()
    );
    Ok(json!({
        "command": "train",
        "model": a.model_out,
        "history": hpath,
        "epochs": hist.len(),
        "best_epoch": best,
        "best_val_cost": hist.val_cost[best],
    }))
}

/// Metrics of `model` on `data` with survival estimate `mode`.
pub fn evaluate_model(model: &Model, data: &Dataset, mode: SurvMode) -> Result<PointMetrics, CliError> {
    check_dim(model, data)?;
    let durations = data.durations();
    let events = data.events();
    let times = metric_times(&durations);
    let [lo, mid, hi] = survival_grids(model, &data.records, &times)?;
    let grid = match mode {
        SurvMode::Lower => lo,
        SurvMode::Mid => mid,
        SurvMode::Upper => hi,
    };
    point_metrics(&grid, &durations, &events).map_err(|e| match e {
        MetricsError::NoComparablePairs => CliError::input(format!("{e}: the evaluation data has no usable events")),
        e => e.into(),
    })
}

fn check_dim(model: &Model, data: &Dataset) -> Result<(), CliError> {
    if model.dim() != data.dim() {
        return Err(CliError::input(format!(
            "model expects {} features but the data has {}",
            model.dim(),
            data.dim()
        )));
    }
    Ok(())
}

/// Every distinct duration plus the integration points on `[min, max]`.
fn metric_times(durations: &[f64]) -> Vec<f64> {
    let u = unique_times(durations);
    let (t1, t2) = (u[0], u[u.len() - 1]);
    let mut all = u;
    if t1 < t2 {
        all.extend(integration_times(t1, t2, INTEGRATION_POINTS));
    }
    unique_times(&all)
}

fn calibration_alphas() -> Vec<f64> {
    (1..20).map(|i| i as f64 / 20.0).chain([0.99]).collect()
}

pub fn cmd_eval(a: &EvalArgs) -> Result<serde_json::Value, CliError> {
    let model = Model::load(&a.model).map_err(|e| CliError::input(format!("{}: {e}", a.model.display())))?;
    let data = load_data(&a.data)?;
    let mode: SurvMode = a.mode.into();
    let pm = evaluate_model(&model, &data, mode)?;
    ensure_dir(&a.out_dir)?;

    let mut w = csv::Writer::from_writer(Vec::new());
    let row = |w: &mut csv::Writer<Vec<u8>>, r: &[String]| w.write_record(r).expect("in-memory csv");
    row(&mut w, &["n".into(), "events".into(), "mode".into(), "ctd".into(), "ibs".into(), "ibll".into()]);
    let n_events = data.events().iter().filter(|e| **e).count();
    row(&mut w, &[data.len().to_string(), n_events.to_string(), mode.to_string(), fmt_f64(pm.ctd), fmt_f64(pm.ibs), fmt_f64(-pm.ibll)]);
    write_file(&a.out_dir.join("metrics.csv"), &w.into_inner().expect("in-memory csv"))?;

    let target = match a.calibration_target {
        TargetArg::Events => CalibrationTarget::Events,
        TargetArg::Truth => CalibrationTarget::TrueDurations,
    };
    let cal = match calibration_curve(&model, &data.records, &calibration_alphas(), target) {
        Ok(c) => Some(c),
        Err(MetricsError::NoUncensored) => {
            eprintln!("warning: no records to score the calibration curve against; skipping calibration.csv");
            None
        }
        Err(e) => return Err(e.into()),
    };
    if let Some(c) = &cal {
        write_file(&a.out_dir.join("calibration.csv"), &calibration_csv(c))?;
    }

    let durations = data.durations();
    let t1 = durations.iter().cloned().fold(f64::INFINITY, f64::min);
    let t2 = durations.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let times = if t1 < t2 { integration_times(t1, t2, INTEGRATION_POINTS) } else { vec![t1] };
    let [lo, mid, hi] = survival_grids(&model, &data.records, &times)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    row(&mut w, &["record_id".into(), "t".into(), "lower".into(), "mid".into(), "upper".into()]);
    for i in 0..data.len() {
        for (c, t) in times.iter().enumerate() {
            row(&mut w, &[i.to_string(), fmt_f64(*t), fmt_f64(lo.row(i)[c]), fmt_f64(mid.row(i)[c]), fmt_f64(hi.row(i)[c])]);
        }
    }
    write_file(&a.out_dir.join("survival.csv"), &w.into_inner().expect("in-memory csv"))?;

    if let Some(feature) = &a.heatmap {
        write_file(&a.out_dir.join("heatmap.csv"), &heatmap_csv(&model, &data, feature, a.heatmap_grid)?)?;
    }
    println!("ctd {:.4}  ibs {:.4}  ibll {:.4}  (mode {mode}, n {})", pm.ctd, pm.ibs, -pm.ibll, data.len());
    Ok(json!({
        "command": "eval",
        "mode": mode.to_string(),
        "ctd": pm.ctd,
        "ibs": pm.ibs,
        "ibll": -pm.ibll,
        "calibration_records": cal.as_ref().map(|c| c.n_eval),
        "out_dir": a.out_dir,
    }))
}

fn calibration_csv(c: &CalibrationCurve) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["alpha", "coverage_bpi", "coverage_prob", "n_eval", "n_excluded"]).expect("in-memory csv");
    for k in 0..c.alphas.len() {
        w.write_record([
            fmt_f64(c.alphas[k]),
            fmt_f64(c.coverage_bpi[k]),
            fmt_f64(c.coverage_prob[k]),
            c.n_eval.to_string(),
            c.n_excluded.to_string(),
        ])
        .expect("in-memory csv");
    }
    w.into_inner().expect("in-memory csv")
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len();
    if m % 2 == 1 {
        v[m / 2]
    } else {
        0.5 * (v[m / 2 - 1] + v[m / 2])
    }
}

/// Lower/upper survival over a `grid × grid` sweep of one feature (range of
/// the data) against time (log-spaced over the observed durations), other
/// features held at their medians.
fn heatmap_csv(model: &Model, data: &Dataset, feature: &str, grid: usize) -> Result<Vec<u8>, CliError> {
    let j = data
        .feature_names
        .iter()
        .position(|f| f == feature)
        .ok_or_else(|| CliError::input(format!("unknown heatmap feature `{feature}`")))?;
    if grid < 2 {
        return Err(CliError::input("heatmap grid must be >= 2"));
    }
    let mut base: Vec<f64> =
        (0..data.dim()).map(|c| median(&mut data.records.iter().map(|r| r.x[c]).collect::<Vec<_>>())).collect();
    let col: Vec<f64> = data.records.iter().map(|r| r.x[j]).collect();
    let (xlo, xhi) = (col.iter().cloned().fold(f64::INFINITY, f64::min), col.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
    let d = data.durations();
    let (tlo, thi) = (d.iter().cloned().fold(f64::INFINITY, f64::min), d.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
    let step = |lo: f64, hi: f64, i: usize| lo + (hi - lo) * i as f64 / (grid - 1) as f64;

    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([feature, "t", "lower", "upper"]).expect("in-memory csv");
    for a in 0..grid {
        base[j] = step(xlo, xhi, a);
        let pred = model.forward(&base)?;
        for b in 0..grid {
            let t = step(tlo.ln(), thi.ln(), b).exp();
            let (l, u) = pred.survival_bounds(t)?;
            w.write_record([fmt_f64(base[j]), fmt_f64(t), fmt_f64(l), fmt_f64(u)]).expect("in-memory csv");
        }
    }
    Ok(w.into_inner().expect("in-memory csv"))
}

/// Mean and standard error (sample sd / √n; 0 for a single value).
pub fn mean_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Per-split metrics of the repeated protocol, each split trained with its
/// own seed.
pub fn run_protocol(data: &Dataset, seeds: &[u64], cfg: &TrainConfig, mode: SurvMode) -> Result<Vec<PointMetrics>, CliError> {
    seeds
        .iter()
        .map(|&seed| {
            let (tr, va, te) = split_dataset(data, (0.6, 0.2, 0.2), seed)?;
            let run_cfg = TrainConfig { seed: cfg.seed.wrapping_add(seed), ..cfg.clone() };
            let (params, std, _) = train(&tr, &va, &run_cfg)?;
            evaluate_model(&Model::new(params, std)?, &te, mode)
        })
        .collect()
}

pub fn cmd_protocol(a: &ProtocolArgs) -> Result<serde_json::Value, CliError> {
    let cfg = load_config(a.config.as_deref())?;
    let data = load_data(&a.data)?;
    let seeds: Vec<u64> = a.seeds.clone().unwrap_or_else(|| (0..a.n_splits as u64).collect());
    if seeds.is_empty() {
        return Err(CliError::input("need at least one split"));
    }
    if seeds.len() == 1 {
        eprintln!("warning: a single split gives no spread; standard errors are reported as 0");
    }
    let mode: SurvMode = a.mode.into();
    let runs = run_protocol(&data, &seeds, &cfg, mode)?;
    ensure_dir(&a.out_dir)?;

    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["seed", "ctd", "ibs", "ibll"]).expect("in-memory csv");
    for (s, r) in seeds.iter().zip(&runs) {
        w.write_record([s.to_string(), fmt_f64(r.ctd), fmt_f64(r.ibs), fmt_f64(-r.ibll)]).expect("in-memory csv");
    }
    write_file(&a.out_dir.join("protocol_splits.csv"), &w.into_inner().expect("in-memory csv"))?;

    let columns: [(&str, Vec<f64>); 3] = [
        ("ctd", runs.iter().map(|r| r.ctd).collect()),
        ("ibs", runs.iter().map(|r| r.ibs).collect()),
        ("ibll", runs.iter().map(|r| -r.ibll).collect()),
    ];
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["metric", "mean", "se", "n_splits", "mode"]).expect("in-memory csv");
    let mut summary = serde_json::Map::new();
    for (name, vals) in &columns {
        let (m, se) = mean_se(vals);
        w.write_record([name.to_string(), fmt_f64(m), fmt_f64(se), vals.len().to_string(), mode.to_string()])
            .expect("in-memory csv");
        println!("{name:>5}: {m:.4} ± {se:.4}");
        summary.insert(name.to_string(), json!({ "mean": m, "se": se }));
    }
    write_file(&a.out_dir.join("protocol_summary.csv"), &w.into_inner().expect("in-memory csv"))?;
    Ok(json!({ "command": "protocol", "n_splits": seeds.len(), "mode": mode.to_string(), "summary": summary }))
}
