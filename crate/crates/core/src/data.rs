//! Survival records, datasets, and the CSV exchange format.
//!
//! CSV schema: `f0,...,f{p-1},duration,event[,true_duration]`. Columns are
//! matched by name for `duration`, `event` and `true_duration`; every other
//! column is a feature, kept in file order.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("row {row}: event flag must be 0 or 1, got `{value}`")]
    InvalidEvent { row: usize, value: String },
    #[error("row {row}: duration must be positive, got {value}")]
    NonPositiveDuration { row: usize, value: f64 },
    #[error("row {row}, column `{column}`: cannot parse `{value}` as a number")]
    Parse { row: usize, column: String, value: String },
    #[error("row {row}: expected {expected} features, found {found}")]
    Dimension { row: usize, expected: usize, found: usize },
    #[error("dataset is empty")]
    Empty,
    #[error("invalid record: {0}")]
    InvalidRecord(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurvivalRecord {
    pub x: Vec<f64>,
    /// Observed duration `t* = min(t, τ)`.
    pub duration: f64,
    /// `true` when the event was observed (`t* = t`).
    pub event: bool,
    /// Uncensored event time, known only for simulated data.
    pub true_duration: Option<f64>,
}

impl SurvivalRecord {
    pub fn new(x: Vec<f64>, duration: f64, event: bool) -> Self {
        SurvivalRecord { x, duration, event, true_duration: None }
    }

    pub fn log_duration(&self) -> f64 {
        self.duration.ln()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub records: Vec<SurvivalRecord>,
    pub feature_names: Vec<String>,
}

impl Dataset {
    /// Builds a dataset, checking dimensions and positivity.
    pub fn new(records: Vec<SurvivalRecord>, feature_names: Vec<String>) -> Result<Self, DataError> {
        if records.is_empty() {
            return Err(DataError::Empty);
        }
        let p = feature_names.len();
        for (i, r) in records.iter().enumerate() {
            if r.x.len() != p {
                return Err(DataError::Dimension { row: i, expected: p, found: r.x.len() });
            }
            if !(r.duration > 0.0) || !r.duration.is_finite() {
                return Err(DataError::NonPositiveDuration { row: i, value: r.duration });
            }
        }
        Ok(Dataset { records, feature_names })
    }

    /// Default feature names `f0..f{p-1}`.
    pub fn default_names(p: usize) -> Vec<String> {
        (0..p).map(|j| format!("f{j}")).collect()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.feature_names.len()
    }

    pub fn durations(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.duration).collect()
    }

    pub fn events(&self) -> Vec<bool> {
        self.records.iter().map(|r| r.event).collect()
    }

    pub fn censoring_rate(&self) -> f64 {
        self.records.iter().filter(|r| !r.event).count() as f64 / self.len() as f64
    }

    /// Sub-dataset with the given record indices, in that order.
    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            records: idx.iter().map(|&i| self.records[i].clone()).collect(),
            feature_names: self.feature_names.clone(),
        }
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), DataError> {
        let with_truth = self.records.iter().any(|r| r.true_duration.is_some());
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<String> = self.feature_names.clone();
        header.push("duration".into());
        header.push("event".into());
        if with_truth {
            header.push("true_duration".into());
        }
        w.write_record(&header)?;
        for r in &self.records {
            let mut row: Vec<String> = r.x.iter().map(|v| fmt_f64(*v)).collect();
            row.push(fmt_f64(r.duration));
            row.push(if r.event { "1".into() } else { "0".into() });
            if with_truth {
                row.push(r.true_duration.map(fmt_f64).unwrap_or_default());
            }
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self, DataError> {
        let mut rd = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
        let headers = rd.headers()?.clone();
        let find = |name: &str| headers.iter().position(|h| h == name);
        let dur_col = find("duration").ok_or_else(|| DataError::MissingColumn("duration".into()))?;
        let ev_col = find("event").ok_or_else(|| DataError::MissingColumn("event".into()))?;
        let truth_col = find("true_duration");
        let feat_cols: Vec<usize> =
            (0..headers.len()).filter(|&c| c != dur_col && c != ev_col && Some(c) != truth_col).collect();
        let feature_names = feat_cols.iter().map(|&c| headers[c].to_string()).collect();

        let mut records = Vec::new();
        for (row, rec) in rd.records().enumerate() {
            let rec = rec?;
            let num = |c: usize| -> Result<f64, DataError> {
                let s = rec.get(c).unwrap_or("");
                s.parse::<f64>().map_err(|_| DataError::Parse {
                    row,
                    column: headers[c].to_string(),
                    value: s.to_string(),
                })
            };
            let x = feat_cols.iter().map(|&c| num(c)).collect::<Result<Vec<_>, _>>()?;
            let duration = num(dur_col)?;
            if !(duration > 0.0) || !duration.is_finite() {
                return Err(DataError::NonPositiveDuration { row, value: duration });
            }
            let ev_raw = rec.get(ev_col).unwrap_or("");
            let event = match ev_raw.parse::<f64>() {
                Ok(0.0) => false,
                Ok(1.0) => true,
                _ => return Err(DataError::InvalidEvent { row, value: ev_raw.to_string() }),
            };
            let true_duration = match truth_col {
                Some(c) if !rec.get(c).unwrap_or("").is_empty() => Some(num(c)?),
                _ => None,
            };
            records.push(SurvivalRecord { x, duration, event, true_duration });
        }
        Dataset::new(records, feature_names)
    }

    pub fn save_csv(&self, path: &Path) -> Result<(), DataError> {
        self.write_csv(File::create(path)?)
    }

    pub fn load_csv(path: &Path) -> Result<Self, DataError> {
        Self::read_csv(File::open(path)?)
    }
}

/// Shortest representation that parses back to the same `f64`.
pub(crate) fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}
