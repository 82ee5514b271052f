//! Metrics, prediction-record and epoch-log files.

use std::fmt::Write as _;
use std::path::Path;

use metafilm_core::data::Instance;
use metafilm_core::metrics::MetricsReport;
use metafilm_core::model::classify;
use metafilm_core::train::EpochLog;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

/// `key=value` lines with full-precision floats.
pub fn metrics_key_values(prefix: &str, r: &MetricsReport) -> String {
    let mut s = String::new();
    for (k, v) in [
        ("precision", r.precision),
        ("recall", r.recall),
        ("f1", r.f1),
        ("accuracy", r.accuracy),
    ] {
        let _ = writeln!(s, "{prefix}{k}={v}");
    }
    s
}

/// Parses `key=value` lines, ignoring blanks and `#` comments.
pub fn parse_key_values(text: &str) -> Vec<(String, String)> {
    text.lines()
        .filter(|l| !l.trim().is_empty() && !l.starts_with('#'))
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .collect()
}

/// Tab-separated table, one row per run plus an optional mean row.
pub fn metrics_table(rows: &[(String, &MetricsReport)]) -> String {
    let mut s = String::from("run\tprecision\trecall\tf1\taccuracy\n");
    for (name, r) in rows {
        let _ = writeln!(s, "{name}\t{}\t{}\t{}\t{}", r.precision, r.recall, r.f1, r.accuracy);
    }
    s
}

pub fn epoch_table(logs: &[EpochLog]) -> String {
    let mut s = String::from("epoch\tmean_train_loss\tvalidation_accuracy\twall_time_secs\n");
    for l in logs {
        let _ = writeln!(
            s,
            "{}\t{}\t{}\t{:.3}",
            l.epoch, l.mean_train_loss, l.validation_accuracy, l.wall_time_secs
        );
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Outcome {
    TP,
    FP,
    FN,
    TN,
}

impl Outcome {
    pub fn of(predicted: u8, gold: u8) -> Self {
        match (predicted, gold) {
            (1, 1) => Outcome::TP,
            (1, _) => Outcome::FP,
            (_, 1) => Outcome::FN,
            _ => Outcome::TN,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub id: usize,
    pub probability: f64,
    pub predicted: u8,
    pub gold: Option<u8>,
    pub outcome: Option<Outcome>,
    pub sentence: String,
    pub expression: String,
}

impl PredictionRecord {
    pub fn new(id: usize, inst: &Instance, probability: f64) -> Self {
        let predicted = classify(probability);
        PredictionRecord {
            id,
            probability,
            predicted,
            gold: inst.label,
            outcome: inst.label.map(|g| Outcome::of(predicted, g)),
            sentence: inst.sentence.join(" "),
            expression: inst.candidate_tokens().join(" "),
        }
    }
}

pub fn write_predictions(path: &Path, records: &[PredictionRecord]) -> Result<()> {
    let to_err = |e: csv::Error| CliError::Format {
        path: path.to_path_buf(),
        line: 0,
        message: e.to_string(),
    };
    let mut w = csv::Writer::from_path(path).map_err(to_err)?;
    for r in records {
        w.serialize(r).map_err(to_err)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn read_predictions(path: &Path) -> Result<Vec<PredictionRecord>> {
    let to_err = |e: csv::Error| CliError::Format {
        path: path.to_path_buf(),
        line: e.position().map_or(0, |p| p.line() as usize),
        message: e.to_string(),
    };
    let mut r = csv::Reader::from_path(path).map_err(to_err)?;
    r.deserialize().map(|rec| rec.map_err(to_err)).collect()
}
