//! Metrics streams, summaries and result tables.

use std::fs;
use std::path::Path;

use gkd_core::train::{EpochMetrics, TrainOutcome};
use gkd_core::{GkdError, Result};
use serde::{Deserialize, Serialize};

/// One line of a metrics stream.
pub type MetricsRecord = EpochMetrics;

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> GkdError + '_ {
    move |source| GkdError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Writes one JSON object per epoch, newline-terminated.
pub fn write_metrics(path: &Path, records: &[MetricsRecord]) -> Result<()> {
    let mut text = String::new();
    for r in records {
        text.push_str(&serde_json::to_string(r).expect("metrics serialise"));
        text.push('\n');
    }
    fs::write(path, text).map_err(io_err(path))
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRecord>> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    text.lines()
        .map(|line| serde_json::from_str(line).map_err(GkdError::from_json))
        .collect()
}

/// Headline numbers of one trained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_val_acc: f64,
    /// Test accuracy of the selected checkpoint.
    pub test_acc: f64,
}

impl From<&TrainOutcome> for ModelSummary {
    fn from(o: &TrainOutcome) -> Self {
        ModelSummary {
            epochs_run: o.history.len(),
            best_epoch: o.best_epoch,
            best_val_acc: o.best_val_acc,
            test_acc: o.test_acc,
        }
    }
}

/// Contents of `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mode: String,
    pub seed: u64,
    /// The model the run produces (the student, or the teacher in teacher mode).
    pub model: ModelSummary,
    /// Co-trained or internally trained teacher, where there is one.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub teacher: Option<ModelSummary>,
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("summary serialises");
    text.push('\n');
    fs::write(path, text).map_err(io_err(path))
}

pub fn read_summary(path: &Path) -> Result<Summary> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(GkdError::from_json)
}

/// Per-seed row of `results.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub pir: f64,
    pub method: String,
    pub seed: u64,
    pub val_acc: f64,
    pub test_acc: f64,
}

/// Aggregated row of `summary.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub pir: f64,
    pub method: String,
    pub mean_acc: f64,
    pub std_acc: f64,
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    for row in rows {
        writer.serialize(row).map_err(|e| csv_err(path, e))?;
    }
    writer.flush().map_err(io_err(path))
}

fn csv_err(path: &Path, e: csv::Error) -> GkdError {
    GkdError::Io {
        path: path.display().to_string(),
        source: std::io::Error::other(e.to_string()),
    }
}

pub fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    reader
        .deserialize()
        .map(|r| r.map_err(|e| GkdError::parse(path.display().to_string(), e.to_string())))
        .collect()
}

pub(crate) fn ensure_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(io_err(path))
}
