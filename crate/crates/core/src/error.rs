use std::path::PathBuf;

use chrono::NaiveDate;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HistError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("non-positive {field} {value} for stock {stock} on {date}")]
    NonPositivePrice {
        stock: String,
        date: NaiveDate,
        field: &'static str,
        value: f64,
    },

    #[error("{file} references unknown stock ids: {}", stocks.join(", "))]
    UnknownStocks { file: String, stocks: Vec<String> },

    #[error("{file} references dates outside the price calendar: {}", fmt_dates(dates))]
    UnknownDates { file: String, dates: Vec<NaiveDate> },

    #[error("duplicate row for stock {stock} on {date} in {file}")]
    DuplicateRow { file: String, stock: String, date: NaiveDate },

    #[error("feature row has width {got}, expected {expected}")]
    FeatureWidth { got: usize, expected: usize },

    #[error("invalid synthetic spec: {0}")]
    Spec(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("date {0} is not in the panel")]
    DateNotFound(NaiveDate),

    #[error("training diverged at epoch {epoch}, date {date}: {msg}")]
    Diverged { epoch: usize, date: NaiveDate, msg: String },

    #[error("weight audit failed on {date}: {msg}")]
    WeightAudit { date: NaiveDate, msg: String },

    #[error(transparent)]
    Autodiff(#[from] hist_autodiff::AutodiffError),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn fmt_dates(dates: &[NaiveDate]) -> String {
    dates.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(", ")
}

pub type Result<T> = std::result::Result<T, HistError>;

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> HistError {
    let path = path.into();
    move |source| HistError::Io { path, source }
}

pub(crate) fn csv_err(path: impl Into<PathBuf>) -> impl FnOnce(csv::Error) -> HistError {
    let path = path.into();
    move |source| HistError::Csv { path, source }
}
