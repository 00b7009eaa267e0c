//! Checkpoints and run-directory files.

use std::fmt::Write as _;
use std::path::Path;

use chrono::NaiveDate;
use hist_autodiff::{checkpoint, Element, ParamStore, Tensor};
use serde::{Deserialize, Serialize};

use crate::backtest::PortfolioState;
use crate::data::FeatureScaler;
use crate::error::{csv_err, io_err, HistError, Result};
use crate::metrics::MetricReport;
use crate::model::{HistModel, ModelConfig};
use crate::training::RunRecord;

pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const CONFIG_FILE: &str = "config.toml";
pub const EPOCHS_FILE: &str = "epochs.csv";
pub const METRICS_FILE: &str = "metrics.json";
pub const PER_DATE_FILE: &str = "per_date.csv";
pub const EQUITY_FILE: &str = "equity.csv";
pub const TRADES_FILE: &str = "trades.csv";
pub const BENCHMARK_FILE: &str = "benchmark.csv";

/// Model weights followed by the feature scaler, in the model's precision.
pub fn checkpoint_entries<T: Element>(model: &HistModel<T>, scaler: &FeatureScaler) -> Vec<(String, Tensor<T>)> {
    let mut entries = model.store.named();
    entries.extend(scaler.to_named().into_iter().map(|(n, t)| (n, t.cast())));
    entries
}

pub fn save_checkpoint<T: Element>(path: impl AsRef<Path>, model: &HistModel<T>, scaler: &FeatureScaler) -> Result<()> {
    Ok(checkpoint::save(path, &checkpoint_entries(model, scaler))?)
}

fn split_entries<T: Element>(
    entries: Vec<(String, Tensor<T>)>,
    config: &ModelConfig,
) -> Result<(HistModel<T>, FeatureScaler)> {
    let (scaler_entries, weights): (Vec<_>, Vec<_>) = entries.into_iter().partition(|(n, _)| n.starts_with("scaler."));
    let scaler = FeatureScaler::from_named(
        &scaler_entries.into_iter().map(|(n, t)| (n, t.cast::<f32>())).collect::<Vec<_>>(),
    )?;
    let mut store = ParamStore::new();
    for (name, t) in weights {
        store.add(name, t)?;
    }
    Ok((HistModel::from_store(config.clone(), store)?, scaler))
}

/// Load a checkpoint written in either precision, returning 32-bit weights.
pub fn load_checkpoint(path: impl AsRef<Path>, config: &ModelConfig) -> Result<(HistModel<f32>, FeatureScaler)> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    match checkpoint::decode::<f32>(&bytes) {
        Ok(entries) => split_entries(entries, config),
        Err(first) => match checkpoint::decode::<f64>(&bytes) {
            Ok(entries) => {
                let (model, scaler) = split_entries(entries, config)?;
                Ok((model.cast(), scaler))
            }
            Err(_) => Err(HistError::Config(format!("{}: {first}", path.display()))),
        },
    }
}

fn write(path: &Path, text: String) -> Result<()> {
    std::fs::write(path, text).map_err(io_err(path))
}

fn opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

pub fn write_epochs_csv(path: impl AsRef<Path>, record: &RunRecord) -> Result<()> {
    let mut out = String::from("epoch,train_loss,valid_ic\n");
    for e in &record.epochs {
        writeln!(out, "{},{},{}", e.epoch, e.train_loss, opt(e.valid_ic)).expect("string");
    }
    write(path.as_ref(), out)
}

pub fn write_per_date_csv(path: impl AsRef<Path>, report: &MetricReport) -> Result<()> {
    let ns: Vec<usize> = report.precision.keys().copied().collect();
    let mut out = String::from("date,stocks,ic,rank_ic");
    for n in &ns {
        write!(out, ",precision@{n}").expect("string");
    }
    out.push('\n');
    for d in &report.per_date {
        write!(out, "{},{},{},{}", d.date, d.stocks, opt(d.ic), opt(d.rank_ic)).expect("string");
        for n in &ns {
            write!(out, ",{}", opt(d.precision.get(n).copied().flatten())).expect("string");
        }
        out.push('\n');
    }
    write(path.as_ref(), out)
}

#[derive(Serialize)]
struct RunMetrics<'a> {
    seed: u64,
    best_epoch: usize,
    best_valid_ic: Option<f64>,
    test: &'a MetricReport,
}

/// Test metrics of one seed as pretty JSON with sorted keys.
pub fn run_metrics_json(record: &RunRecord, test: &MetricReport) -> Result<String> {
    let value = serde_json::to_value(RunMetrics {
        seed: record.seed,
        best_epoch: record.best_epoch,
        best_valid_ic: record.best_valid_ic,
        test,
    })?;
    Ok(serde_json::to_string_pretty(&value)? + "\n")
}

/// Write `checkpoint.bin`, `epochs.csv`, `per_date.csv` and `metrics.json`
/// into `dir`.
pub fn write_run_dir<T: Element>(
    dir: impl AsRef<Path>,
    model: &HistModel<T>,
    scaler: &FeatureScaler,
    record: &RunRecord,
    test: &MetricReport,
) -> Result<Vec<String>> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    save_checkpoint(dir.join(CHECKPOINT_FILE), model, scaler)?;
    write_epochs_csv(dir.join(EPOCHS_FILE), record)?;
    write_per_date_csv(dir.join(PER_DATE_FILE), test)?;
    write(&dir.join(METRICS_FILE), run_metrics_json(record, test)?)?;
    Ok([CHECKPOINT_FILE, EPOCHS_FILE, PER_DATE_FILE, METRICS_FILE].map(String::from).to_vec())
}

/// `date,value,cr` after each simulated close.
pub fn write_equity_csv(path: impl AsRef<Path>, state: &PortfolioState) -> Result<()> {
    let mut out = String::from("date,value,cr\n");
    for (&(date, value), (_, cr)) in state.equity.iter().zip(state.cumulative_return()) {
        writeln!(out, "{date},{value},{cr}").expect("string");
    }
    write(path.as_ref(), out)
}

/// `date,stock,side,shares,price,cost`; `names` maps stock keys to ids.
pub fn write_trades_csv(path: impl AsRef<Path>, state: &PortfolioState, names: &[String]) -> Result<()> {
    let mut out = String::from("date,stock,side,shares,price,cost\n");
    for t in &state.trades {
        let side = match t.side {
            crate::backtest::Side::Buy => "buy",
            crate::backtest::Side::Sell => "sell",
        };
        writeln!(out, "{},{},{side},{},{},{}", t.date, names[t.stock], t.shares, t.price, t.cost).expect("string");
    }
    write(path.as_ref(), out)
}

#[derive(Deserialize)]
struct BenchmarkRow {
    date: NaiveDate,
    index_value: f64,
}

/// Read a `date,index_value` benchmark file, sorted by date.
pub fn read_benchmark(path: impl AsRef<Path>) -> Result<Vec<(NaiveDate, f64)>> {
    let path = path.as_ref();
    let mut reader = csv::Reader::from_path(path).map_err(csv_err(path))?;
    let mut rows = Vec::new();
    for row in reader.deserialize::<BenchmarkRow>() {
        let row = row.map_err(csv_err(path))?;
        if !(row.index_value.is_finite() && row.index_value > 0.0) {
            return Err(HistError::Config(format!("{}: non-positive index value on {}", path.display(), row.date)));
        }
        rows.push((row.date, row.index_value));
    }
    rows.sort_by_key(|r| r.0);
    Ok(rows)
}

/// `date,index_value,cr` on the simulated dates the benchmark covers, with
/// the return measured from the first such date.
pub fn write_benchmark_csv(path: impl AsRef<Path>, benchmark: &[(NaiveDate, f64)], state: &PortfolioState) -> Result<()> {
    let index: std::collections::BTreeMap<NaiveDate, f64> = benchmark.iter().copied().collect();
    let mut out = String::from("date,index_value,cr\n");
    let mut base = None;
    for &(date, _) in &state.equity {
        if let Some(&v) = index.get(&date) {
            let b = *base.get_or_insert(v);
            writeln!(out, "{date},{v},{}", v / b - 1.0).expect("string");
        }
    }
    write(path.as_ref(), out)
}
