//! CSV formats for prices, concept memberships and market caps.
//!
//! * prices: `date,stock,open,close,high,low,vwap,volume`
//! * concepts: `date,stock,concept`, one row per membership edge; a date with
//!   no rows carries the previous date's memberships forward
//! * caps: `date,stock,market_cap`
//! * loadings (synthetic ground truth): `regime_start,stock,factor,loading`

use std::collections::{BTreeSet, HashMap};
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::panels::{CapRecord, ConceptEdge, Panels};
use super::prices::{Bar, PriceTable};
use super::synthetic::LoadingRegime;
use crate::error::{csv_err, HistError, Result};

#[derive(Debug, Serialize, Deserialize)]
struct PriceRow {
    date: NaiveDate,
    stock: String,
    open: f64,
    close: f64,
    high: f64,
    low: f64,
    vwap: f64,
    volume: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct ConceptRow {
    date: NaiveDate,
    stock: String,
    concept: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct CapRow {
    date: NaiveDate,
    stock: String,
    market_cap: f64,
}

/// Locations of the three input files.
#[derive(Clone, Debug)]
pub struct DataPaths {
    pub prices: PathBuf,
    pub concepts: PathBuf,
    pub caps: PathBuf,
}

impl DataPaths {
    pub const PRICES: &'static str = "prices.csv";
    pub const CONCEPTS: &'static str = "concepts.csv";
    pub const CAPS: &'static str = "caps.csv";

    pub fn in_dir(dir: impl AsRef<Path>) -> Self {
        let dir = dir.as_ref();
        Self { prices: dir.join(Self::PRICES), concepts: dir.join(Self::CONCEPTS), caps: dir.join(Self::CAPS) }
    }
}

fn read_rows<R: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<R>> {
    let mut reader = csv::Reader::from_path(path).map_err(csv_err(path))?;
    reader.deserialize().collect::<std::result::Result<Vec<R>, _>>().map_err(csv_err(path))
}

fn write_rows<R: Serialize>(path: &Path, rows: impl IntoIterator<Item = R>, header: &[&str]) -> Result<()> {
    let mut writer = csv::WriterBuilder::new().has_headers(false).from_path(path).map_err(csv_err(path))?;
    writer.write_record(header).map_err(csv_err(path))?;
    for row in rows {
        writer.serialize(row).map_err(csv_err(path))?;
    }
    writer.flush().map_err(|e| HistError::Io { path: path.to_path_buf(), source: e })?;
    Ok(())
}

pub fn read_prices(path: impl AsRef<Path>) -> Result<PriceTable> {
    let path = path.as_ref();
    let rows: Vec<PriceRow> = read_rows(path)?;
    let dates: Vec<NaiveDate> = rows.iter().map(|r| r.date).collect::<BTreeSet<_>>().into_iter().collect();
    let stocks: Vec<String> = rows.iter().map(|r| r.stock.clone()).collect::<BTreeSet<_>>().into_iter().collect();
    let date_ix: HashMap<NaiveDate, usize> = dates.iter().enumerate().map(|(i, d)| (*d, i)).collect();
    let stock_ix: HashMap<&str, usize> = stocks.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let mut bars = vec![None; dates.len() * stocks.len()];
    for r in &rows {
        let k = date_ix[&r.date] * stocks.len() + stock_ix[r.stock.as_str()];
        if bars[k].is_some() {
            return Err(HistError::DuplicateRow { file: path.display().to_string(), stock: r.stock.clone(), date: r.date });
        }
        bars[k] = Some(Bar { open: r.open, close: r.close, high: r.high, low: r.low, vwap: r.vwap, volume: r.volume });
    }
    PriceTable::new(dates, stocks, bars)
}

pub fn write_prices(path: impl AsRef<Path>, table: &PriceTable) -> Result<()> {
    let mut rows = Vec::new();
    for (t, date) in table.dates().iter().enumerate() {
        for (i, stock) in table.stocks().iter().enumerate() {
            if let Some(b) = table.bar(t, i) {
                rows.push(PriceRow {
                    date: *date,
                    stock: stock.clone(),
                    open: b.open,
                    close: b.close,
                    high: b.high,
                    low: b.low,
                    vwap: b.vwap,
                    volume: b.volume,
                });
            }
        }
    }
    write_rows(path.as_ref(), rows, &["date", "stock", "open", "close", "high", "low", "vwap", "volume"])
}

pub fn read_concepts(path: impl AsRef<Path>) -> Result<Vec<ConceptEdge>> {
    let rows: Vec<ConceptRow> = read_rows(path.as_ref())?;
    Ok(rows.into_iter().map(|r| ConceptEdge { date: r.date, stock: r.stock, concept: r.concept }).collect())
}

pub fn write_concepts(path: impl AsRef<Path>, edges: &[ConceptEdge]) -> Result<()> {
    let rows = edges
        .iter()
        .map(|e| ConceptRow { date: e.date, stock: e.stock.clone(), concept: e.concept.clone() });
    write_rows(path.as_ref(), rows, &["date", "stock", "concept"])
}

pub fn read_caps(path: impl AsRef<Path>) -> Result<Vec<CapRecord>> {
    let rows: Vec<CapRow> = read_rows(path.as_ref())?;
    Ok(rows.into_iter().map(|r| CapRecord { date: r.date, stock: r.stock, market_cap: r.market_cap }).collect())
}

pub fn write_caps(path: impl AsRef<Path>, caps: &[CapRecord]) -> Result<()> {
    let rows = caps
        .iter()
        .map(|c| CapRow { date: c.date, stock: c.stock.clone(), market_cap: c.market_cap });
    write_rows(path.as_ref(), rows, &["date", "stock", "market_cap"])
}

#[derive(Debug, Serialize)]
struct LoadingRow<'a> {
    regime_start: NaiveDate,
    stock: &'a str,
    factor: usize,
    loading: f64,
}

pub fn write_loadings(path: impl AsRef<Path>, regimes: &[LoadingRegime], stocks: &[String]) -> Result<()> {
    let rows = regimes.iter().flat_map(|r| {
        stocks.iter().zip(r.factor.iter().zip(&r.loading)).map(move |(s, (&factor, &loading))| LoadingRow {
            regime_start: r.start,
            stock: s,
            factor,
            loading,
        })
    });
    write_rows(path.as_ref(), rows, &["regime_start", "stock", "factor", "loading"])
}

/// Load and align all three files into [`Panels`]. Features are derived from
/// the prices file with the given lookback.
pub fn load_panels(paths: &DataPaths, lookback: usize) -> Result<Panels> {
    let prices = read_prices(&paths.prices)?;
    let edges = read_concepts(&paths.concepts)?;
    let caps = read_caps(&paths.caps)?;
    Panels::build(prices, &edges, &caps, lookback)
}
