use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{HistError, Result};

/// One stock's daily fields, in feature order.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bar {
    pub open: f64,
    pub close: f64,
    pub high: f64,
    pub low: f64,
    pub vwap: f64,
    pub volume: f64,
}

impl Bar {
    pub const FIELDS: [&'static str; 6] = ["open", "close", "high", "low", "vwap", "volume"];

    pub fn fields(&self) -> [f64; 6] {
        [self.open, self.close, self.high, self.low, self.vwap, self.volume]
    }
}

/// Daily bars on a shared trading calendar. Stocks are sorted by id, and a
/// stock's position in `stocks` is its stable key everywhere downstream.
#[derive(Clone, Debug, PartialEq)]
pub struct PriceTable {
    dates: Vec<NaiveDate>,
    stocks: Vec<String>,
    bars: Vec<Option<Bar>>,
}

impl PriceTable {
    /// `bars` is date-major: `bars[t * stocks.len() + i]`.
    pub fn new(dates: Vec<NaiveDate>, stocks: Vec<String>, bars: Vec<Option<Bar>>) -> Result<Self> {
        if bars.len() != dates.len() * stocks.len() {
            return Err(HistError::Spec(format!(
                "{} bars for {} dates x {} stocks",
                bars.len(),
                dates.len(),
                stocks.len()
            )));
        }
        if dates.windows(2).any(|w| w[0] >= w[1]) {
            return Err(HistError::Spec("price dates must be strictly increasing".into()));
        }
        if stocks.windows(2).any(|w| w[0] >= w[1]) {
            return Err(HistError::Spec("stock ids must be sorted and unique".into()));
        }
        let table = Self { dates, stocks, bars };
        table.validate()?;
        Ok(table)
    }

    fn validate(&self) -> Result<()> {
        for (t, date) in self.dates.iter().enumerate() {
            for (i, stock) in self.stocks.iter().enumerate() {
                if let Some(bar) = self.bar(t, i) {
                    for (field, value) in Bar::FIELDS.iter().zip(bar.fields()) {
                        let bad = if *field == "volume" { value < 0.0 } else { value <= 0.0 };
                        if bad || !value.is_finite() {
                            return Err(HistError::NonPositivePrice {
                                stock: stock.clone(),
                                date: *date,
                                field,
                                value,
                            });
                        }
                    }
                }
            }
        }
        Ok(())
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn stocks(&self) -> &[String] {
        &self.stocks
    }

    pub fn n_dates(&self) -> usize {
        self.dates.len()
    }

    pub fn n_stocks(&self) -> usize {
        self.stocks.len()
    }

    pub fn bar(&self, date: usize, stock: usize) -> Option<&Bar> {
        self.bars[date * self.stocks.len() + stock].as_ref()
    }

    pub fn close(&self, date: usize, stock: usize) -> Option<f64> {
        self.bar(date, stock).map(|b| b.close)
    }

    pub fn stock_index(&self, id: &str) -> Option<usize> {
        self.stocks.binary_search_by(|s| s.as_str().cmp(id)).ok()
    }

    pub fn date_index(&self, date: NaiveDate) -> Option<usize> {
        self.dates.binary_search(&date).ok()
    }

    /// Next-day change rate `(close[t+1] - close[t]) / close[t]`, date-major.
    /// The last date, and any date where either close is missing, has no label.
    pub fn trends(&self) -> Vec<Option<f64>> {
        let n = self.stocks.len();
        let mut out = vec![None; self.bars.len()];
        for t in 0..self.dates.len().saturating_sub(1) {
            for i in 0..n {
                if let (Some(now), Some(next)) = (self.close(t, i), self.close(t + 1, i)) {
                    out[t * n + i] = Some(trend(now, next));
                }
            }
        }
        out
    }
}

/// Next-day change rate of one price step.
pub fn trend(now: f64, next: f64) -> f64 {
    (next - now) / now
}

/// Change rates over a single close series. The result is one shorter than
/// the input since the last date has no next day.
pub fn compute_trend(stock: &str, dates: &[NaiveDate], closes: &[f64]) -> Result<Vec<f64>> {
    for (date, &c) in dates.iter().zip(closes) {
        if !(c > 0.0) {
            return Err(HistError::NonPositivePrice {
                stock: stock.to_string(),
                date: *date,
                field: "close",
                value: c,
            });
        }
    }
    Ok(closes.windows(2).map(|w| trend(w[0], w[1])).collect())
}
