use std::collections::{BTreeMap, BTreeSet};

use chrono::NaiveDate;

use super::prices::{Bar, PriceTable};
use crate::error::{HistError, Result};

pub const FIELDS: usize = 6;
pub const LOOKBACK: usize = 60;
pub const FEATURE_WIDTH: usize = FIELDS * LOOKBACK;

/// Per-date, per-stock historical feature vectors.
///
/// Layout is field-major: `[open_{t-L+1..t}, close_{..}, high, low, vwap,
/// volume]`. Price fields are divided by the date-`t` close and volume by the
/// date-`t` volume. A stock is tradable on `t` only if every lookback day is
/// present.
#[derive(Clone, Debug)]
pub struct FeaturePanel {
    dates: Vec<NaiveDate>,
    stocks: Vec<String>,
    lookback: usize,
    values: Vec<f32>,
    tradable: Vec<bool>,
}

impl FeaturePanel {
    pub fn from_prices(prices: &PriceTable, lookback: usize) -> Self {
        let (n_dates, n) = (prices.n_dates(), prices.n_stocks());
        let width = FIELDS * lookback;
        let mut values = vec![0f32; n_dates * n * width];
        let mut tradable = vec![false; n_dates * n];
        let mut window: Vec<&Bar> = Vec::with_capacity(lookback);
        for t in lookback.saturating_sub(1)..n_dates {
            'stock: for i in 0..n {
                window.clear();
                for tau in t + 1 - lookback..=t {
                    match prices.bar(tau, i) {
                        Some(b) => window.push(b),
                        None => continue 'stock,
                    }
                }
                let today = window[lookback - 1];
                if today.volume <= 0.0 {
                    continue;
                }
                let row = &mut values[(t * n + i) * width..(t * n + i + 1) * width];
                for (s, bar) in window.iter().enumerate() {
                    let f = bar.fields();
                    for field in 0..FIELDS {
                        let denom = if field == 5 { today.volume } else { today.close };
                        row[field * lookback + s] = (f[field] / denom) as f32;
                    }
                }
                tradable[t * n + i] = true;
            }
        }
        Self { dates: prices.dates().to_vec(), stocks: prices.stocks().to_vec(), lookback, values, tradable }
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn stocks(&self) -> &[String] {
        &self.stocks
    }

    pub fn lookback(&self) -> usize {
        self.lookback
    }

    pub fn width(&self) -> usize {
        FIELDS * self.lookback
    }

    pub fn is_tradable(&self, date: usize, stock: usize) -> bool {
        self.tradable[date * self.stocks.len() + stock]
    }

    pub fn row(&self, date: usize, stock: usize) -> Option<&[f32]> {
        if !self.is_tradable(date, stock) {
            return None;
        }
        let w = self.width();
        let at = (date * self.stocks.len() + stock) * w;
        Some(&self.values[at..at + w])
    }

    pub fn tradable_mask(&self) -> &[bool] {
        &self.tradable
    }
}

/// Raw next-day change rates and their per-date z-scores.
#[derive(Clone, Debug)]
pub struct LabelPanel {
    n_stocks: usize,
    raw: Vec<Option<f64>>,
    normalized: Vec<Option<f64>>,
}

impl LabelPanel {
    /// Normalization runs over the stocks of each date that are tradable and
    /// labeled, i.e. exactly the training cross-section.
    pub fn new(n_stocks: usize, raw: Vec<Option<f64>>, tradable: &[bool]) -> Self {
        let mut normalized = vec![None; raw.len()];
        let n_dates = if n_stocks == 0 { 0 } else { raw.len() / n_stocks };
        for t in 0..n_dates {
            let idx: Vec<usize> = (t * n_stocks..(t + 1) * n_stocks)
                .filter(|&k| tradable[k] && raw[k].is_some())
                .collect();
            if idx.is_empty() {
                continue;
            }
            let values: Vec<f64> = idx.iter().map(|&k| raw[k].unwrap_or_default()).collect();
            for (&k, z) in idx.iter().zip(normalize_labels(&values)) {
                normalized[k] = Some(z);
            }
        }
        Self { n_stocks, raw, normalized }
    }

    pub fn raw(&self, date: usize, stock: usize) -> Option<f64> {
        self.raw[date * self.n_stocks + stock]
    }

    pub fn normalized(&self, date: usize, stock: usize) -> Option<f64> {
        self.normalized[date * self.n_stocks + stock]
    }
}

/// Per-date z-score with population standard deviation. A date whose labels
/// are (numerically) constant normalizes to all zeros.
pub fn normalize_labels(raw: &[f64]) -> Vec<f64> {
    if raw.is_empty() {
        return Vec::new();
    }
    let n = raw.len() as f64;
    let mean = raw.iter().sum::<f64>() / n;
    let var = raw.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    if std < 1e-12 {
        return vec![0.0; raw.len()];
    }
    raw.iter().map(|v| (v - mean) / std).collect()
}

/// Predefined concept memberships and market caps, per trading date.
#[derive(Clone, Debug)]
pub struct ConceptCalendar {
    concepts: Vec<String>,
    n_stocks: usize,
    /// For each date, `(concept index, sorted member stock keys)`.
    memberships: Vec<Vec<(usize, Vec<usize>)>>,
    caps: Vec<Option<f64>>,
}

/// One membership edge as it appears in the concepts file.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConceptEdge {
    pub date: NaiveDate,
    pub stock: String,
    pub concept: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CapRecord {
    pub date: NaiveDate,
    pub stock: String,
    pub market_cap: f64,
}

impl ConceptCalendar {
    /// Resolve file records against the price calendar. A date with no edge
    /// rows inherits the previous date's memberships.
    pub fn from_records(prices: &PriceTable, edges: &[ConceptEdge], caps: &[CapRecord]) -> Result<Self> {
        let n = prices.n_stocks();
        let unknown_stocks: BTreeSet<String> = edges
            .iter()
            .map(|e| &e.stock)
            .chain(caps.iter().map(|c| &c.stock))
            .filter(|s| prices.stock_index(s).is_none())
            .cloned()
            .collect();
        if !unknown_stocks.is_empty() {
            return Err(HistError::UnknownStocks {
                file: "concepts/caps".into(),
                stocks: unknown_stocks.into_iter().collect(),
            });
        }
        let unknown_dates: BTreeSet<NaiveDate> = edges
            .iter()
            .map(|e| e.date)
            .chain(caps.iter().map(|c| c.date))
            .filter(|d| prices.date_index(*d).is_none())
            .collect();
        if !unknown_dates.is_empty() {
            return Err(HistError::UnknownDates {
                file: "concepts/caps".into(),
                dates: unknown_dates.into_iter().collect(),
            });
        }

        let names: BTreeSet<&str> = edges.iter().map(|e| e.concept.as_str()).collect();
        let concepts: Vec<String> = names.into_iter().map(String::from).collect();
        let concept_index = |c: &str| concepts.binary_search_by(|x| x.as_str().cmp(c)).expect("known concept");

        let mut blocks: BTreeMap<usize, BTreeMap<usize, BTreeSet<usize>>> = BTreeMap::new();
        for e in edges {
            let t = prices.date_index(e.date).expect("checked");
            let i = prices.stock_index(&e.stock).expect("checked");
            blocks.entry(t).or_default().entry(concept_index(&e.concept)).or_default().insert(i);
        }
        let mut memberships = Vec::with_capacity(prices.n_dates());
        let mut current: Vec<(usize, Vec<usize>)> = Vec::new();
        for t in 0..prices.n_dates() {
            if let Some(block) = blocks.get(&t) {
                current = block.iter().map(|(&k, m)| (k, m.iter().copied().collect())).collect();
            }
            memberships.push(current.clone());
        }

        let mut cap_values = vec![None; prices.n_dates() * n];
        for c in caps {
            let t = prices.date_index(c.date).expect("checked");
            let i = prices.stock_index(&c.stock).expect("checked");
            if !(c.market_cap > 0.0) || !c.market_cap.is_finite() {
                return Err(HistError::NonPositivePrice {
                    stock: c.stock.clone(),
                    date: c.date,
                    field: "market_cap",
                    value: c.market_cap,
                });
            }
            let slot = &mut cap_values[t * n + i];
            if slot.is_some() {
                return Err(HistError::DuplicateRow { file: "caps".into(), stock: c.stock.clone(), date: c.date });
            }
            *slot = Some(c.market_cap);
        }
        Ok(Self { concepts, n_stocks: n, memberships, caps: cap_values })
    }

    pub fn concept_names(&self) -> &[String] {
        &self.concepts
    }

    /// Concepts listed on `date` with their member stock keys.
    pub fn concepts_on(&self, date: usize) -> &[(usize, Vec<usize>)] {
        &self.memberships[date]
    }

    pub fn cap(&self, date: usize, stock: usize) -> Option<f64> {
        self.caps[date * self.n_stocks + stock]
    }
}

/// Everything loaded for one dataset, aligned on one calendar and universe.
#[derive(Clone, Debug)]
pub struct Panels {
    pub prices: PriceTable,
    pub features: FeaturePanel,
    pub labels: LabelPanel,
    pub concepts: ConceptCalendar,
}

impl Panels {
    pub fn build(prices: PriceTable, edges: &[ConceptEdge], caps: &[CapRecord], lookback: usize) -> Result<Self> {
        let concepts = ConceptCalendar::from_records(&prices, edges, caps)?;
        let features = FeaturePanel::from_prices(&prices, lookback);
        let labels = LabelPanel::new(prices.n_stocks(), prices.trends(), features.tradable_mask());
        Ok(Self { prices, features, labels, concepts })
    }

    pub fn dates(&self) -> &[NaiveDate] {
        self.prices.dates()
    }

    pub fn stocks(&self) -> &[String] {
        self.prices.stocks()
    }

    /// Dates with at least one stock that has both features and a label.
    pub fn labeled_dates(&self) -> Vec<usize> {
        (0..self.prices.n_dates())
            .filter(|&t| {
                (0..self.prices.n_stocks())
                    .any(|i| self.features.is_tradable(t, i) && self.labels.raw(t, i).is_some())
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_point_zscore() {
        let z = normalize_labels(&[0.01, 0.03]);
        assert!((z[0] + 1.0).abs() < 1e-12 && (z[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_zscore_is_zero() {
        assert_eq!(normalize_labels(&[0.02; 5]), vec![0.0; 5]);
    }

    #[test]
    fn three_point_population_zscore() {
        // mean 2, population variance 2/3, std 0.816496...
        let z = normalize_labels(&[1.0, 2.0, 3.0]);
        let expected = 1.0 / (2.0f64 / 3.0).sqrt();
        assert!((z[0] + expected).abs() < 1e-12);
        assert_eq!(z[1], 0.0);
        assert!((z[2] - expected).abs() < 1e-12);
        assert!((expected - 1.224_744_871).abs() < 1e-9);
    }
}
