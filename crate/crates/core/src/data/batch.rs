use chrono::NaiveDate;

use super::panels::Panels;
use super::scaler::FeatureScaler;

/// A predefined concept restricted to one date's cross-section.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchConcept {
    pub concept: usize,
    /// Positions within the batch, ascending.
    pub members: Vec<usize>,
}

/// One date's cross-section: the unit of a single optimizer step.
#[derive(Clone, Debug)]
pub struct DateBatch {
    pub date_index: usize,
    pub date: NaiveDate,
    /// Stable stock keys, one per row.
    pub stocks: Vec<usize>,
    pub width: usize,
    /// Row-major `stocks.len() x width`, already scaled.
    pub features: Vec<f32>,
    pub caps: Vec<Option<f64>>,
    pub concepts: Vec<BatchConcept>,
    /// Normalized training labels.
    pub targets: Option<Vec<f64>>,
    /// Raw next-day change rates.
    pub raw: Option<Vec<f64>>,
}

impl DateBatch {
    pub fn len(&self) -> usize {
        self.stocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stocks.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.features[i * self.width..(i + 1) * self.width]
    }

    /// Reorder rows so that new position `p` holds old row `order[p]`.
    pub fn permuted(&self, order: &[usize]) -> Self {
        assert_eq!(order.len(), self.len());
        let mut inverse = vec![0; order.len()];
        for (p, &old) in order.iter().enumerate() {
            inverse[old] = p;
        }
        let pick = |v: &Vec<f64>| order.iter().map(|&o| v[o]).collect::<Vec<f64>>();
        let mut features = Vec::with_capacity(self.features.len());
        for &o in order {
            features.extend_from_slice(self.row(o));
        }
        let concepts = self
            .concepts
            .iter()
            .map(|c| {
                let mut members: Vec<usize> = c.members.iter().map(|&m| inverse[m]).collect();
                members.sort_unstable();
                BatchConcept { concept: c.concept, members }
            })
            .collect();
        Self {
            date_index: self.date_index,
            date: self.date,
            stocks: order.iter().map(|&o| self.stocks[o]).collect(),
            width: self.width,
            features,
            caps: order.iter().map(|&o| self.caps[o]).collect(),
            concepts,
            targets: self.targets.as_ref().map(pick),
            raw: self.raw.as_ref().map(pick),
        }
    }
}

impl Panels {
    /// Cross-section for panel date `t`: every stock with complete features,
    /// and, when `require_labels` is set, a label. `None` if no stock
    /// qualifies.
    pub fn batch(&self, t: usize, scaler: Option<&FeatureScaler>, require_labels: bool) -> Option<DateBatch> {
        let n = self.stocks().len();
        let width = self.features.width();
        let mut stocks = Vec::new();
        let mut features = Vec::new();
        for i in 0..n {
            let Some(row) = self.features.row(t, i) else { continue };
            if require_labels && self.labels.raw(t, i).is_none() {
                continue;
            }
            stocks.push(i);
            match scaler {
                Some(s) => s.apply(row, &mut features),
                None => features.extend_from_slice(row),
            }
        }
        if stocks.is_empty() {
            return None;
        }
        let mut position = vec![usize::MAX; n];
        for (p, &i) in stocks.iter().enumerate() {
            position[i] = p;
        }
        let concepts = self
            .concepts
            .concepts_on(t)
            .iter()
            .filter_map(|(k, members)| {
                let members: Vec<usize> =
                    members.iter().map(|&i| position[i]).filter(|&p| p != usize::MAX).collect();
                (!members.is_empty()).then_some(BatchConcept { concept: *k, members })
            })
            .collect();
        let labeled = stocks.iter().all(|&i| self.labels.raw(t, i).is_some());
        let (targets, raw) = if labeled {
            (
                Some(stocks.iter().map(|&i| self.labels.normalized(t, i).unwrap_or(0.0)).collect()),
                Some(stocks.iter().map(|&i| self.labels.raw(t, i).unwrap_or(0.0)).collect()),
            )
        } else {
            (None, None)
        };
        Some(DateBatch {
            date_index: t,
            date: self.dates()[t],
            caps: stocks.iter().map(|&i| self.concepts.cap(t, i)).collect(),
            stocks,
            width,
            features,
            concepts,
            targets,
            raw,
        })
    }
}
