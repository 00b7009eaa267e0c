//! Daily cross-sectional metrics.

use std::collections::BTreeMap;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

/// Cutoffs reported by default.
pub const PRECISION_NS: [usize; 4] = [3, 5, 10, 30];

/// Pearson correlation. `None` with fewer than two points or zero variance
/// on either side.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    assert_eq!(x.len(), y.len());
    let n = x.len();
    if n < 2 {
        return None;
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return None;
    }
    Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// 1-based ranks; tied values share the mean of the ranks they span.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && x[order[end]] == x[order[start]] {
            end += 1;
        }
        let rank = (start + end + 1) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = rank;
        }
        start = end;
    }
    ranks
}

/// Spearman correlation: Pearson of average ranks.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    pearson(&average_ranks(x), &average_ranks(y))
}

/// Percent of the `n` highest predictions whose raw label is strictly
/// positive. Equal predictions are ordered by the smaller stock key. `None`
/// when fewer than `n` stocks are present.
pub fn precision_at_n(predictions: &[f64], raw_labels: &[f64], keys: &[usize], n: usize) -> Option<f64> {
    assert_eq!(predictions.len(), raw_labels.len());
    assert_eq!(predictions.len(), keys.len());
    if n == 0 || predictions.len() < n {
        return None;
    }
    let mut order: Vec<usize> = (0..predictions.len()).collect();
    order.sort_by(|&a, &b| predictions[b].total_cmp(&predictions[a]).then(keys[a].cmp(&keys[b])));
    let hits = order[..n].iter().filter(|&&i| raw_labels[i] > 0.0).count();
    Some(100.0 * hits as f64 / n as f64)
}

/// Predictions and raw next-day change rates of one date.
#[derive(Clone, Debug, PartialEq)]
pub struct CrossSection {
    pub date: NaiveDate,
    pub stocks: Vec<usize>,
    pub predictions: Vec<f64>,
    pub labels: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DateScore {
    pub date: NaiveDate,
    pub stocks: usize,
    pub ic: Option<f64>,
    pub rank_ic: Option<f64>,
    pub precision: BTreeMap<usize, Option<f64>>,
}

/// Mean of each metric over the dates where it is defined, with the number
/// of dates skipped per metric.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub dates: usize,
    pub ic: Option<f64>,
    pub rank_ic: Option<f64>,
    pub precision: BTreeMap<usize, Option<f64>>,
    pub skipped: BTreeMap<String, usize>,
    #[serde(skip)]
    pub per_date: Vec<DateScore>,
}

fn mean_defined(values: impl Iterator<Item = Option<f64>>) -> (Option<f64>, usize) {
    let (mut sum, mut count, mut skipped) = (0.0, 0usize, 0usize);
    for v in values {
        match v {
            Some(v) => {
                sum += v;
                count += 1;
            }
            None => skipped += 1,
        }
    }
    ((count > 0).then(|| sum / count as f64), skipped)
}

impl MetricReport {
    pub fn scalars(&self) -> BTreeMap<String, Option<f64>> {
        let mut out = BTreeMap::new();
        out.insert("ic".to_string(), self.ic);
        out.insert("rank_ic".to_string(), self.rank_ic);
        for (n, v) in &self.precision {
            out.insert(format!("precision@{n}"), *v);
        }
        out
    }
}

pub fn score_date(section: &CrossSection, ns: &[usize]) -> DateScore {
    DateScore {
        date: section.date,
        stocks: section.stocks.len(),
        ic: pearson(&section.predictions, &section.labels),
        rank_ic: spearman(&section.predictions, &section.labels),
        precision: ns
            .iter()
            .map(|&n| (n, precision_at_n(&section.predictions, &section.labels, &section.stocks, n)))
            .collect(),
    }
}

pub fn evaluate(sections: &[CrossSection], ns: &[usize]) -> MetricReport {
    let per_date: Vec<DateScore> = sections.iter().map(|s| score_date(s, ns)).collect();
    let mut skipped = BTreeMap::new();
    let (ic, s) = mean_defined(per_date.iter().map(|d| d.ic));
    skipped.insert("ic".to_string(), s);
    let (rank_ic, s) = mean_defined(per_date.iter().map(|d| d.rank_ic));
    skipped.insert("rank_ic".to_string(), s);
    let mut precision = BTreeMap::new();
    for &n in ns {
        let (p, s) = mean_defined(per_date.iter().map(|d| d.precision[&n]));
        precision.insert(n, p);
        skipped.insert(format!("precision@{n}"), s);
    }
    MetricReport { dates: sections.len(), ic, rank_ic, precision, skipped, per_date }
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Some((mean, var.sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_and_inverse_correlation() {
        let y = [0.3, -0.1, 0.2, 0.05];
        let neg: Vec<f64> = y.iter().map(|v| -v).collect();
        assert!((pearson(&y, &y).unwrap() - 1.0).abs() < 1e-15);
        assert!((pearson(&neg, &y).unwrap() + 1.0).abs() < 1e-15);
        assert_eq!(pearson(&[1.0, 1.0], &[0.0, 1.0]), None);
        assert_eq!(pearson(&[1.0], &[1.0]), None);
    }

    #[test]
    fn ranks_average_over_ties() {
        assert_eq!(average_ranks(&[10.0, 20.0, 10.0, 5.0]), vec![2.5, 4.0, 2.5, 1.0]);
    }

    #[test]
    fn rank_ic_sees_only_order() {
        let y = [0.1, 0.4, -0.2, 0.3, 0.0];
        let cubed: Vec<f64> = y.iter().map(|v: &f64| v.powi(3) + 7.0).collect();
        assert!((spearman(&cubed, &y).unwrap() - 1.0).abs() < 1e-12);
        let reversed: Vec<f64> = y.iter().map(|v| -v).collect();
        assert!((spearman(&reversed, &y).unwrap() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn five_of_ten_positive_is_fifty_percent() {
        let predictions: Vec<f64> = (0..12).map(|i| 12.0 - i as f64).collect();
        let labels = [0.1, -0.1, 0.2, -0.2, 0.3, -0.3, 0.4, -0.4, 0.5, 0.0, 0.9, 0.9];
        let keys: Vec<usize> = (0..12).collect();
        assert_eq!(precision_at_n(&predictions, &labels, &keys, 10), Some(50.0));
        assert_eq!(precision_at_n(&predictions, &labels, &keys, 13), None);
    }

    #[test]
    fn boundary_ties_prefer_the_smaller_key() {
        let predictions = [1.0, 1.0, 2.0];
        let labels = [-0.1, 0.1, 0.1];
        assert_eq!(precision_at_n(&predictions, &labels, &[5, 9, 0], 2), Some(50.0));
        assert_eq!(precision_at_n(&predictions, &labels, &[9, 5, 0], 2), Some(100.0));
    }

    #[test]
    fn seed_statistics_use_population_std() {
        let (m, s) = mean_std(&[0.1, 0.2, 0.3]).unwrap();
        assert!((m - 0.2).abs() < 1e-15);
        assert!((s - (0.02f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(mean_std(&[0.4]), Some((0.4, 0.0)));
    }

    #[test]
    fn skipped_dates_are_counted() {
        let d = NaiveDate::from_ymd_opt(2020, 1, 2).unwrap();
        let flat = CrossSection { date: d, stocks: vec![0, 1], predictions: vec![1.0, 1.0], labels: vec![0.1, 0.2] };
        let ok = CrossSection { date: d, stocks: vec![0, 1], predictions: vec![1.0, 2.0], labels: vec![0.1, 0.2] };
        let r = evaluate(&[flat, ok], &[3]);
        assert!((r.ic.unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(r.skipped["ic"], 1);
        assert_eq!(r.skipped["precision@3"], 2);
        assert_eq!(r.precision[&3], None);
    }
}
