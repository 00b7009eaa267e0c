//! Synthetic factor-model market with partially disclosed concepts.
//!
//! Log returns follow `r_i^t = B_i f_{k(i)}^t + noise * e_i^t`: each stock
//! loads on one factor, and each factor return is a slowly drifting mean plus
//! an AR(1) shock, `f_k^t = mu_k^t + eta_k^t` with
//! `eta_k^t = factor_momentum * eta_k^{t-1} + innovation`. Both `mu_k` and
//! `eta_k` have stationary standard deviations `drift_vol` and `factor_vol`.
//! The predictable part of tomorrow's return is shared by a factor's members,
//! and one stock's own history sees it through heavy idiosyncratic noise;
//! pooling stocks that share a factor is what recovers it.
//!
//! The first `disclosed_factors` factors are published as predefined
//! concepts with imperfect recall and some false members, plus a few noise
//! concepts; the remaining factors are only discoverable from the data. At
//! each regime switch a fraction of stocks move to a different factor and the
//! concept lists are republished.
//!
//! Daily fields: `close_t = close_{t-1} * exp(r_t)`, `open_t = close_{t-1} *
//! exp(0.25 * noise * z)`. High and low widen `max/min(open, close)` by a
//! half-normal fraction of a per-factor range width. VWAP is the open/close
//! midpoint with a small multiplicative jitter. Log volume is a factor-level
//! plus a stock-level AR(1) shock. Market cap is a per-stock share count
//! times the close.

use chrono::{Datelike, Days, NaiveDate, Weekday};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::panels::{CapRecord, ConceptEdge};
use super::prices::{Bar, PriceTable};
use crate::error::{HistError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub stocks: usize,
    pub factors: usize,
    /// Number of trading days generated.
    pub horizon: usize,
    /// Factors `0..disclosed_factors` are published as predefined concepts.
    pub disclosed_factors: usize,
    /// Days on which a fraction of stocks switch factor.
    pub regime_switches: Vec<usize>,
    pub switch_fraction: f64,
    /// Daily idiosyncratic log-return volatility.
    pub noise_scale: f64,
    pub factor_vol: f64,
    /// Day-to-day autocorrelation of each factor's shock.
    pub factor_momentum: f64,
    pub drift_vol: f64,
    pub drift_persistence: f64,
    /// Loadings are drawn uniformly from `1 +- loading_spread`.
    pub loading_spread: f64,
    /// Probability that a true factor member is listed under its concept.
    pub concept_recall: f64,
    /// Probability that a non-member is listed under a concept.
    pub concept_false_rate: f64,
    /// Extra concepts with random members and no factor behind them.
    pub noise_concepts: usize,
    pub noise_concept_size: usize,
    pub intraday_spread: f64,
    /// Log-scale spread of a per-factor multiplier on `intraday_spread`.
    pub spread_dispersion: f64,
    /// Log-volume shock shared by the stocks of a factor.
    pub volume_factor_vol: f64,
    /// Stock-specific log-volume shock.
    pub volume_noise: f64,
    /// Day-to-day autocorrelation of both volume shocks.
    pub volume_persistence: f64,
    /// Standard deviation of log shares outstanding.
    pub cap_dispersion: f64,
    pub seed: u64,
    pub start_date: NaiveDate,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            stocks: 100,
            factors: 5,
            horizon: 750,
            disclosed_factors: 3,
            regime_switches: vec![250, 500],
            switch_fraction: 0.1,
            noise_scale: 0.03,
            factor_vol: 0.012,
            factor_momentum: 0.5,
            drift_vol: 0.004,
            drift_persistence: 0.97,
            loading_spread: 0.2,
            concept_recall: 0.8,
            concept_false_rate: 0.02,
            noise_concepts: 2,
            noise_concept_size: 8,
            intraday_spread: 0.01,
            spread_dispersion: 1.0,
            volume_factor_vol: 0.6,
            volume_noise: 0.15,
            volume_persistence: 0.8,
            cap_dispersion: 0.5,
            seed: 7,
            start_date: NaiveDate::from_ymd_opt(2007, 1, 1).expect("valid date"),
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(HistError::Spec(m));
        if self.stocks < 2 {
            return fail(format!("need at least 2 stocks, got {}", self.stocks));
        }
        if self.factors < 1 {
            return fail("need at least 1 factor".into());
        }
        if self.horizon < 62 {
            return fail(format!("horizon {} is shorter than 62 days", self.horizon));
        }
        if self.disclosed_factors > self.factors {
            return fail(format!("{} disclosed factors of {}", self.disclosed_factors, self.factors));
        }
        if let Some(&d) = self.regime_switches.iter().find(|&&d| d == 0 || d >= self.horizon) {
            return fail(format!("regime switch day {d} outside 1..{}", self.horizon));
        }
        if self.regime_switches.windows(2).any(|w| w[0] >= w[1]) {
            return fail("regime switch days must be increasing".into());
        }
        for (name, p) in [
            ("switch_fraction", self.switch_fraction),
            ("concept_recall", self.concept_recall),
            ("concept_false_rate", self.concept_false_rate),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return fail(format!("{name} {p} outside [0, 1]"));
            }
        }
        if !(-1.0 < self.factor_momentum && self.factor_momentum < 1.0) {
            return fail(format!("factor_momentum {} outside (-1, 1)", self.factor_momentum));
        }
        if !(self.spread_dispersion >= 0.0 && self.spread_dispersion.is_finite()) {
            return fail(format!("spread_dispersion {} must be finite and non-negative", self.spread_dispersion));
        }
        if !(0.0..1.0).contains(&self.volume_persistence) {
            return fail(format!("volume_persistence {} outside [0, 1)", self.volume_persistence));
        }
        if !(0.0..1.0).contains(&self.drift_persistence) {
            return fail(format!("drift_persistence {} outside [0, 1)", self.drift_persistence));
        }
        for (name, v) in [
            ("noise_scale", self.noise_scale),
            ("factor_vol", self.factor_vol),
            ("drift_vol", self.drift_vol),
            ("loading_spread", self.loading_spread),
            ("intraday_spread", self.intraday_spread),
            ("volume_factor_vol", self.volume_factor_vol),
            ("volume_noise", self.volume_noise),
            ("cap_dispersion", self.cap_dispersion),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return fail(format!("{name} must be a finite non-negative number, got {v}"));
            }
        }
        if self.loading_spread >= 1.0 {
            return fail("loading_spread must be below 1".into());
        }
        if self.noise_concepts > 0 && !(1..=self.stocks).contains(&self.noise_concept_size) {
            return fail(format!("noise_concept_size {} outside 1..={}", self.noise_concept_size, self.stocks));
        }
        Ok(())
    }

    pub fn stock_ids(&self) -> Vec<String> {
        let width = (self.stocks - 1).to_string().len().max(3);
        (0..self.stocks).map(|i| format!("S{i:0width$}")).collect()
    }
}

/// Factor exposures in force from `start` onward.
#[derive(Clone, Debug, PartialEq)]
pub struct LoadingRegime {
    pub start: NaiveDate,
    /// Factor each stock loads on.
    pub factor: Vec<usize>,
    /// Loading on that factor.
    pub loading: Vec<f64>,
}

impl LoadingRegime {
    /// Dense `stocks x factors` matrix.
    pub fn matrix(&self, factors: usize) -> Vec<f64> {
        let mut b = vec![0.0; self.factor.len() * factors];
        for (i, (&k, &l)) in self.factor.iter().zip(&self.loading).enumerate() {
            b[i * factors + k] = l;
        }
        b
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticData {
    pub prices: PriceTable,
    pub edges: Vec<ConceptEdge>,
    pub caps: Vec<CapRecord>,
    pub regimes: Vec<LoadingRegime>,
}

/// Weekdays starting at `start` (or the next weekday after it).
pub fn business_days(start: NaiveDate, count: usize) -> Vec<NaiveDate> {
    let mut out = Vec::with_capacity(count);
    let mut d = start;
    while out.len() < count {
        if !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
            out.push(d);
        }
        d = d + Days::new(1);
    }
    out
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticData> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (n, m) = (spec.stocks, spec.factors);
    let dates = business_days(spec.start_date, spec.horizon);
    let stocks = spec.stock_ids();

    // Balanced initial assignment, shuffled across stock ids.
    let mut factor: Vec<usize> = (0..n).map(|i| i % m).collect();
    factor.shuffle(&mut rng);
    let loading: Vec<f64> = (0..n)
        .map(|_| 1.0 + spec.loading_spread * (2.0 * rng.random::<f64>() - 1.0))
        .collect();
    let shares: Vec<f64> = (0..n).map(|_| (16.0 + spec.cap_dispersion * normal(&mut rng)).exp()).collect();
    let start_price: Vec<f64> = (0..n).map(|_| rng.random_range(5.0..100.0)).collect();

    let mut regimes = vec![LoadingRegime { start: dates[0], factor: factor.clone(), loading: loading.clone() }];
    let mut edges = Vec::new();
    publish_concepts(spec, &mut rng, &stocks, &regimes[0], dates[0], &mut edges);

    let stationary = spec.drift_vol;
    let innovation = (1.0 - spec.drift_persistence.powi(2)).sqrt() * spec.drift_vol;
    let mut drift: Vec<f64> = (0..m).map(|_| stationary * normal(&mut rng)).collect();
    let shock_innovation = (1.0 - spec.factor_momentum.powi(2)).sqrt() * spec.factor_vol;
    let mut shock: Vec<f64> = (0..m).map(|_| spec.factor_vol * normal(&mut rng)).collect();
    let vol_scale = (1.0 - spec.volume_persistence.powi(2)).sqrt();
    let mut factor_volume: Vec<f64> = (0..m).map(|_| spec.volume_factor_vol * normal(&mut rng)).collect();
    let mut stock_volume: Vec<f64> = (0..n).map(|_| spec.volume_noise * normal(&mut rng)).collect();
    let spread: Vec<f64> =
        (0..m).map(|_| spec.intraday_spread * (spec.spread_dispersion * normal(&mut rng)).exp()).collect();

    let mut bars = Vec::with_capacity(dates.len() * n);
    let mut caps = Vec::with_capacity(dates.len() * n);
    let mut close: Vec<f64> = start_price.clone();
    for (t, date) in dates.iter().enumerate() {
        if spec.regime_switches.contains(&t) {
            let current = regimes.last().expect("initial regime").clone();
            let mut next = current.clone();
            next.start = *date;
            let movers = ((spec.switch_fraction * n as f64).round() as usize).min(n);
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rng);
            for &i in &order[..movers] {
                if m > 1 {
                    let shift = rng.random_range(1..m);
                    next.factor[i] = (current.factor[i] + shift) % m;
                }
            }
            publish_concepts(spec, &mut rng, &stocks, &next, *date, &mut edges);
            regimes.push(next);
        }
        let regime = regimes.last().expect("regime");

        if t > 0 {
            for (d, e) in drift.iter_mut().zip(shock.iter_mut()) {
                *d = spec.drift_persistence * *d + innovation * normal(&mut rng);
                *e = spec.factor_momentum * *e + shock_innovation * normal(&mut rng);
            }
            for v in factor_volume.iter_mut() {
                *v = spec.volume_persistence * *v + vol_scale * spec.volume_factor_vol * normal(&mut rng);
            }
            for v in stock_volume.iter_mut() {
                *v = spec.volume_persistence * *v + vol_scale * spec.volume_noise * normal(&mut rng);
            }
        }
        let factor_ret: Vec<f64> = drift.iter().zip(&shock).map(|(mu, e)| mu + e).collect();
        for i in 0..n {
            let prev = close[i];
            let today = if t == 0 {
                prev
            } else {
                let r = regime.loading[i] * factor_ret[regime.factor[i]] + spec.noise_scale * normal(&mut rng);
                prev * r.exp()
            };
            let open = prev * (0.25 * spec.noise_scale * normal(&mut rng)).exp();
            let hi_base = open.max(today);
            let lo_base = open.min(today);
            let width = spread[regime.factor[i]];
            let high = hi_base * (1.0 + width * normal(&mut rng).abs());
            let low = lo_base * (1.0 - width * normal(&mut rng).abs()).max(0.5);
            let vwap = 0.5 * (open + today) * (1.0 + 0.1 * spec.intraday_spread * normal(&mut rng));
            let volume = (13.0 + factor_volume[regime.factor[i]] + stock_volume[i]).exp();
            bars.push(Some(Bar { open, close: today, high, low, vwap, volume }));
            caps.push(CapRecord { date: *date, stock: stocks[i].clone(), market_cap: shares[i] * today });
            close[i] = today;
        }
    }

    let prices = PriceTable::new(dates, stocks, bars)?;
    Ok(SyntheticData { prices, edges, caps, regimes })
}

fn publish_concepts(
    spec: &SyntheticSpec,
    rng: &mut ChaCha8Rng,
    stocks: &[String],
    regime: &LoadingRegime,
    date: NaiveDate,
    edges: &mut Vec<ConceptEdge>,
) {
    let n = stocks.len();
    for k in 0..spec.disclosed_factors {
        let mut members: Vec<usize> = (0..n)
            .filter(|&i| {
                let p = if regime.factor[i] == k { spec.concept_recall } else { spec.concept_false_rate };
                rng.random::<f64>() < p
            })
            .collect();
        if members.is_empty() {
            // Keep every published concept non-empty.
            if let Some(i) = (0..n).find(|&i| regime.factor[i] == k) {
                members.push(i);
            } else {
                members.push(rng.random_range(0..n));
            }
        }
        let name = format!("concept_{k:02}");
        edges.extend(members.into_iter().map(|i| ConceptEdge { date, stock: stocks[i].clone(), concept: name.clone() }));
    }
    for j in 0..spec.noise_concepts {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);
        let mut members = order[..spec.noise_concept_size].to_vec();
        members.sort_unstable();
        let name = format!("noise_{j:02}");
        edges.extend(members.into_iter().map(|i| ConceptEdge { date, stock: stocks[i].clone(), concept: name.clone() }));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validation_rejects_bad_specs() {
        let ok = SyntheticSpec::default();
        assert!(ok.validate().is_ok());
        assert!(SyntheticSpec { stocks: 1, ..ok.clone() }.validate().is_err());
        assert!(SyntheticSpec { factors: 0, disclosed_factors: 0, ..ok.clone() }.validate().is_err());
        assert!(SyntheticSpec { horizon: 61, regime_switches: vec![], ..ok.clone() }.validate().is_err());
        assert!(SyntheticSpec { disclosed_factors: 9, ..ok.clone() }.validate().is_err());
        assert!(SyntheticSpec { regime_switches: vec![800], ..ok.clone() }.validate().is_err());
        assert!(SyntheticSpec { concept_recall: 1.5, ..ok }.validate().is_err());
    }

    #[test]
    fn business_days_skip_weekends() {
        // 2007-01-05 is a Friday.
        let d = business_days(NaiveDate::from_ymd_opt(2007, 1, 5).unwrap(), 3);
        assert_eq!(d[1], NaiveDate::from_ymd_opt(2007, 1, 8).unwrap());
        assert_eq!(d[2], NaiveDate::from_ymd_opt(2007, 1, 9).unwrap());
    }

    #[test]
    fn regimes_follow_schedule() {
        let spec = SyntheticSpec { stocks: 20, horizon: 100, regime_switches: vec![40, 70], switch_fraction: 0.25, ..Default::default() };
        let data = generate_synthetic(&spec).unwrap();
        assert_eq!(data.regimes.len(), 3);
        let moved = data.regimes[0].factor.iter().zip(&data.regimes[1].factor).filter(|(a, b)| a != b).count();
        assert_eq!(moved, 5);
        assert_eq!(data.regimes[1].start, data.prices.dates()[40]);
        let blocks: std::collections::BTreeSet<_> = data.edges.iter().map(|e| e.date).collect();
        assert_eq!(blocks.len(), 3);
    }
}
