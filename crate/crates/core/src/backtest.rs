//! Daily top-k long-only rebalancing with proportional trading costs.

use std::collections::BTreeMap;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::data::PriceTable;
use crate::error::{HistError, Result};
use crate::metrics::CrossSection;

pub const INITIAL_CAPITAL: f64 = 1e8;
pub const K_GRID: [usize; 5] = [10, 20, 30, 40, 50];

/// Costs as fractions of traded notional.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostModel {
    pub buy: f64,
    pub sell: f64,
}

impl Default for CostModel {
    fn default() -> Self {
        Self { buy: 0.0005, sell: 0.0015 }
    }
}

impl CostModel {
    pub const FREE: Self = Self { buy: 0.0, sell: 0.0 };

    pub fn validate(&self) -> Result<()> {
        if !(self.buy >= 0.0 && self.sell >= 0.0 && self.sell < 1.0 && self.buy.is_finite()) {
            return Err(HistError::Config(format!("invalid cost rates {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Buy,
    Sell,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trade {
    pub date: NaiveDate,
    pub stock: usize,
    pub side: Side,
    pub shares: f64,
    pub price: f64,
    pub cost: f64,
}

impl Trade {
    pub fn notional(&self) -> f64 {
        self.shares * self.price
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Holding {
    pub shares: f64,
    /// Most recent close seen; used to value the position while its price is
    /// missing.
    pub last_price: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PortfolioState {
    pub initial: f64,
    pub cash: f64,
    pub holdings: BTreeMap<usize, Holding>,
    /// Total value at each simulated close, after that day's trades.
    pub equity: Vec<(NaiveDate, f64)>,
    pub trades: Vec<Trade>,
}

impl PortfolioState {
    pub fn new(capital: f64) -> Self {
        Self { initial: capital, cash: capital, holdings: BTreeMap::new(), equity: Vec::new(), trades: Vec::new() }
    }

    /// Cash plus every position at its last known price.
    pub fn value(&self) -> f64 {
        self.cash + self.holdings.values().map(|h| h.shares * h.last_price).sum::<f64>()
    }

    pub fn cumulative_return(&self) -> Vec<(NaiveDate, f64)> {
        self.equity.iter().map(|&(d, v)| (d, (v - self.initial) / self.initial)).collect()
    }

    pub fn final_return(&self) -> Option<f64> {
        self.cumulative_return().last().map(|&(_, cr)| cr)
    }
}

/// Indices of the `k` highest predictions, ties to the smaller key.
pub fn top_k(keys: &[usize], predictions: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..keys.len()).collect();
    order.sort_by(|&a, &b| predictions[b].total_cmp(&predictions[a]).then(keys[a].cmp(&keys[b])));
    order.truncate(k);
    order
}

/// Common position value `v` that spends exactly `cash` when every position
/// with value below `v` is topped up (paying `buy`) and every position above
/// is trimmed (paying `sell`).
pub fn equal_target_value(cash: f64, values: &[f64], costs: CostModel) -> f64 {
    let mut c = values.to_vec();
    c.sort_by(f64::total_cmp);
    let m = c.len();
    let (up, down) = (1.0 + costs.buy, 1.0 - costs.sell);
    let total: f64 = c.iter().sum();
    // remaining cash after moving every position to v
    let left = |v: f64| -> f64 {
        c.iter().map(|&x| if x < v { -(v - x) * up } else { (x - v) * down }).sum::<f64>() + cash
    };
    let q = c.iter().position(|&x| left(x) <= 0.0).unwrap_or(m);
    let low: f64 = c[..q].iter().sum();
    let high = total - low;
    let a = cash + up * low + down * high;
    let b = up * q as f64 + down * (m - q) as f64;
    let lo = if q == 0 { 0.0 } else { c[q - 1] };
    let hi = if q == m { f64::INFINITY } else { c[q] };
    (a / b).clamp(lo, hi)
}

/// Trade at the close of `date` into an equal-value portfolio of the top `k`
/// predictions. `price` gives the close of a stock on `date`; held stocks
/// without one are frozen for the day.
pub fn rebalance(
    state: &mut PortfolioState,
    date: NaiveDate,
    keys: &[usize],
    predictions: &[f64],
    price: impl Fn(usize) -> Option<f64>,
    k: usize,
    costs: CostModel,
) {
    for (&stock, h) in state.holdings.iter_mut() {
        match price(stock) {
            Some(p) => h.last_price = p,
            None => log::warn!("{date}: no price for held stock {stock}, position frozen"),
        }
    }
    let priced: Vec<usize> = (0..keys.len()).filter(|&i| price(keys[i]).is_some()).collect();
    let pk: Vec<usize> = priced.iter().map(|&i| keys[i]).collect();
    let pp: Vec<f64> = priced.iter().map(|&i| predictions[i]).collect();
    let targets: Vec<usize> = top_k(&pk, &pp, k).into_iter().map(|j| pk[j]).collect();

    let exits: Vec<usize> = state
        .holdings
        .keys()
        .copied()
        .filter(|s| !targets.contains(s) && price(*s).is_some())
        .collect();
    for stock in exits {
        let h = state.holdings.remove(&stock).expect("held");
        let notional = h.shares * h.last_price;
        let cost = notional * costs.sell;
        state.cash += notional - cost;
        state.trades.push(Trade { date, stock, side: Side::Sell, shares: h.shares, price: h.last_price, cost });
    }
    if targets.is_empty() {
        return;
    }
    let mut sorted_targets = targets.clone();
    sorted_targets.sort_unstable();
    let values: Vec<f64> = sorted_targets
        .iter()
        .map(|s| state.holdings.get(s).map_or(0.0, |h| h.shares * h.last_price))
        .collect();
    let v = equal_target_value(state.cash, &values, costs);
    for (&stock, &current) in sorted_targets.iter().zip(&values) {
        let p = price(stock).expect("targets are priced");
        let delta = v - current;
        if delta == 0.0 {
            continue;
        }
        let h = state.holdings.entry(stock).or_insert(Holding { shares: 0.0, last_price: p });
        let shares = delta.abs() / p;
        let (side, cost) = if delta > 0.0 {
            h.shares += shares;
            let cost = delta * costs.buy;
            state.cash -= delta + cost;
            (Side::Buy, cost)
        } else {
            h.shares -= shares;
            let cost = -delta * costs.sell;
            state.cash += -delta - cost;
            (Side::Sell, cost)
        };
        state.trades.push(Trade { date, stock, side, shares, price: p, cost });
    }
    state.cash = state.cash.max(0.0);
}

/// Rebalance on every section's date in order, recording the closing value.
pub fn simulate(
    sections: &[CrossSection],
    prices: &PriceTable,
    k: usize,
    costs: CostModel,
    capital: f64,
) -> Result<PortfolioState> {
    costs.validate()?;
    if k == 0 {
        return Err(HistError::Config("k must be positive".into()));
    }
    let mut state = PortfolioState::new(capital);
    for s in sections {
        let t = prices.date_index(s.date).ok_or(HistError::DateNotFound(s.date))?;
        rebalance(&mut state, s.date, &s.stocks, &s.predictions, |i| prices.close(t, i), k, costs);
        let v = state.value();
        state.equity.push((s.date, v));
    }
    Ok(state)
}

/// Candidate with the highest final return; ties to the smallest `k`.
pub fn grid_search_k(candidates: &[usize], mut final_return: impl FnMut(usize) -> Result<f64>) -> Result<(usize, Vec<(usize, f64)>)> {
    let mut ks = candidates.to_vec();
    ks.sort_unstable();
    ks.dedup();
    let mut scores = Vec::with_capacity(ks.len());
    let mut best: Option<(usize, f64)> = None;
    for k in ks {
        let cr = final_return(k)?;
        scores.push((k, cr));
        if best.is_none_or(|(_, b)| cr > b) {
            best = Some((k, cr));
        }
    }
    let (k, _) = best.ok_or_else(|| HistError::Config("empty k grid".into()))?;
    Ok((k, scores))
}
