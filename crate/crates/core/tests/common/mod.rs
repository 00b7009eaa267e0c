//! Shared fixtures and independent reference implementations for the
//! integration tests. Nothing here calls into the model's own math.
#![allow(dead_code)]

use std::collections::BTreeSet;

use chrono::NaiveDate;
use hist_autodiff::ParamStore;
use hist_core::data::{BatchConcept, DateBatch};
use hist_core::model::{Ablation, HiddenQueries, HistModel, ModelConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn date() -> NaiveDate {
    NaiveDate::from_ymd_opt(2021, 3, 1).unwrap()
}

pub fn tiny_config(hidden: usize, steps: usize, layers: usize, ablation: Ablation) -> ModelConfig {
    ModelConfig { hidden_size: hidden, gru_layers: layers, steps, ablation, ..ModelConfig::default() }
}

/// Random cross-section with the given concept memberships. Stock keys are
/// `0..n` unless `keys` is given.
pub fn random_batch(
    rng: &mut ChaCha8Rng,
    config: &ModelConfig,
    n: usize,
    concepts: &[Vec<usize>],
    caps: Option<Vec<Option<f64>>>,
) -> DateBatch {
    let width = config.input_width();
    let features: Vec<f32> = (0..n * width).map(|_| rng.random_range(-1.0f32..1.0)).collect();
    let targets: Vec<f64> = (0..n).map(|_| rng.random_range(-1.5..1.5)).collect();
    let raw: Vec<f64> = targets.iter().map(|t| 0.01 * t).collect();
    DateBatch {
        date_index: 0,
        date: date(),
        stocks: (0..n).collect(),
        width,
        features,
        caps: caps.unwrap_or_else(|| (0..n).map(|_| Some(rng.random_range(1.0..10.0))).collect()),
        concepts: concepts
            .iter()
            .enumerate()
            .map(|(k, m)| BatchConcept { concept: k, members: m.clone() })
            .collect(),
        targets: Some(targets),
        raw: Some(raw),
    }
}

/// Random memberships: every concept gets at least one member.
pub fn random_concepts(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Vec<Vec<usize>> {
    (0..k)
        .map(|_| {
            let mut m: Vec<usize> = (0..n).filter(|_| rng.random_bool(0.4)).collect();
            if m.is_empty() {
                m.push(rng.random_range(0..n));
            }
            m
        })
        .collect()
}

pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// ---- dense f64 reference ---------------------------------------------------

pub type M = Vec<Vec<f64>>;

pub fn matmul(a: &M, b: &M) -> M {
    let (n, k, m) = (a.len(), b.len(), b.first().map_or(0, |r| r.len()));
    (0..n)
        .map(|i| {
            (0..m)
                .map(|j| {
                    let mut s = 0.0;
                    for q in 0..k {
                        s += a[i][q] * b[q][j];
                    }
                    s
                })
                .collect()
        })
        .collect()
}

pub fn affine(x: &M, w: &M, b: &[f64]) -> M {
    matmul(x, w).into_iter().map(|r| r.iter().zip(b).map(|(v, c)| v + c).collect()).collect()
}

pub fn leaky(x: &M, slope: f64) -> M {
    x.iter().map(|r| r.iter().map(|&v| if v > 0.0 { v } else { slope * v }).collect()).collect()
}

pub fn sub(a: &M, b: &M) -> M {
    a.iter().zip(b).map(|(x, y)| x.iter().zip(y).map(|(p, q)| p - q).collect()).collect()
}

pub fn add(a: &M, b: &M) -> M {
    a.iter().zip(b).map(|(x, y)| x.iter().zip(y).map(|(p, q)| p + q).collect()).collect()
}

pub fn cosine_rows(a: &[f64], b: &[f64], eps: f64) -> f64 {
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt() + eps;
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt() + eps;
    a.iter().zip(b).map(|(x, y)| (x / na) * (y / nb)).sum()
}

/// `out[i][j] = cos(a_i, b_j)`.
pub fn cosine(a: &M, b: &M, eps: f64) -> M {
    a.iter().map(|x| b.iter().map(|y| cosine_rows(x, y, eps)).collect()).collect()
}

pub fn softmax_rows(x: &M) -> M {
    x.iter()
        .map(|r| {
            let m = r.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = r.iter().map(|v| (v - m).exp()).collect();
            let s: f64 = e.iter().sum();
            e.iter().map(|v| v / s).collect()
        })
        .collect()
}

pub fn to_m(t: &hist_autodiff::Tensor<f64>) -> M {
    (0..t.rows()).map(|r| t.row(r).to_vec()).collect()
}

fn p(store: &ParamStore<f64>, name: &str) -> M {
    to_m(store.get(store.id(name).unwrap_or_else(|| panic!("missing {name}"))))
}

fn bias(store: &ParamStore<f64>, name: &str) -> Vec<f64> {
    p(store, name).remove(0)
}

fn linear(store: &ParamStore<f64>, name: &str, x: &M) -> M {
    affine(x, &p(store, &format!("{name}.w")), &bias(store, &format!("{name}.b")))
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// Stacked GRU with gates ordered reset, update, candidate.
pub fn reference_encoder(store: &ParamStore<f64>, config: &ModelConfig, batch: &DateBatch) -> M {
    let (n, d, steps, width) = (batch.len(), config.hidden_size, config.steps, config.input_width());
    let mut inputs: Vec<M> = (0..steps)
        .map(|s| {
            (0..n)
                .map(|i| (0..config.fields).map(|f| batch.features[i * width + f * steps + s] as f64).collect())
                .collect()
        })
        .collect();
    for l in 0..config.gru_layers {
        let mut h: M = vec![vec![0.0; d]; n];
        let mut outputs = Vec::with_capacity(steps);
        for x in &inputs {
            let gi = linear(store, &format!("gru.{l}.input"), x);
            let gh = linear(store, &format!("gru.{l}.hidden"), &h);
            h = (0..n)
                .map(|i| {
                    (0..d)
                        .map(|j| {
                            let r = sigmoid(gi[i][j] + gh[i][j]);
                            let z = sigmoid(gi[i][d + j] + gh[i][d + j]);
                            let c = (gi[i][2 * d + j] + r * gh[i][2 * d + j]).tanh();
                            (1.0 - z) * c + z * h[i][j]
                        })
                        .collect()
                })
                .collect();
            outputs.push(h.clone());
        }
        inputs = outputs;
    }
    inputs.pop().expect("steps > 0")
}

/// Brute-force hidden-concept edges as `(stock key, concept key)` pairs.
/// `sim[k][i]` is the similarity of stock `i` to concept `k`.
pub fn brute_force_hidden(sim: &M, keys: &[usize]) -> (BTreeSet<(usize, usize)>, Vec<usize>) {
    let n = keys.len();
    let mut links = Vec::new();
    for i in 0..n {
        let mut best: Option<usize> = None;
        for k in 0..n {
            if k == i {
                continue;
            }
            best = match best {
                None => Some(k),
                Some(b) if sim[k][i] > sim[b][i] || (sim[k][i] == sim[b][i] && keys[k] < keys[b]) => Some(k),
                keep => keep,
            };
        }
        links.push((i, best.unwrap()));
    }
    let survivors: BTreeSet<usize> = links.iter().map(|&(_, k)| k).collect();
    let mut edges: BTreeSet<(usize, usize)> = links.iter().map(|&(i, k)| (keys[i], keys[k])).collect();
    for &k in &survivors {
        edges.insert((keys[k], keys[k]));
    }
    let mut surv: Vec<usize> = survivors.into_iter().collect();
    surv.sort_by_key(|&k| keys[k]);
    (edges, surv)
}

fn cap_weights(members: &[usize], caps: &[Option<f64>]) -> Vec<f64> {
    let known: Vec<f64> = members.iter().filter_map(|&i| caps[i]).collect();
    let filled: Vec<f64> = if known.is_empty() {
        vec![1.0; members.len()]
    } else {
        let mean = known.iter().sum::<f64>() / known.len() as f64;
        members.iter().map(|&i| caps[i].unwrap_or(mean)).collect()
    };
    let total: f64 = filled.iter().sum();
    filled.iter().map(|c| c / total).collect()
}

/// Every intermediate the reference pass produces.
#[derive(Debug)]
pub struct Reference {
    pub x0: M,
    pub x1: M,
    pub x2: M,
    pub e0: Option<M>,
    pub alpha1: Option<M>,
    pub beta0: Option<M>,
    pub hidden_edges: Option<BTreeSet<(usize, usize)>>,
    pub beta1: Option<M>,
    pub prediction: Vec<f64>,
}

/// The whole HIST pass composed from the dense helpers above.
pub fn reference_forward(model: &HistModel<f64>, batch: &DateBatch) -> Reference {
    let (c, s) = (&model.config, &model.store);
    let (slope, eps, n) = (c.leaky_slope, c.cosine_eps, batch.len());
    let x0 = reference_encoder(s, c, batch);
    let mut forecasts: Vec<M> = Vec::new();
    let (mut e0_out, mut alpha1_out, mut beta0_out) = (None, None, None);

    let mut x1 = x0.clone();
    if c.ablation.predefined && !batch.concepts.is_empty() {
        let alpha0: M = batch
            .concepts
            .iter()
            .map(|bc| {
                let mut row = vec![0.0; n];
                for (&i, w) in bc.members.iter().zip(cap_weights(&bc.members, &batch.caps)) {
                    row[i] = w;
                }
                row
            })
            .collect();
        let e0 = matmul(&alpha0, &x0);
        let reps = if c.ablation.correction {
            let a1 = softmax_rows(&cosine(&e0, &x0, eps));
            let e1 = leaky(&linear(s, "predefined.correct", &matmul(&a1, &x0)), slope);
            alpha1_out = Some(a1);
            e1
        } else {
            e0.clone()
        };
        let beta = softmax_rows(&cosine(&x0, &reps, eps));
        let shared = leaky(&linear(s, "predefined.share", &matmul(&beta, &reps)), slope);
        let back = leaky(&linear(s, "predefined.backcast", &shared), slope);
        forecasts.push(leaky(&linear(s, "predefined.forecast", &shared), slope));
        x1 = sub(&x0, &back);
        e0_out = Some(e0);
        beta0_out = Some(beta);
    }

    let mut x2 = x1.clone();
    let (mut edges_out, mut beta1_out) = (None, None);
    if c.ablation.hidden && n >= 2 {
        let gamma = cosine(&x1, &x1, eps);
        let (edges, survivors) = brute_force_hidden(&gamma, &batch.stocks);
        let pos = |key: usize| batch.stocks.iter().position(|&k| k == key).unwrap();
        let pooled: M = survivors
            .iter()
            .map(|&k| {
                let mut row = vec![0.0; c.hidden_size];
                for &(si, sk) in &edges {
                    if pos(sk) == k {
                        let i = pos(si);
                        for (r, v) in row.iter_mut().zip(&x1[i]) {
                            *r += gamma[k][i] * v;
                        }
                    }
                }
                row
            })
            .collect();
        let u1 = leaky(&linear(s, "hidden.concept", &pooled), slope);
        let queries = match c.hidden_queries {
            HiddenQueries::Residual => &x1,
            HiddenQueries::Encoder => &x0,
        };
        let beta = softmax_rows(&cosine(queries, &u1, eps));
        let shared = leaky(&linear(s, "hidden.share", &matmul(&beta, &u1)), slope);
        let back = leaky(&linear(s, "hidden.backcast", &shared), slope);
        forecasts.push(leaky(&linear(s, "hidden.forecast", &shared), slope));
        x2 = sub(&x1, &back);
        edges_out = Some(edges);
        beta1_out = Some(beta);
    }

    if c.ablation.individual {
        forecasts.push(leaky(&linear(s, "individual.forecast", &x2), slope));
    }
    let combined = forecasts.into_iter().reduce(|a, b| add(&a, &b)).unwrap_or_else(|| x0.clone());
    let prediction = linear(s, "predictor", &combined).into_iter().map(|r| r[0]).collect();
    Reference {
        x0,
        x1,
        x2,
        e0: e0_out,
        alpha1: alpha1_out,
        beta0: beta0_out,
        hidden_edges: edges_out,
        beta1: beta1_out,
        prediction,
    }
}

pub fn max_abs_diff(a: &M, b: &M) -> f64 {
    a.iter().flatten().zip(b.iter().flatten()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

// ---- metric oracles ---------------------------------------------------------

/// Pearson from raw moments.
pub fn pearson_oracle(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let (sx, sy) = (x.iter().sum::<f64>(), y.iter().sum::<f64>());
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let sxx: f64 = x.iter().map(|a| a * a).sum();
    let syy: f64 = y.iter().map(|b| b * b).sum();
    let cov = sxy / n - sx * sy / (n * n);
    let (vx, vy) = (sxx / n - (sx / n).powi(2), syy / n - (sy / n).powi(2));
    (x.len() >= 2 && vx > 1e-14 && vy > 1e-14).then(|| cov / (vx * vy).sqrt())
}

/// Rank by counting smaller and equal values.
pub fn rank_oracle(x: &[f64]) -> Vec<f64> {
    x.iter()
        .map(|&v| {
            let below = x.iter().filter(|&&u| u < v).count() as f64;
            let equal = x.iter().filter(|&&u| u == v).count() as f64;
            below + (equal + 1.0) / 2.0
        })
        .collect()
}

pub fn spearman_oracle(x: &[f64], y: &[f64]) -> Option<f64> {
    pearson_oracle(&rank_oracle(x), &rank_oracle(y))
}

/// A stock is in the top `n` when fewer than `n` stocks precede it.
pub fn precision_oracle(pred: &[f64], raw: &[f64], keys: &[usize], n: usize) -> Option<f64> {
    if n == 0 || pred.len() < n {
        return None;
    }
    let hits = (0..pred.len())
        .filter(|&i| {
            let ahead = (0..pred.len())
                .filter(|&j| pred[j] > pred[i] || (pred[j] == pred[i] && keys[j] < keys[i]))
                .count();
            ahead < n && raw[i] > 0.0
        })
        .count();
    Some(100.0 * hits as f64 / n as f64)
}

/// Random cross-section with some repeated values to force ties.
pub fn random_section(rng: &mut ChaCha8Rng, n: usize) -> (Vec<f64>, Vec<f64>, Vec<usize>) {
    let draw = |rng: &mut ChaCha8Rng| {
        if rng.random_bool(0.3) {
            rng.random_range(-2..3) as f64 * 0.5
        } else {
            rng.random_range(-1.0..1.0)
        }
    };
    let pred = (0..n).map(|_| draw(rng)).collect();
    let raw = (0..n).map(|_| draw(rng) * 0.02).collect();
    let mut keys: Vec<usize> = (0..n).map(|i| 3 * i + 1).collect();
    use rand::seq::SliceRandom;
    keys.shuffle(rng);
    (pred, raw, keys)
}

// ---- backtest fixtures -------------------------------------------------------

pub fn day(n: u32) -> NaiveDate {
    NaiveDate::from_ymd_opt(2020, 1, 1).unwrap() + chrono::Days::new(n as u64)
}

/// Price table from `closes[t][i]`; every bar field equals the close.
pub fn price_table(closes: &[Vec<f64>]) -> hist_core::data::PriceTable {
    use hist_core::data::{Bar, PriceTable};
    let n = closes[0].len();
    let bars = closes
        .iter()
        .flatten()
        .map(|&c| Some(Bar { open: c, close: c, high: c, low: c, vwap: c, volume: 1.0 }))
        .collect();
    PriceTable::new(
        (0..closes.len()).map(|t| day(t as u32)).collect(),
        (0..n).map(|i| format!("S{i}")).collect(),
        bars,
    )
    .unwrap()
}

pub fn sections(predictions: &[Vec<f64>]) -> Vec<hist_core::metrics::CrossSection> {
    predictions
        .iter()
        .enumerate()
        .map(|(t, p)| hist_core::metrics::CrossSection {
            date: day(t as u32),
            stocks: (0..p.len()).collect(),
            predictions: p.clone(),
            labels: vec![0.0; p.len()],
        })
        .collect()
}

pub const LEDGER_CLOSES: [[f64; 3]; 3] = [[10.0, 20.0, 40.0], [11.0, 18.0, 44.0], [12.0, 20.0, 40.0]];
/// Day 1 holds {A, B}; days 2 and 3 hold {A, C}.
pub const LEDGER_PREDICTIONS: [[f64; 3]; 3] = [[3.0, 2.0, 1.0], [2.0, 1.0, 3.0], [2.0, 1.0, 3.0]];

/// The 3-stock, 3-day ledger worked by hand with buy 0.05% and sell 0.15%,
/// k = 2. Returns the closing value of each day.
pub fn hand_ledger(capital: f64) -> [f64; 3] {
    let (up, down) = (1.0005, 0.9985);
    // day 1: buy A and B for v each, spending everything
    let v1 = capital / (2.0 * up);
    let (sa, sb) = (v1 / 10.0, v1 / 20.0);
    let value1 = sa * 10.0 + sb * 20.0;
    // day 2: sell B, then equalize A (worth 1.1 v1) and C (worth 0)
    let cash = sb * 18.0 * down;
    let a = sa * 11.0;
    // A is above the target, so it is trimmed at the sell rate
    let v2 = (cash + a * down) / (up + down);
    assert!(v2 < a);
    let (sa, sc) = (v2 / 11.0, v2 / 44.0);
    let value2 = 2.0 * v2;
    // day 3: A rose, C fell; move value from A to C with no spare cash
    let (a, c) = (sa * 12.0, sc * 40.0);
    let v3 = (a * down + c * up) / (up + down);
    assert!(c < v3 && v3 < a);
    [value1, value2, 2.0 * v3]
}

/// `count` labeled dates of `n` stocks, each with `k` random concepts.
pub fn random_batches(rng: &mut ChaCha8Rng, config: &ModelConfig, count: usize, n: usize, k: usize) -> Vec<DateBatch> {
    (0..count)
        .map(|t| {
            let concepts = random_concepts(rng, n, k);
            let mut b = random_batch(rng, config, n, &concepts, None);
            b.date_index = t;
            b.date = date() + chrono::Days::new(t as u64);
            b
        })
        .collect()
}
