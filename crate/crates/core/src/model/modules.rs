use hist_autodiff::{Element, Graph, ParamStore, Tensor, Var};

use super::config::ModelConfig;
use super::encoder::affine;
use super::hidden::{discover_hidden_edges, HiddenGraph};
use super::params::Linear;
use crate::data::BatchConcept;
use crate::error::Result;

/// Market-cap weights of one concept's members. Missing caps take the mean of
/// the members that have one; a concept with no caps at all is weighted
/// equally.
pub fn cap_weights(members: &[usize], caps: &[Option<f64>]) -> Vec<f64> {
    let known: Vec<f64> = members.iter().filter_map(|&i| caps[i]).collect();
    if known.is_empty() {
        return vec![1.0 / members.len() as f64; members.len()];
    }
    let fill = known.iter().sum::<f64>() / known.len() as f64;
    let raw: Vec<f64> = members.iter().map(|&i| caps[i].unwrap_or(fill)).collect();
    let total: f64 = raw.iter().sum();
    raw.iter().map(|c| c / total).collect()
}

/// `K x n` cap-weight matrix; row `k` is zero outside concept `k`.
pub fn cap_weight_matrix<T: Element>(concepts: &[BatchConcept], caps: &[Option<f64>]) -> Tensor<T> {
    let n = caps.len();
    let mut m = Tensor::zeros(concepts.len(), n);
    for (k, c) in concepts.iter().enumerate() {
        for (&i, w) in c.members.iter().zip(cap_weights(&c.members, caps)) {
            m.set(k, i, T::from_f64_lossy(w));
        }
    }
    m
}

/// Initial concept representations `alpha0 . x0`. Returns `(e0, alpha0)`.
pub fn init_predefined<T: Element>(
    g: &mut Graph<T>,
    x0: Var,
    concepts: &[BatchConcept],
    caps: &[Option<f64>],
) -> Result<(Var, Var)> {
    let alpha0 = g.constant(cap_weight_matrix(concepts, caps))?;
    let e0 = g.matmul(alpha0, x0)?;
    Ok((e0, alpha0))
}

/// Re-weight every stock against each concept by softmaxed cosine similarity,
/// members or not. Returns `(e1, alpha1)` with `alpha1: K x n`.
pub fn correct_predefined<T: Element>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    lin: Linear,
    x0: Var,
    e0: Var,
    config: &ModelConfig,
) -> Result<(Var, Var)> {
    let sim = g.cosine(e0, x0, config.cosine_eps)?;
    let alpha1 = g.softmax_rows(sim)?;
    let pooled = g.matmul(alpha1, x0)?;
    let z = affine(g, store, pooled, lin)?;
    let e1 = g.leaky_relu(z, config.leaky_slope)?;
    Ok((e1, alpha1))
}

/// Hidden concepts of one date. Returns `(gamma, structure, u1)` where
/// `gamma: n x n` holds all similarities and `u1` has one row per surviving
/// concept. The structure is a constant of the pass: gradients flow through
/// the selected similarities only.
pub fn discover_hidden<T: Element>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    lin: Linear,
    x1: Var,
    keys: &[usize],
    config: &ModelConfig,
) -> Result<(Var, HiddenGraph, Var)> {
    let n = keys.len();
    let gamma = g.cosine(x1, x1, config.cosine_eps)?;
    let values = g.value(gamma).to_f64_vec();
    let structure = discover_hidden_edges(&values, keys);
    let mask = Tensor::from_f64(structure.concepts.len(), n, &structure.mask(n))?;
    let mask = g.constant(mask)?;
    let rows = g.gather_rows(gamma, &structure.concepts)?;
    let weights = g.mul(rows, mask)?;
    let pooled = g.matmul(weights, x1)?;
    let z = affine(g, store, pooled, lin)?;
    let u1 = g.leaky_relu(z, config.leaky_slope)?;
    Ok((gamma, structure, u1))
}

/// Shared information of each stock from concept representations `reps`.
/// Returns `(s, beta)` with `beta: n x K`, softmaxed over concepts.
pub fn aggregate_to_stocks<T: Element>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    lin: Linear,
    queries: Var,
    reps: Var,
    config: &ModelConfig,
) -> Result<(Var, Var)> {
    let sim = g.cosine(queries, reps, config.cosine_eps)?;
    let beta = g.softmax_rows(sim)?;
    let pooled = g.matmul(beta, reps)?;
    let z = affine(g, store, pooled, lin)?;
    let s = g.leaky_relu(z, config.leaky_slope)?;
    Ok((s, beta))
}

/// Backcast and forecast of a concept module. Returns `(x_hat, y_hat)`.
pub fn module_outputs<T: Element>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    backcast: Linear,
    forecast: Linear,
    shared: Var,
    config: &ModelConfig,
) -> Result<(Var, Var)> {
    let b = affine(g, store, shared, backcast)?;
    let x_hat = g.leaky_relu(b, config.leaky_slope)?;
    let y_hat = individual_forecast(g, store, forecast, shared, config)?;
    Ok((x_hat, y_hat))
}

pub fn individual_forecast<T: Element>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    forecast: Linear,
    x: Var,
    config: &ModelConfig,
) -> Result<Var> {
    let f = affine(g, store, x, forecast)?;
    Ok(g.leaky_relu(f, config.leaky_slope)?)
}
