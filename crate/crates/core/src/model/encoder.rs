use hist_autodiff::{Element, Graph, ParamStore, Tensor, Var};

use super::config::ModelConfig;
use super::params::{GruLayer, Linear};
use crate::error::{HistError, Result};

pub(crate) fn affine<T: Element>(g: &mut Graph<T>, store: &ParamStore<T>, x: Var, lin: Linear) -> Result<Var> {
    let w = g.param(store, lin.w)?;
    let b = g.param(store, lin.b)?;
    Ok(g.affine(x, w, b)?)
}

/// Step-major GRU input: row `s * n + i` holds field values of stock `i` at
/// step `s`, read from the field-major feature row at `f * steps + s`.
pub fn step_inputs<T: Element>(features: &[f32], n: usize, config: &ModelConfig) -> Result<Tensor<T>> {
    let width = config.input_width();
    if n == 0 || features.len() != n * width {
        let got = if n == 0 { features.len() } else { features.len() / n };
        return Err(HistError::FeatureWidth { got, expected: width });
    }
    let steps = config.steps;
    Ok(Tensor::from_fn(steps * n, config.fields, |r, f| {
        let (s, i) = (r / n, r % n);
        T::from_f64_lossy(features[i * width + f * steps + s] as f64)
    }))
}

/// One layer over all steps. `projected` is the input projection of every
/// step, stacked step-major. Returns the hidden state after each step.
fn gru_layer<T: Element>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    layer: GruLayer,
    projected: Var,
    n: usize,
    steps: usize,
    d: usize,
) -> Result<Vec<Var>> {
    let w_hh = g.param(store, layer.hidden.w)?;
    let b_hh = g.param(store, layer.hidden.b)?;
    let mut h = g.constant(Tensor::zeros(n, d))?;
    let mut states = Vec::with_capacity(steps);
    for s in 0..steps {
        let gi = g.slice_rows(projected, s * n, n)?;
        let gh = g.affine(h, w_hh, b_hh)?;
        let gi_rz = g.slice_cols(gi, 0, 2 * d)?;
        let gh_rz = g.slice_cols(gh, 0, 2 * d)?;
        let pre_rz = g.add(gi_rz, gh_rz)?;
        let rz = g.sigmoid(pre_rz)?;
        let r = g.slice_cols(rz, 0, d)?;
        let z = g.slice_cols(rz, d, d)?;
        let gi_n = g.slice_cols(gi, 2 * d, d)?;
        let gh_n = g.slice_cols(gh, 2 * d, d)?;
        let gated = g.mul(r, gh_n)?;
        let pre_n = g.add(gi_n, gated)?;
        let cand = g.tanh(pre_n)?;
        // h' = (1 - z) * cand + z * h
        let diff = g.sub(h, cand)?;
        let keep = g.mul(z, diff)?;
        h = g.add(cand, keep)?;
        states.push(h);
    }
    Ok(states)
}

/// Stacked GRU over the reshaped features; the top layer's last hidden state
/// is the stock embedding, `n x d`.
pub fn encode<T: Element>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    layers: &[GruLayer],
    features: &[f32],
    n: usize,
    config: &ModelConfig,
) -> Result<Var> {
    let input = step_inputs::<T>(features, n, config)?;
    let (steps, d) = (config.steps, config.hidden_size);
    let mut x = g.constant(input)?;
    let mut last: Option<Vec<Var>> = None;
    for (l, &layer) in layers.iter().enumerate() {
        if l > 0 {
            x = g.concat_rows(last.as_deref().expect("previous layer"))?;
        }
        let projected = affine(g, store, x, layer.input)?;
        last = Some(gru_layer(g, store, layer, projected, n, steps, d)?);
    }
    let states = last.ok_or_else(|| HistError::Config("model.gru_layers must be positive".into()))?;
    Ok(*states.last().expect("steps > 0"))
}
