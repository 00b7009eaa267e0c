use hist_autodiff::{Element, ParamId, ParamStore, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use crate::error::{HistError, Result};

/// `x W + b` with `W: in x out` and `b: 1 x out`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

/// One GRU layer. Gate blocks are ordered reset, update, candidate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GruLayer {
    pub input: Linear,
    pub hidden: Linear,
}

/// Handles to every learnable weight, resolved against a [`ParamStore`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HistParams {
    pub gru: Vec<GruLayer>,
    /// Predefined-concept correction.
    pub correct: Linear,
    pub pre_share: Linear,
    pub pre_backcast: Linear,
    pub pre_forecast: Linear,
    /// Hidden-concept representation.
    pub hid_concept: Linear,
    pub hid_share: Linear,
    pub hid_backcast: Linear,
    pub hid_forecast: Linear,
    pub ind_forecast: Linear,
    pub predictor: Linear,
}

/// Parameter names and shapes in store order.
pub fn param_layout(config: &ModelConfig) -> Vec<(String, [usize; 2])> {
    let d = config.hidden_size;
    let mut out = Vec::new();
    let mut linear = |name: &str, fan_in: usize, fan_out: usize| {
        out.push((format!("{name}.w"), [fan_in, fan_out]));
        out.push((format!("{name}.b"), [1, fan_out]));
    };
    for l in 0..config.gru_layers {
        let input = if l == 0 { config.fields } else { d };
        linear(&format!("gru.{l}.input"), input, 3 * d);
        linear(&format!("gru.{l}.hidden"), d, 3 * d);
    }
    for name in [
        "predefined.correct",
        "predefined.share",
        "predefined.backcast",
        "predefined.forecast",
        "hidden.concept",
        "hidden.share",
        "hidden.backcast",
        "hidden.forecast",
        "individual.forecast",
    ] {
        linear(name, d, d);
    }
    linear("predictor", d, 1);
    out
}

impl HistParams {
    /// Fresh weights: uniform in `±1/sqrt(fan_in)`, biases zero.
    pub fn init<T: Element>(config: &ModelConfig, seed: u64) -> Result<(ParamStore<T>, Self)> {
        Self::init_with(config, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn init_with<T: Element>(config: &ModelConfig, rng: &mut impl Rng) -> Result<(ParamStore<T>, Self)> {
        config.validate()?;
        let mut store = ParamStore::new();
        for (name, [rows, cols]) in param_layout(config) {
            let value = if name.ends_with(".b") {
                Tensor::zeros(rows, cols)
            } else {
                let bound = 1.0 / (rows as f64).sqrt();
                Tensor::from_fn(rows, cols, |_, _| T::from_f64_lossy(rng.random_range(-bound..=bound)))
            };
            store.add(name, value)?;
        }
        let params = Self::bind(&store, config)?;
        Ok((store, params))
    }

    /// Resolve handles by name, checking every shape.
    pub fn bind<T: Element>(store: &ParamStore<T>, config: &ModelConfig) -> Result<Self> {
        for (name, shape) in param_layout(config) {
            let id = store
                .id(&name)
                .ok_or_else(|| HistError::Config(format!("parameter {name} missing from store")))?;
            if store.get(id).shape() != shape {
                return Err(HistError::Config(format!(
                    "parameter {name} has shape {:?}, config expects {shape:?}",
                    store.get(id).shape()
                )));
            }
        }
        let linear = |name: &str| Linear {
            w: store.id(&format!("{name}.w")).expect("checked"),
            b: store.id(&format!("{name}.b")).expect("checked"),
        };
        Ok(Self {
            gru: (0..config.gru_layers)
                .map(|l| GruLayer {
                    input: linear(&format!("gru.{l}.input")),
                    hidden: linear(&format!("gru.{l}.hidden")),
                })
                .collect(),
            correct: linear("predefined.correct"),
            pre_share: linear("predefined.share"),
            pre_backcast: linear("predefined.backcast"),
            pre_forecast: linear("predefined.forecast"),
            hid_concept: linear("hidden.concept"),
            hid_share: linear("hidden.share"),
            hid_backcast: linear("hidden.backcast"),
            hid_forecast: linear("hidden.forecast"),
            ind_forecast: linear("individual.forecast"),
            predictor: linear("predictor"),
        })
    }
}
