use hist_autodiff::{Element, Graph, ParamStore, Tensor, Var};

use super::config::{HiddenQueries, ModelConfig};
use super::encoder::{affine, encode};
use super::hidden::HiddenGraph;
use super::modules::{
    aggregate_to_stocks, correct_predefined, discover_hidden, individual_forecast, init_predefined, module_outputs,
};
use super::params::HistParams;
use crate::data::DateBatch;
use crate::error::{HistError, Result};

/// Predefined-concept module nodes.
#[derive(Clone, Copy, Debug)]
pub struct PredefinedVars {
    pub alpha0: Var,
    pub e0: Var,
    /// Absent when correction is disabled.
    pub alpha1: Option<Var>,
    /// Representation fed to aggregation: `e1`, or `e0` without correction.
    pub reps: Var,
    pub beta: Var,
    pub shared: Var,
    pub backcast: Var,
    pub forecast: Var,
}

/// Hidden-concept module nodes.
#[derive(Clone, Debug)]
pub struct HiddenVars {
    pub gamma: Var,
    pub structure: HiddenGraph,
    pub u1: Var,
    pub beta: Var,
    pub shared: Var,
    pub backcast: Var,
    pub forecast: Var,
}

/// Node handles of one forward pass. Disabled or bypassed modules are `None`
/// and their residual passes through: `x1 == x0` without a predefined module.
#[derive(Clone, Debug)]
pub struct ForwardVars {
    pub x0: Var,
    pub x1: Var,
    pub x2: Var,
    pub predefined: Option<PredefinedVars>,
    pub hidden: Option<HiddenVars>,
    pub individual: Option<Var>,
    /// Sum of the module forecasts, or `x0` if there are none.
    pub combined: Var,
    /// `n x 1`.
    pub prediction: Var,
}

/// Dense copy of every intermediate of one pass.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardTrace<T> {
    pub x0: Tensor<T>,
    pub x1: Tensor<T>,
    pub x2: Tensor<T>,
    pub alpha0: Option<Tensor<T>>,
    pub e0: Option<Tensor<T>>,
    pub alpha1: Option<Tensor<T>>,
    pub e1: Option<Tensor<T>>,
    pub beta0: Option<Tensor<T>>,
    pub s0: Option<Tensor<T>>,
    pub x_hat0: Option<Tensor<T>>,
    pub y_hat0: Option<Tensor<T>>,
    pub gamma: Option<Tensor<T>>,
    pub hidden: Option<HiddenGraph>,
    pub u1: Option<Tensor<T>>,
    pub beta1: Option<Tensor<T>>,
    pub s1: Option<Tensor<T>>,
    pub x_hat1: Option<Tensor<T>>,
    pub y_hat1: Option<Tensor<T>>,
    pub y_hat2: Option<Tensor<T>>,
    pub prediction: Vec<T>,
}

impl ForwardVars {
    pub fn trace<T: Element>(&self, g: &Graph<T>) -> ForwardTrace<T> {
        let v = |x: Var| g.value(x).clone();
        let p = self.predefined.as_ref();
        let h = self.hidden.as_ref();
        ForwardTrace {
            x0: v(self.x0),
            x1: v(self.x1),
            x2: v(self.x2),
            alpha0: p.map(|p| v(p.alpha0)),
            e0: p.map(|p| v(p.e0)),
            alpha1: p.and_then(|p| p.alpha1).map(v),
            e1: p.filter(|p| p.alpha1.is_some()).map(|p| v(p.reps)),
            beta0: p.map(|p| v(p.beta)),
            s0: p.map(|p| v(p.shared)),
            x_hat0: p.map(|p| v(p.backcast)),
            y_hat0: p.map(|p| v(p.forecast)),
            gamma: h.map(|h| v(h.gamma)),
            hidden: h.map(|h| h.structure.clone()),
            u1: h.map(|h| v(h.u1)),
            beta1: h.map(|h| v(h.beta)),
            s1: h.map(|h| v(h.shared)),
            x_hat1: h.map(|h| v(h.backcast)),
            y_hat1: h.map(|h| v(h.forecast)),
            y_hat2: self.individual.map(v),
            prediction: g.value(self.prediction).data().to_vec(),
        }
    }

    /// Largest deviation from 1 of any softmax weight row sum.
    pub fn weight_row_deviation<T: Element>(&self, g: &Graph<T>) -> f64 {
        let mut rows: Vec<Var> = Vec::new();
        if let Some(p) = &self.predefined {
            rows.extend(p.alpha1);
            rows.push(p.beta);
        }
        if let Some(h) = &self.hidden {
            rows.push(h.beta);
        }
        rows.iter()
            .flat_map(|&w| {
                let t = g.value(w);
                t.to_f64_vec()
                    .chunks(t.cols())
                    .map(|r| (r.iter().sum::<f64>() - 1.0).abs())
                    .collect::<Vec<_>>()
            })
            .fold(0.0, f64::max)
    }
}

/// Model configuration together with its weights.
#[derive(Clone, Debug)]
pub struct HistModel<T> {
    pub config: ModelConfig,
    pub store: ParamStore<T>,
    pub params: HistParams,
}

impl<T: Element> HistModel<T> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let (store, params) = HistParams::init(&config, seed)?;
        Ok(Self { config, store, params })
    }

    pub fn with_rng(config: ModelConfig, rng: &mut impl rand::Rng) -> Result<Self> {
        let (store, params) = HistParams::init_with(&config, rng)?;
        Ok(Self { config, store, params })
    }

    pub fn from_store(config: ModelConfig, store: ParamStore<T>) -> Result<Self> {
        config.validate()?;
        let params = HistParams::bind(&store, &config)?;
        Ok(Self { config, store, params })
    }

    pub fn cast<U: Element>(&self) -> HistModel<U> {
        HistModel { config: self.config.clone(), store: self.store.cast(), params: self.params.clone() }
    }

    pub fn forward(&self, g: &mut Graph<T>, batch: &DateBatch) -> Result<ForwardVars> {
        forward(g, &self.store, &self.params, &self.config, batch)
    }

    pub fn predict(&self, batch: &DateBatch) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let vars = self.forward(&mut g, batch)?;
        Ok(g.value(vars.prediction).to_f64_vec())
    }

    pub fn trace(&self, batch: &DateBatch) -> Result<ForwardTrace<T>> {
        let mut g = Graph::new();
        let vars = self.forward(&mut g, batch)?;
        Ok(vars.trace(&g))
    }
}

/// Full pass over one date: encoder, predefined module, hidden module,
/// individual module, and the linear predictor on the summed forecasts.
pub fn forward<T: Element>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    p: &HistParams,
    config: &ModelConfig,
    batch: &DateBatch,
) -> Result<ForwardVars> {
    let n = batch.len();
    if batch.width != config.input_width() {
        return Err(HistError::FeatureWidth { got: batch.width, expected: config.input_width() });
    }
    let ablation = config.ablation;
    let x0 = encode(g, store, &p.gru, &batch.features, n, config)?;
    let mut forecasts = Vec::new();

    let predefined = if ablation.predefined && !batch.concepts.is_empty() {
        let (e0, alpha0) = init_predefined(g, x0, &batch.concepts, &batch.caps)?;
        let (reps, alpha1) = if ablation.correction {
            let (e1, alpha1) = correct_predefined(g, store, p.correct, x0, e0, config)?;
            (e1, Some(alpha1))
        } else {
            (e0, None)
        };
        let (shared, beta) = aggregate_to_stocks(g, store, p.pre_share, x0, reps, config)?;
        let (backcast, forecast) = module_outputs(g, store, p.pre_backcast, p.pre_forecast, shared, config)?;
        forecasts.push(forecast);
        Some(PredefinedVars { alpha0, e0, alpha1, reps, beta, shared, backcast, forecast })
    } else {
        if ablation.predefined {
            log::debug!("{}: no predefined concepts, predefined module bypassed", batch.date);
        }
        None
    };
    let x1 = match &predefined {
        Some(m) => g.sub(x0, m.backcast)?,
        None => x0,
    };

    let hidden = if ablation.hidden && n >= 2 {
        let (gamma, structure, u1) = discover_hidden(g, store, p.hid_concept, x1, &batch.stocks, config)?;
        let queries = match config.hidden_queries {
            HiddenQueries::Residual => x1,
            HiddenQueries::Encoder => x0,
        };
        let (shared, beta) = aggregate_to_stocks(g, store, p.hid_share, queries, u1, config)?;
        let (backcast, forecast) = module_outputs(g, store, p.hid_backcast, p.hid_forecast, shared, config)?;
        forecasts.push(forecast);
        Some(HiddenVars { gamma, structure, u1, beta, shared, backcast, forecast })
    } else {
        if ablation.hidden {
            log::debug!("{}: {n} stock(s), hidden module bypassed", batch.date);
        }
        None
    };
    let x2 = match &hidden {
        Some(m) => g.sub(x1, m.backcast)?,
        None => x1,
    };

    let individual = if ablation.individual {
        let y2 = individual_forecast(g, store, p.ind_forecast, x2, config)?;
        forecasts.push(y2);
        Some(y2)
    } else {
        None
    };

    let mut combined = *forecasts.first().unwrap_or(&x0);
    for &f in forecasts.iter().skip(1) {
        combined = g.add(combined, f)?;
    }
    let prediction = affine(g, store, combined, p.predictor)?;
    Ok(ForwardVars { x0, x1, x2, predefined, hidden, individual, combined, prediction })
}
