//! Encoder, concept modules and the doubly residual composition.

mod config;
mod encoder;
mod forward;
mod hidden;
mod modules;
mod params;

pub use config::{Ablation, HiddenQueries, ModelConfig};
pub use encoder::{encode, step_inputs};
pub use forward::{forward, ForwardTrace, ForwardVars, HiddenVars, HistModel, PredefinedVars};
pub use hidden::{discover_hidden_edges, HiddenGraph};
pub use modules::{
    aggregate_to_stocks, cap_weight_matrix, cap_weights, correct_predefined, discover_hidden, individual_forecast,
    init_predefined, module_outputs,
};
pub use params::{param_layout, GruLayer, HistParams, Linear};
