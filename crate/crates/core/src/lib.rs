//! Stock trend forecasting with predefined and hidden concept modules.

pub mod artifacts;
pub mod backtest;
pub mod config;
pub mod data;
pub mod error;
pub mod export;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod training;

pub use error::{HistError, Result};
