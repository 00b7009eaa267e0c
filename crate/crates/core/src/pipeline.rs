//! Panels to batches according to an experiment configuration.

use crate::config::ExperimentConfig;
use crate::data::{DateBatch, FeatureScaler, Panels, Split};
use crate::error::{HistError, Result};

/// Labeled batches of one split.
pub fn split_batches(panels: &Panels, cfg: &ExperimentConfig, split: Split, scaler: &FeatureScaler) -> Vec<DateBatch> {
    cfg.split.dates(panels, split).into_iter().filter_map(|t| panels.batch(t, Some(scaler), true)).collect()
}

/// Scaler fitted on the training split, or the identity when scaling is off.
pub fn fit_scaler(panels: &Panels, cfg: &ExperimentConfig) -> Result<FeatureScaler> {
    if cfg.data.scale_features {
        FeatureScaler::fit(panels, &cfg.split.dates(panels, Split::Train))
    } else {
        Ok(FeatureScaler::identity(panels.features.width()))
    }
}

#[derive(Clone, Debug)]
pub struct Prepared {
    pub scaler: FeatureScaler,
    pub train: Vec<DateBatch>,
    pub valid: Vec<DateBatch>,
    pub test: Vec<DateBatch>,
}

impl Prepared {
    pub fn new(panels: &Panels, cfg: &ExperimentConfig) -> Result<Self> {
        if panels.features.width() != cfg.model.input_width() {
            return Err(HistError::FeatureWidth { got: panels.features.width(), expected: cfg.model.input_width() });
        }
        let scaler = fit_scaler(panels, cfg)?;
        let prepared = Self {
            train: split_batches(panels, cfg, Split::Train, &scaler),
            valid: split_batches(panels, cfg, Split::Valid, &scaler),
            test: split_batches(panels, cfg, Split::Test, &scaler),
            scaler,
        };
        if prepared.train.is_empty() {
            return Err(HistError::Config("no labeled dates fall in the training range".into()));
        }
        Ok(prepared)
    }
}
