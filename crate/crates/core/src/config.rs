//! Experiment configuration file (TOML).

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::backtest::{CostModel, INITIAL_CAPITAL, K_GRID};
use crate::data::{SplitConfig, LOOKBACK};
use crate::error::{io_err, HistError, Result};
use crate::model::ModelConfig;
use crate::training::TrainConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Days of history per feature row.
    pub lookback: usize,
    /// Robust z-score features with statistics of the training split.
    pub scale_features: bool,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self { lookback: LOOKBACK, scale_features: true }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BacktestConfig {
    pub k: usize,
    pub k_grid: Vec<usize>,
    pub capital: f64,
    pub costs: CostModel,
}

impl Default for BacktestConfig {
    fn default() -> Self {
        Self { k: 30, k_grid: K_GRID.to_vec(), capital: INITIAL_CAPITAL, costs: CostModel::default() }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub split: SplitConfig,
    pub backtest: BacktestConfig,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| HistError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        Self::from_toml(&text).map_err(|e| HistError::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.split.validate()?;
        self.backtest.costs.validate()?;
        if self.model.input_width() != crate::data::FIELDS * self.data.lookback {
            return Err(HistError::Config(format!(
                "model expects {} x {} inputs but data.lookback is {}",
                self.model.fields, self.model.steps, self.data.lookback
            )));
        }
        if self.backtest.k == 0 || self.backtest.k_grid.contains(&0) {
            return Err(HistError::Config("backtest k must be positive".into()));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form: object keys sorted, so the hash
    /// does not depend on key order in the source file.
    pub fn hash(&self) -> String {
        canonical_hash(self)
    }
}

/// SHA-256 hex digest of a value's JSON form with object keys sorted.
pub fn canonical_hash<S: Serialize>(value: &S) -> String {
    let value = serde_json::to_value(value).expect("value serializes");
    let digest = Sha256::digest(serde_json::to_vec(&value).expect("json"));
    digest.iter().map(|b| format!("{b:02x}")).collect()
}
