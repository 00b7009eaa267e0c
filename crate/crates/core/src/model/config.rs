use serde::{Deserialize, Serialize};

use crate::data::{FIELDS, LOOKBACK};
use crate::error::{HistError, Result};

/// Which stock embeddings query the hidden concepts during aggregation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HiddenQueries {
    /// The hidden module's own input, the residual after the predefined backcast.
    Residual,
    /// The encoder output.
    Encoder,
}

/// Module switches. A disabled module contributes zero backcast and zero
/// forecast, so its input passes through unchanged.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Ablation {
    pub correction: bool,
    pub predefined: bool,
    pub hidden: bool,
    pub individual: bool,
}

impl Default for Ablation {
    fn default() -> Self {
        Self::full()
    }
}

impl Ablation {
    pub const FLAGS: [&'static str; 4] =
        ["disable-correction", "disable-predefined", "disable-hidden", "disable-individual"];

    pub fn full() -> Self {
        Self { correction: true, predefined: true, hidden: true, individual: true }
    }

    /// Encoder plus linear head.
    pub fn gru_only() -> Self {
        Self { correction: false, predefined: false, hidden: false, individual: false }
    }

    pub fn predefined_only() -> Self {
        Self { correction: true, predefined: true, hidden: false, individual: false }
    }

    /// Apply a `disable-*` flag.
    pub fn disable(&mut self, flag: &str) -> Result<()> {
        match flag {
            "disable-correction" => self.correction = false,
            "disable-predefined" => self.predefined = false,
            "disable-hidden" => self.hidden = false,
            "disable-individual" => self.individual = false,
            other => {
                return Err(HistError::Config(format!(
                    "unknown ablation flag {other:?}, expected one of {}",
                    Self::FLAGS.join(", ")
                )))
            }
        }
        Ok(())
    }

    pub fn from_flags<S: AsRef<str>>(flags: &[S]) -> Result<Self> {
        let mut a = Self::full();
        for f in flags {
            a.disable(f.as_ref())?;
        }
        Ok(a)
    }

    pub fn any_concept_path(&self) -> bool {
        self.predefined || self.hidden || self.individual
    }

    /// Directory-safe variant name, `full` when nothing is disabled.
    pub fn label(&self) -> String {
        let off: Vec<&str> = [
            (self.correction, "correction"),
            (self.predefined, "predefined"),
            (self.hidden, "hidden"),
            (self.individual, "individual"),
        ]
        .iter()
        .filter(|(on, _)| !on)
        .map(|(_, name)| *name)
        .collect();
        if off.is_empty() {
            "full".into()
        } else {
            format!("no-{}", off.join("-"))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Width `d` of every embedding and module output.
    pub hidden_size: usize,
    pub gru_layers: usize,
    /// Features per GRU step.
    pub fields: usize,
    /// GRU steps; the input width is `fields * steps`.
    pub steps: usize,
    pub leaky_slope: f64,
    pub cosine_eps: f64,
    pub hidden_queries: HiddenQueries,
    pub ablation: Ablation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden_size: 128,
            gru_layers: 2,
            fields: FIELDS,
            steps: LOOKBACK,
            leaky_slope: 0.01,
            cosine_eps: 1e-12,
            hidden_queries: HiddenQueries::Residual,
            ablation: Ablation::full(),
        }
    }
}

impl ModelConfig {
    pub fn input_width(&self) -> usize {
        self.fields * self.steps
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(HistError::Config(format!("model.{m}")));
        if self.hidden_size == 0 {
            return bad("hidden_size must be positive");
        }
        if self.gru_layers == 0 {
            return bad("gru_layers must be positive");
        }
        if self.fields == 0 || self.steps == 0 {
            return bad("fields and steps must be positive");
        }
        if !(self.leaky_slope.is_finite() && self.leaky_slope >= 0.0) {
            return bad("leaky_slope must be finite and non-negative");
        }
        if !(self.cosine_eps.is_finite() && self.cosine_eps > 0.0) {
            return bad("cosine_eps must be positive");
        }
        Ok(())
    }
}
