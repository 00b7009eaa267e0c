//! One-date-per-step training with Adam, validation-IC model selection and
//! the multi-seed runner.

use std::collections::BTreeMap;

use hist_autodiff::{clip_global_norm, Adam, AdamConfig, AutodiffError, Element, Graph, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::DateBatch;
use crate::error::{HistError, Result};
use crate::metrics::{evaluate, mean_std, pearson, CrossSection, MetricReport, PRECISION_NS};
use crate::model::{HistModel, ModelConfig};

/// Floating-point width used for training.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    F64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub seeds: Vec<u64>,
    /// Global gradient-norm ceiling.
    pub clip_norm: f64,
    pub precision: Precision,
    /// Fail the run if any softmax weight row misses 1 by more than 1e-6.
    pub audit_weights: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 2e-4,
            max_epochs: 200,
            patience: 20,
            seeds: vec![0],
            clip_norm: 3.0,
            precision: Precision::F32,
            audit_weights: false,
        }
    }
}

pub const WEIGHT_TOLERANCE: f64 = 1e-6;

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(HistError::Config(format!("train.{m}")));
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return bad("learning_rate must be finite and non-negative");
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be positive");
        }
        if self.patience > self.max_epochs {
            return bad("patience must not exceed max_epochs");
        }
        if self.seeds.is_empty() {
            return bad("seeds must list at least one seed");
        }
        if !(self.clip_norm > 0.0) {
            return bad("clip_norm must be positive");
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig { learning_rate: self.learning_rate, ..AdamConfig::default() }
    }
}

/// Mean squared error over one date's cross-section.
pub fn loss_value(predictions: &[f64], targets: &[f64]) -> f64 {
    assert_eq!(predictions.len(), targets.len());
    predictions.iter().zip(targets).map(|(p, d)| (p - d).powi(2)).sum::<f64>() / predictions.len() as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    /// Mean per-date loss over the epoch's steps.
    pub train_loss: f64,
    pub valid_ic: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub seed: u64,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_valid_ic: Option<f64>,
    /// Optimizer steps taken, one per training date per epoch.
    pub steps: u64,
}

/// Softmax-row statistics collected when auditing.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct WeightAudit {
    pub passes: usize,
    pub max_deviation: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome<T> {
    pub record: RunRecord,
    /// Parameters of the best validation epoch.
    pub model: HistModel<T>,
    pub audit: WeightAudit,
}

fn diverged(epoch: usize, batch: &DateBatch) -> impl Fn(HistError) -> HistError + '_ {
    move |e| match e {
        HistError::Autodiff(AutodiffError::NonFinite { op }) => {
            HistError::Diverged { epoch, date: batch.date, msg: format!("non-finite output of {op}") }
        }
        other => other,
    }
}

/// Predictions paired with raw labels for every labeled batch.
pub fn predict_sections<T: Element>(model: &HistModel<T>, batches: &[DateBatch]) -> Result<Vec<CrossSection>> {
    batches
        .iter()
        .filter(|b| b.raw.is_some())
        .map(|b| {
            Ok(CrossSection {
                date: b.date,
                stocks: b.stocks.clone(),
                predictions: model.predict(b)?,
                labels: b.raw.clone().expect("filtered"),
            })
        })
        .collect()
}

/// Mean daily IC, `None` if no date has one.
pub fn mean_ic<T: Element>(model: &HistModel<T>, batches: &[DateBatch]) -> Result<Option<f64>> {
    let ics: Vec<f64> = predict_sections(model, batches)?
        .iter()
        .filter_map(|s| pearson(&s.predictions, &s.labels))
        .collect();
    Ok(mean_std(&ics).map(|(m, _)| m))
}

fn better(candidate: Option<f64>, best: Option<f64>) -> bool {
    match (candidate, best) {
        (Some(c), Some(b)) => c > b,
        (Some(_), None) => true,
        _ => false,
    }
}

/// Train one seed. Weights and date shuffles share one generator seeded by
/// `seed`.
pub fn train<T: Element>(
    model_config: &ModelConfig,
    config: &TrainConfig,
    seed: u64,
    train_batches: &[DateBatch],
    valid_batches: &[DateBatch],
) -> Result<TrainOutcome<T>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = HistModel::<T>::with_rng(model_config.clone(), &mut rng)?;
    let mut adam = Adam::new(config.adam(), &model.store)?;
    let usable: Vec<&DateBatch> = train_batches
        .iter()
        .filter(|b| {
            let ok = !b.is_empty() && b.targets.is_some();
            if !ok {
                log::info!("{}: no labeled stocks, skipped", b.date);
            }
            ok
        })
        .collect();
    let mut order: Vec<usize> = (0..usable.len()).collect();
    let mut epochs = Vec::new();
    let mut best = (0usize, None::<f64>, model.store.clone());
    let mut audit = WeightAudit::default();

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for &j in &order {
            let batch = usable[j];
            let mut g = Graph::new();
            let vars = model.forward(&mut g, batch).map_err(diverged(epoch, batch))?;
            if config.audit_weights {
                let dev = vars.weight_row_deviation(&g);
                audit.passes += 1;
                audit.max_deviation = audit.max_deviation.max(dev);
                if !(dev <= WEIGHT_TOLERANCE) {
                    return Err(HistError::WeightAudit {
                        date: batch.date,
                        msg: format!("softmax row sum off by {dev:e}"),
                    });
                }
            }
            let targets = batch.targets.as_ref().expect("filtered");
            let target = g.constant(Tensor::from_f64(targets.len(), 1, targets)?)?;
            let loss = g.mse(vars.prediction, target).map_err(|e| diverged(epoch, batch)(e.into()))?;
            let value = g.value(loss).to_f64_vec()[0];
            let mut grads = g.backward(loss)?.into_param_grads(&model.store);
            clip_global_norm(&mut grads, config.clip_norm);
            adam.step(&mut model.store, &grads)?;
            if grads.iter().any(|t| !t.is_finite()) || model.store.tensors().iter().any(|t| !t.is_finite()) {
                return Err(HistError::Diverged { epoch, date: batch.date, msg: "non-finite update".into() });
            }
            total += value;
        }
        let train_loss = if usable.is_empty() { 0.0 } else { total / usable.len() as f64 };
        let valid_ic = mean_ic(&model, valid_batches)?;
        log::debug!("seed {seed} epoch {epoch}: loss {train_loss:.6} valid ic {valid_ic:?}");
        epochs.push(EpochRecord { epoch, train_loss, valid_ic });
        if epoch == 1 || better(valid_ic, best.1) {
            best = (epoch, valid_ic, model.store.clone());
        } else if epoch - best.0 >= config.patience {
            break;
        }
    }
    let (best_epoch, best_valid_ic, store) = best;
    let record = RunRecord { seed, epochs, best_epoch, best_valid_ic, steps: adam.steps_taken() };
    let model = HistModel::from_store(model.config, store)?;
    Ok(TrainOutcome { record, model, audit })
}

#[derive(Clone, Debug)]
pub struct SeedRun<T> {
    pub outcome: TrainOutcome<T>,
    pub test: MetricReport,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Population standard deviation across seeds.
    pub std: f64,
    pub seeds: usize,
}

#[derive(Clone, Debug)]
pub struct SeedRuns<T> {
    pub runs: Vec<SeedRun<T>>,
    /// Seeds whose run aborted, with the reason. Excluded from the summary.
    pub failed: Vec<(u64, String)>,
}

/// Per-metric mean and spread over the seeds where the metric is defined.
pub fn summarize<'a>(reports: impl IntoIterator<Item = &'a MetricReport>) -> BTreeMap<String, Option<MeanStd>> {
    let mut values: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for r in reports {
        for (name, v) in r.scalars() {
            let entry = values.entry(name).or_default();
            entry.extend(v);
        }
    }
    values
        .into_iter()
        .map(|(name, v)| (name, mean_std(&v).map(|(mean, std)| MeanStd { mean, std, seeds: v.len() })))
        .collect()
}

impl<T> SeedRuns<T> {
    pub fn summary(&self) -> BTreeMap<String, Option<MeanStd>> {
        summarize(self.runs.iter().map(|r| &r.test))
    }
}

/// Train and test every seed of `config`. Aborted runs are logged and listed
/// in `failed`.
pub fn run_seeds<T: Element>(
    model_config: &ModelConfig,
    config: &TrainConfig,
    train_batches: &[DateBatch],
    valid_batches: &[DateBatch],
    test_batches: &[DateBatch],
) -> Result<SeedRuns<T>> {
    config.validate()?;
    let mut runs = Vec::new();
    let mut failed = Vec::new();
    for &seed in &config.seeds {
        match train::<T>(model_config, config, seed, train_batches, valid_batches) {
            Ok(outcome) => {
                let test = evaluate(&predict_sections(&outcome.model, test_batches)?, &PRECISION_NS);
                runs.push(SeedRun { outcome, test });
            }
            Err(e) => {
                log::warn!("seed {seed} aborted: {e}");
                failed.push((seed, e.to_string()));
            }
        }
    }
    Ok(SeedRuns { runs, failed })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loss_of_a_perfect_fit_is_zero() {
        assert_eq!(loss_value(&[0.1, -0.2], &[0.1, -0.2]), 0.0);
        assert_eq!(loss_value(&[1.5, 0.0, 2.0], &[0.5, -1.0, 1.0]), 1.0);
    }

    #[test]
    fn config_checks() {
        TrainConfig::default().validate().unwrap();
        assert!(TrainConfig { patience: 300, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { learning_rate: -1.0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { seeds: vec![], ..Default::default() }.validate().is_err());
    }

    #[test]
    fn missing_values_never_win_selection() {
        assert!(better(Some(-0.5), None));
        assert!(!better(None, Some(-0.5)));
        assert!(!better(Some(0.1), Some(0.1)));
    }
}
