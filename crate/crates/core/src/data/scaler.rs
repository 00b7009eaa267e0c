use hist_autodiff::Tensor;

use super::panels::Panels;
use crate::error::{HistError, Result};

/// Per-dimension robust z-score: `(x - median) / (1.4826 * MAD)`, clipped to
/// `[-clip, clip]`. Dimensions with zero spread map to 0.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureScaler {
    center: Vec<f32>,
    scale: Vec<f32>,
    clip: f32,
}

pub const SCALER_CENTER: &str = "scaler.center";
pub const SCALER_SCALE: &str = "scaler.scale";
const CLIP: f32 = 3.0;

fn median(values: &mut [f32]) -> f32 {
    let mid = values.len() / 2;
    let (_, m, _) = values.select_nth_unstable_by(mid, f32::total_cmp);
    let upper = *m;
    if values.len() % 2 == 1 {
        upper
    } else {
        let lower = values[..mid].iter().copied().fold(f32::NEG_INFINITY, f32::max);
        0.5 * (lower + upper)
    }
}

impl FeatureScaler {
    pub fn identity(width: usize) -> Self {
        Self { center: vec![0.0; width], scale: vec![1.0; width], clip: f32::INFINITY }
    }

    /// Fit on every tradable, labeled row of the given dates.
    pub fn fit(panels: &Panels, dates: &[usize]) -> Result<Self> {
        let width = panels.features.width();
        let mut rows: Vec<&[f32]> = Vec::new();
        for &t in dates {
            for i in 0..panels.stocks().len() {
                if panels.labels.raw(t, i).is_some() {
                    if let Some(r) = panels.features.row(t, i) {
                        rows.push(r);
                    }
                }
            }
        }
        if rows.is_empty() {
            return Err(HistError::Config("no training rows to fit the feature scaler".into()));
        }
        let mut center = Vec::with_capacity(width);
        let mut scale = Vec::with_capacity(width);
        let mut column = vec![0f32; rows.len()];
        for j in 0..width {
            for (c, r) in column.iter_mut().zip(&rows) {
                *c = r[j];
            }
            let med = median(&mut column);
            for c in column.iter_mut() {
                *c = (*c - med).abs();
            }
            let mad = median(&mut column) * 1.4826;
            center.push(med);
            scale.push(if mad > 1e-12 { mad } else { 0.0 });
        }
        Ok(Self { center, scale, clip: CLIP })
    }

    pub fn width(&self) -> usize {
        self.center.len()
    }

    pub fn apply(&self, row: &[f32], out: &mut Vec<f32>) {
        for ((&x, &c), &s) in row.iter().zip(&self.center).zip(&self.scale) {
            let z = if s > 0.0 { (x - c) / s } else { 0.0 };
            out.push(z.clamp(-self.clip, self.clip));
        }
    }

    pub fn to_named(&self) -> Vec<(String, Tensor<f32>)> {
        let w = self.width();
        let mut scale = self.scale.clone();
        // The clip rides along as a trailing entry of the scale row.
        scale.push(self.clip);
        vec![
            (SCALER_CENTER.to_string(), Tensor::new(1, w, self.center.clone()).expect("shape")),
            (SCALER_SCALE.to_string(), Tensor::new(1, w + 1, scale).expect("shape")),
        ]
    }

    pub fn from_named(entries: &[(String, Tensor<f32>)]) -> Result<Self> {
        let find = |name: &str| {
            entries
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, t)| t.data().to_vec())
                .ok_or_else(|| HistError::Config(format!("checkpoint has no {name}")))
        };
        let center = find(SCALER_CENTER)?;
        let mut scale = find(SCALER_SCALE)?;
        if scale.len() != center.len() + 1 {
            return Err(HistError::Config("malformed scaler entries".into()));
        }
        let clip = scale.pop().unwrap_or(CLIP);
        Ok(Self { center, scale, clip })
    }
}
