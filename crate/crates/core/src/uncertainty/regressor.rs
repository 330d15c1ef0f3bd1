//! Per-pixel ridge regression from cue features to oracle uncertainty.

use std::fs;
use std::path::Path;

use log::warn;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::features::{pixel_features, FEATURE_NAMES};
use super::{TrainingSample, UncertaintyMap, UqContext};
use crate::error::{Error, Result};
use crate::image::ScalarMap;
use crate::render::{DepthMap, RenderedImage};

pub const DEFAULT_RIDGE: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchRegressorModel {
    pub feature_names: Vec<String>,
    pub weights: Vec<f64>,
    pub bias: f64,
    pub normalization: Normalization,
}

impl PatchRegressorModel {
    pub fn validate(&self) -> Result<()> {
        let n = self.feature_names.len();
        if self.weights.len() != n || self.normalization.mean.len() != n || self.normalization.std.len() != n {
            return Err(Error::Invalid("regressor feature count mismatch".into()));
        }
        if self.weights.iter().chain(std::iter::once(&self.bias)).any(|w| !w.is_finite()) {
            return Err(Error::Invalid("regressor weights are not finite".into()));
        }
        Ok(())
    }

    /// Unclamped prediction for one feature row.
    pub fn raw(&self, row: &[f64]) -> f64 {
        let mut acc = self.bias;
        for k in 0..self.weights.len() {
            acc += self.weights[k] * (row[k] - self.normalization.mean[k]) / self.normalization.std[k];
        }
        acc
    }

    pub fn predict_rows(&self, features: &[f64], width: usize, height: usize) -> UncertaintyMap {
        let n = self.weights.len();
        let data = features.chunks(n).map(|row| self.raw(row)).collect();
        UncertaintyMap::from_map(ScalarMap { width, height, data })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("model serializes");
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: Self = serde_json::from_str(&text).map_err(|e| Error::format(path, e))?;
        m.validate().map_err(|e| Error::format(path, e))?;
        Ok(m)
    }
}

/// Closed-form ridge fit on standardized features. If the normal matrix is
/// not positive definite the penalty is raised tenfold until it is.
pub fn fit_ridge(features: &[f64], labels: &[f64], names: &[&str], lambda: f64) -> Result<PatchRegressorModel> {
    let k = names.len();
    let n = labels.len();
    if n == 0 || features.len() != n * k {
        return Err(Error::Invalid("ridge regression needs matching, non-empty data".into()));
    }
    let mut mean = vec![0.0; k];
    for row in features.chunks(k) {
        for j in 0..k {
            mean[j] += row[j];
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut std = vec![0.0; k];
    for row in features.chunks(k) {
        for j in 0..k {
            std[j] += (row[j] - mean[j]).powi(2);
        }
    }
    for s in &mut std {
        *s = (*s / n as f64).sqrt();
        if !(*s > 1e-12) {
            *s = 1.0;
        }
    }
    let y_mean = labels.iter().sum::<f64>() / n as f64;
    let mut xtx = DMatrix::<f64>::zeros(k, k);
    let mut xty = DVector::<f64>::zeros(k);
    let mut z = vec![0.0; k];
    for (row, y) in features.chunks(k).zip(labels) {
        for j in 0..k {
            z[j] = (row[j] - mean[j]) / std[j];
        }
        for a in 0..k {
            xty[a] += z[a] * (y - y_mean);
            for b in 0..k {
                xtx[(a, b)] += z[a] * z[b];
            }
        }
    }
    let mut lam = lambda;
    let weights = loop {
        let mut m = xtx.clone();
        for j in 0..k {
            m[(j, j)] += lam;
        }
        if let Some(ch) = m.cholesky() {
            break ch.solve(&xty);
        }
        let next = if lam > 0.0 { lam * 10.0 } else { 1e-6 };
        warn!("ridge normal matrix is singular at lambda={lam}; retrying with {next}");
        lam = next;
        if lam > 1e12 {
            return Err(Error::Invalid("ridge normal matrix stays singular".into()));
        }
    };
    let model = PatchRegressorModel {
        feature_names: names.iter().map(|s| s.to_string()).collect(),
        weights: weights.iter().copied().collect(),
        bias: y_mean,
        normalization: Normalization { mean, std },
    };
    model.validate()?;
    Ok(model)
}

/// Two independent regressors, one per uncertainty map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedPredictor {
    pub render: PatchRegressorModel,
    pub depth: PatchRegressorModel,
}

impl TrainedPredictor {
    pub fn predict(
        &self,
        rendered: &RenderedImage,
        depth: &DepthMap,
        ctx: &UqContext,
    ) -> Result<(UncertaintyMap, UncertaintyMap)> {
        let f = pixel_features(rendered, depth, ctx)?;
        let (w, h) = rendered.dims();
        Ok((self.render.predict_rows(&f, w, h), self.depth.predict_rows(&f, w, h)))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("model serializes");
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: Self = serde_json::from_str(&text).map_err(|e| Error::format(path, e))?;
        m.render.validate().map_err(|e| Error::format(path, e))?;
        m.depth.validate().map_err(|e| Error::format(path, e))?;
        Ok(m)
    }
}

/// Fits the 𝓡 and 𝓓 regressors on every pixel of every sample.
pub fn train_patch_regressor(dataset: &[TrainingSample], ctx: &UqContext, lambda: f64) -> Result<TrainedPredictor> {
    if dataset.is_empty() {
        return Err(Error::Invalid("empty training set".into()));
    }
    let mut features = Vec::new();
    let mut labels_r = Vec::new();
    let mut labels_d = Vec::new();
    for s in dataset {
        features.extend(pixel_features(&s.rendered, &s.depth, ctx)?);
        labels_r.extend_from_slice(&s.oracle_r.values.data);
        labels_d.extend_from_slice(&s.oracle_d.values.data);
    }
    Ok(TrainedPredictor {
        render: fit_ridge(&features, &labels_r, &FEATURE_NAMES, lambda)?,
        depth: fit_ridge(&features, &labels_d, &FEATURE_NAMES, lambda)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn recovers_exact_linear_relation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let names = ["a", "b", "c"];
        let n = 2000;
        let mut f = Vec::new();
        let mut y = Vec::new();
        for _ in 0..n {
            let row: [f64; 3] = [rng.gen(), rng.gen::<f64>() * 4.0, rng.gen::<f64>() - 0.5];
            y.push(0.2 + 0.3 * row[0] + 0.1 * row[1] - 0.2 * row[2]);
            f.extend_from_slice(&row);
        }
        let m = fit_ridge(&f, &y, &names, DEFAULT_RIDGE).unwrap();
        let mse = f.chunks(3).zip(&y).map(|(r, t)| (m.raw(r).clamp(0.0, 1.0) - t).powi(2)).sum::<f64>() / n as f64;
        assert!(mse < 1e-8, "{mse}");
    }

    #[test]
    fn zero_labels_give_zero_model() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let f: Vec<f64> = (0..300).map(|_| rng.gen()).collect();
        let m = fit_ridge(&f, &vec![0.0; 100], &["a", "b", "c"], DEFAULT_RIDGE).unwrap();
        assert!(m.weights.iter().all(|w| w.abs() < 1e-12) && m.bias == 0.0);
    }

    #[test]
    fn singular_design_is_regularized() {
        // Two identical columns and a constant column.
        let f: Vec<f64> = (0..50).flat_map(|i| [i as f64, i as f64, 1.0]).collect();
        let y: Vec<f64> = (0..50).map(|i| i as f64 / 50.0).collect();
        let m = fit_ridge(&f, &y, &["a", "b", "c"], 0.0).unwrap();
        assert!(m.weights.iter().all(|w| w.is_finite()));
    }

    #[test]
    fn model_json_has_documented_fields() {
        let m = PatchRegressorModel {
            feature_names: vec!["a".into()],
            weights: vec![0.5],
            bias: 0.1,
            normalization: Normalization {
                mean: vec![0.0],
                std: vec![1.0],
            },
        };
        let v: serde_json::Value = serde_json::to_value(&m).unwrap();
        for key in ["feature_names", "weights", "bias", "normalization"] {
            assert!(v.get(key).is_some());
        }
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.json");
        m.save(&p).unwrap();
        assert_eq!(PatchRegressorModel::load(&p).unwrap(), m);
    }
}
