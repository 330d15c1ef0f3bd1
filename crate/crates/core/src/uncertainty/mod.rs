//! Per-pixel render uncertainty 𝓡 and depth uncertainty 𝓓.
//!
//! Three predictors share one interface: the oracle (needs ground truth and
//! is only available in simulation), a hand-tuned heuristic, and a ridge
//! regressor trained on oracle labels.

mod dataset;
mod features;
mod regressor;
pub mod ssim;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{RgbImage, ScalarMap};
use crate::render::{DepthMap, RenderedImage};

pub use dataset::{build_training_set, load_dataset, save_dataset, DatasetConfig, TrainingSample};
pub use features::{heuristic_uncertainty, pixel_features, HeuristicWeights, FEATURE_NAMES};
pub use regressor::{train_patch_regressor, DEFAULT_RIDGE, Normalization, PatchRegressorModel, TrainedPredictor};
pub use ssim::ssim_map;

/// Values in [0, 1], one per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct UncertaintyMap {
    pub values: ScalarMap,
}

impl UncertaintyMap {
    /// Clamps into [0, 1]; non-finite values become 1.
    pub fn from_map(mut values: ScalarMap) -> Self {
        for v in &mut values.data {
            *v = if v.is_finite() { v.clamp(0.0, 1.0) } else { 1.0 };
        }
        Self { values }
    }

    pub fn filled(width: usize, height: usize, v: f64) -> Self {
        Self::from_map(ScalarMap::filled(width, height, v))
    }

    pub fn dims(&self) -> (usize, usize) {
        self.values.dims()
    }

    pub fn mean(&self) -> f64 {
        self.values.mean()
    }

    pub fn scaled(&self, c: f64) -> Self {
        let mut v = self.values.clone();
        v.data.iter_mut().for_each(|x| *x *= c);
        Self { values: v }
    }
}

/// u = clamp((1 − SSIM)/2, 0, 1): zero where the rendering is right.
pub fn oracle_uncertainty(rendered: &RgbImage, gt: &RgbImage) -> Result<UncertaintyMap> {
    let mut m = ssim_map(rendered, gt)?;
    m.data.iter_mut().for_each(|s| *s = (1.0 - *s) / 2.0);
    Ok(UncertaintyMap::from_map(m))
}

/// clamp(|depth − gt_depth| / depth_scale, 0, 1).
pub fn oracle_depth_uncertainty(depth: &DepthMap, gt: &DepthMap, depth_scale: f64) -> Result<UncertaintyMap> {
    depth.depth.check_same_dims(gt.dims())?;
    if !(depth_scale > 0.0) {
        return Err(Error::Invalid("depth scale must be positive".into()));
    }
    let data = depth
        .depth
        .data
        .iter()
        .zip(&gt.depth.data)
        .map(|(a, b)| (a - b).abs() / depth_scale)
        .collect();
    Ok(UncertaintyMap::from_map(ScalarMap {
        width: depth.depth.width,
        height: depth.depth.height,
        data,
    }))
}

/// Ground-truth color and depth for one viewpoint.
#[derive(Debug, Clone, Copy)]
pub struct GroundTruthView<'a> {
    pub color: &'a RgbImage,
    pub depth: &'a DepthMap,
}

/// Settings shared by all predictors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UqContext {
    /// Scene diameter; depth is divided by it for labels and features.
    pub depth_scale: f64,
    /// Feed depth features as depth / depth_scale (true) or raw metric depth.
    pub normalize_depth_features: bool,
    pub heuristic: HeuristicWeights,
}

impl Default for UqContext {
    fn default() -> Self {
        Self {
            depth_scale: 1.0,
            normalize_depth_features: true,
            heuristic: HeuristicWeights::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PredictorKind {
    Oracle,
    Heuristic,
    Trained(Box<TrainedPredictor>),
}

impl PredictorKind {
    pub fn name(&self) -> &'static str {
        match self {
            PredictorKind::Oracle => "oracle",
            PredictorKind::Heuristic => "heuristic",
            PredictorKind::Trained(_) => "trained",
        }
    }

    pub fn needs_ground_truth(&self) -> bool {
        matches!(self, PredictorKind::Oracle)
    }

    /// (𝓡, 𝓓) for one rendered view.
    pub fn predict(
        &self,
        rendered: &RenderedImage,
        depth: &DepthMap,
        gt: Option<GroundTruthView<'_>>,
        ctx: &UqContext,
    ) -> Result<(UncertaintyMap, UncertaintyMap)> {
        match self {
            PredictorKind::Oracle => {
                let gt = gt.ok_or_else(|| Error::Invalid("oracle predictor needs ground truth".into()))?;
                Ok((
                    oracle_uncertainty(&rendered.color, gt.color)?,
                    oracle_depth_uncertainty(depth, gt.depth, ctx.depth_scale)?,
                ))
            }
            PredictorKind::Heuristic => heuristic_uncertainty(rendered, depth, ctx),
            PredictorKind::Trained(model) => model.predict(rendered, depth, ctx),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn oracle_zero_on_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut a = RgbImage::new(9, 9);
        a.data.iter_mut().for_each(|v| *v = rng.gen());
        assert!(oracle_uncertainty(&a, &a).unwrap().values.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn oracle_reaches_one_on_anticorrelated_patches() {
        // Checkerboard against its inverse: SSIM ≈ −1 up to the stabilizing constants.
        let mut a = RgbImage::new(11, 11);
        for y in 0..11 {
            for x in 0..11 {
                a.set_pixel(x, y, [((x + y) % 2) as f64; 3]);
            }
        }
        let mut b = a.clone();
        b.data.iter_mut().for_each(|v| *v = 1.0 - *v);
        let u = oracle_uncertainty(&a, &b).unwrap();
        let max = u.values.data.iter().copied().fold(0.0, f64::max);
        assert!(max > 0.99 && max <= 1.0, "{max}");
        assert_eq!(UncertaintyMap::from_map(ScalarMap::filled(1, 1, 1.0 + 1e-9)).values.data[0], 1.0);
    }

    #[test]
    fn oracle_is_affine_image_of_ssim() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut a = RgbImage::new(10, 8);
        let mut b = RgbImage::new(10, 8);
        a.data.iter_mut().for_each(|v| *v = rng.gen());
        b.data.iter_mut().for_each(|v| *v = rng.gen());
        let u = oracle_uncertainty(&a, &b).unwrap();
        let s = ssim_map(&a, &b).unwrap();
        for (x, y) in u.values.data.iter().zip(&s.data) {
            assert!((x - (1.0 - y) / 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn depth_oracle_normalizes_and_clamps() {
        let a = DepthMap {
            depth: ScalarMap::from_fn(3, 1, |x, _| x as f64),
        };
        let b = DepthMap {
            depth: ScalarMap::filled(3, 1, 0.0),
        };
        let u = oracle_depth_uncertainty(&a, &b, 1.5).unwrap();
        assert_eq!(u.values.data, vec![0.0, 1.0 / 1.5, 1.0]);
    }

    #[test]
    fn oracle_predictor_requires_ground_truth() {
        let r = RenderedImage {
            color: RgbImage::new(2, 2),
            accum_alpha: ScalarMap::new(2, 2),
        };
        let d = DepthMap {
            depth: ScalarMap::new(2, 2),
        };
        assert!(PredictorKind::Oracle.predict(&r, &d, None, &UqContext::default()).is_err());
    }
}
