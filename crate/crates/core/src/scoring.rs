//! Scalar view scores from per-pixel uncertainty.
//!
//! ```text
//! l_blend  = Σ D(u,v) · 𝓡(u,v)
//! l_blend* = Σ D(u,v) · 𝓡(u,v) · (1 − 𝓓(u,v))
//! l        = l_blend + λ0·l_blend* + λ1·Σ𝓡 + λ2·Σ𝓓
//! ```
//!
//! D is the composited depth divided by a depth scale (the scene diameter by
//! default, 1 for raw depth). Sums run row-major in a fixed order so scores
//! are bit-reproducible.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::render::DepthMap;
use crate::uncertainty::UncertaintyMap;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScoreWeights {
    pub lambda0: f64,
    pub lambda1: f64,
    pub lambda2: f64,
}

impl Default for ScoreWeights {
    fn default() -> Self {
        Self {
            lambda0: 1.0,
            lambda1: 0.1,
            lambda2: 0.1,
        }
    }
}

impl ScoreWeights {
    pub fn validate(&self) -> Result<()> {
        if [self.lambda0, self.lambda1, self.lambda2].iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Config("score weights must be finite and non-negative".into()));
        }
        Ok(())
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            lambda0: self.lambda0 * c,
            lambda1: self.lambda1 * c,
            lambda2: self.lambda2 * c,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlendMode {
    Linear,
    Squared,
}

/// Which terms of the total score are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreVariant {
    Full,
    /// 𝓓 ≡ 0 everywhere.
    NoDepthUq,
    /// Only the global regularizers λ1·Σ𝓡 + λ2·Σ𝓓 (λ1 forced positive).
    NoDepthBlending,
    /// Both blending terms use D².
    DepthSquared,
    /// l_blend alone.
    BlendOnly,
}

impl ScoreVariant {
    pub fn name(self) -> &'static str {
        match self {
            ScoreVariant::Full => "full",
            ScoreVariant::NoDepthUq => "no_depth_uq",
            ScoreVariant::NoDepthBlending => "no_depth_blending",
            ScoreVariant::DepthSquared => "depth_squared",
            ScoreVariant::BlendOnly => "blend_only",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ViewScore {
    pub view_id: usize,
    pub l_blend: f64,
    pub l_blend_star: f64,
    pub sum_r: f64,
    pub sum_d: f64,
    pub total: f64,
}

fn check(depth: &DepthMap, r: &UncertaintyMap, d: Option<&UncertaintyMap>) -> Result<()> {
    r.values.check_same_dims(depth.dims())?;
    if let Some(d) = d {
        d.values.check_same_dims(depth.dims())?;
    }
    if depth.depth.data.iter().any(|v| *v < 0.0 || !v.is_finite()) {
        return Err(Error::Invalid("depth map has negative or non-finite values".into()));
    }
    Ok(())
}

#[inline]
fn weight(depth: f64, scale: f64, mode: BlendMode) -> f64 {
    let d = depth / scale;
    match mode {
        BlendMode::Linear => d,
        BlendMode::Squared => d * d,
    }
}

/// Σ D·𝓡 (or Σ D²·𝓡).
pub fn blend(depth: &DepthMap, r: &UncertaintyMap, mode: BlendMode, depth_scale: f64) -> Result<f64> {
    check(depth, r, None)?;
    let mut acc = 0.0;
    for (dv, rv) in depth.depth.data.iter().zip(&r.values.data) {
        acc += weight(*dv, depth_scale, mode) * rv;
    }
    Ok(acc)
}

/// Σ D·𝓡·(1 − 𝓓).
pub fn blend_reweighted(
    depth: &DepthMap,
    r: &UncertaintyMap,
    d_unc: &UncertaintyMap,
    mode: BlendMode,
    depth_scale: f64,
) -> Result<f64> {
    check(depth, r, Some(d_unc))?;
    let mut acc = 0.0;
    for ((dv, rv), du) in depth.depth.data.iter().zip(&r.values.data).zip(&d_unc.values.data) {
        acc += weight(*dv, depth_scale, mode) * rv * (1.0 - du);
    }
    Ok(acc)
}

fn sum(u: &UncertaintyMap) -> f64 {
    let mut acc = 0.0;
    for v in &u.values.data {
        acc += v;
    }
    acc
}

pub fn total_score(
    depth: &DepthMap,
    r: &UncertaintyMap,
    d_unc: &UncertaintyMap,
    w: &ScoreWeights,
    depth_scale: f64,
) -> Result<ViewScore> {
    score_view(ScoreVariant::Full, depth, r, d_unc, w, depth_scale, 0)
}

/// Total score under one of the ablation variants.
pub fn score_view(
    variant: ScoreVariant,
    depth: &DepthMap,
    r: &UncertaintyMap,
    d_unc: &UncertaintyMap,
    w: &ScoreWeights,
    depth_scale: f64,
    view_id: usize,
) -> Result<ViewScore> {
    check(depth, r, Some(d_unc))?;
    let mode = if variant == ScoreVariant::DepthSquared {
        BlendMode::Squared
    } else {
        BlendMode::Linear
    };
    let zero_d;
    let d_eff = if variant == ScoreVariant::NoDepthUq {
        let (width, height) = d_unc.dims();
        zero_d = UncertaintyMap::filled(width, height, 0.0);
        &zero_d
    } else {
        d_unc
    };
    let l_blend = blend(depth, r, mode, depth_scale)?;
    let l_blend_star = blend_reweighted(depth, r, d_eff, mode, depth_scale)?;
    let sum_r = sum(r);
    let sum_d = sum(d_eff);
    let total = match variant {
        ScoreVariant::NoDepthBlending => {
            let l1 = if w.lambda1 > 0.0 { w.lambda1 } else { 1.0 };
            l1 * sum_r + w.lambda2 * sum_d
        }
        ScoreVariant::BlendOnly => l_blend,
        _ => l_blend + w.lambda0 * l_blend_star + w.lambda1 * sum_r + w.lambda2 * sum_d,
    };
    Ok(ViewScore {
        view_id,
        l_blend,
        l_blend_star,
        sum_r,
        sum_d,
        total,
    })
}

pub const SCORE_CSV_HEADER: &str = "round,view_id,l_blend,l_blend_star,sum_R,sum_D,total,selected_flag";

/// One CSV row per score; floats use shortest round-trip formatting.
pub fn scores_csv_rows(out: &mut String, round: usize, scores: &[ViewScore], selected: usize) {
    for s in scores {
        let _ = writeln!(
            out,
            "{round},{},{},{},{},{},{},{}",
            s.view_id,
            s.l_blend,
            s.l_blend_star,
            s.sum_r,
            s.sum_d,
            s.total,
            u8::from(s.view_id == selected)
        );
    }
}
