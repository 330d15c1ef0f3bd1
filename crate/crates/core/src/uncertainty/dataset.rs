//! Self-supervised training data: fit models of deliberately varying quality
//! from few or many views, render held-out views, and label them with oracle
//! uncertainty against the ground truth.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{oracle_depth_uncertainty, oracle_uncertainty, UncertaintyMap, UqContext};
use crate::error::{Error, Result};
use crate::image::{RgbImage, ScalarMap};
use crate::optim::{fit, init_scene, OptimConfig, TrainState};
use crate::render::{render_with, DepthMap, RenderedImage};
use crate::rng::mix64;
use crate::scene::{sample_sphere_viewpoints, Camera, Intrinsics, Scene};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    pub train_view_counts: Vec<usize>,
    /// Iterations per quality-ladder fit.
    pub iters: u64,
    pub n_init: usize,
    /// Half-extents of the initialization box.
    pub bounds: [f64; 3],
    /// Radius of the sphere the training views are placed on.
    pub radius: f64,
    /// Also fit each rung from views packed into one spherical cap, leaving
    /// the far side of the object unobserved.
    pub clustered: bool,
    pub optim: OptimConfig,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            train_view_counts: vec![2, 4, 8, 16],
            iters: 1500,
            n_init: 300,
            bounds: [1.0; 3],
            radius: 3.5,
            clustered: true,
            optim: OptimConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSample {
    pub train_views: usize,
    pub holdout_index: usize,
    pub rendered: RenderedImage,
    pub depth: DepthMap,
    pub oracle_r: UncertaintyMap,
    pub oracle_d: UncertaintyMap,
}

pub fn build_training_set(
    gt_scene: &Scene,
    holdout: &[Camera],
    seed: u64,
    cfg: &DatasetConfig,
    ctx: &UqContext,
) -> Result<Vec<TrainingSample>> {
    if holdout.is_empty() {
        return Ok(Vec::new());
    }
    if cfg.train_view_counts.iter().any(|&c| c < 2) {
        return Err(Error::Config("training view counts must be >= 2".into()));
    }
    let opts = &cfg.optim.render;
    let intr = holdout[0].intrinsics();
    let gt_holdout = holdout
        .iter()
        .map(|cam| render_with(gt_scene, cam, opts))
        .collect::<Result<Vec<_>>>()?;
    let mut out = Vec::new();
    let mut rungs = Vec::new();
    for (rung, &count) in cfg.train_view_counts.iter().enumerate() {
        rungs.push((count, false, mix64(seed ^ (rung as u64 + 1))));
        if cfg.clustered {
            rungs.push((count, true, mix64(seed ^ (rung as u64 + 1) ^ 0xc1a5_7e4e_d000_0000)));
        }
    }
    for (count, clustered, rung_seed) in rungs {
        let views = if clustered {
            cap_views(count, cfg.radius, rung_seed, intr)?
        } else {
            sample_sphere_viewpoints(count, cfg.radius, [0.0; 3], rung_seed, intr)?.cameras
        };
        let scene = init_scene(cfg.bounds, cfg.n_init, rung_seed, gt_scene.background_color)?;
        let mut state = TrainState::new(scene, rung_seed);
        for cam in views {
            let (img, _) = render_with(gt_scene, &cam, opts)?;
            state.add_view(cam, img.color)?;
        }
        fit(&mut state, &cfg.optim, cfg.iters)?;
        for (h, cam) in holdout.iter().enumerate() {
            let (rendered, depth) = render_with(&state.scene, cam, opts)?;
            let (gt_img, gt_depth) = &gt_holdout[h];
            let oracle_r = oracle_uncertainty(&rendered.color, &gt_img.color)?;
            let oracle_d = oracle_depth_uncertainty(&depth, gt_depth, ctx.depth_scale)?;
            out.push(TrainingSample {
                train_views: count,
                holdout_index: h,
                rendered,
                depth,
                oracle_r,
                oracle_d,
            });
        }
    }
    Ok(out)
}

/// The `count` views of a 4·count lattice closest to a seeded direction.
fn cap_views(count: usize, radius: f64, seed: u64, intr: Intrinsics) -> Result<Vec<Camera>> {
    let lattice = sample_sphere_viewpoints(4 * count, radius, [0.0; 3], seed, intr)?.cameras;
    let axis = lattice[(mix64(seed) % lattice.len() as u64) as usize].center();
    let mut order: Vec<(f64, usize)> = lattice.iter().enumerate().map(|(i, c)| (-c.center().dot(&axis), i)).collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    Ok(order[..count].iter().map(|&(_, i)| lattice[i].clone()).collect())
}

#[derive(Debug, Serialize, Deserialize)]
struct IndexEntry {
    train_views: usize,
    holdout_index: usize,
    color: String,
    alpha: String,
    depth: String,
    oracle_r: String,
    oracle_d: String,
}

/// Writes every map as a float32 dump plus `index.json`.
pub fn save_dataset(dir: &Path, samples: &[TrainingSample]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut index = Vec::with_capacity(samples.len());
    for (i, s) in samples.iter().enumerate() {
        let name = |k: &str| format!("sample_{i:04}_{k}.raw");
        let entry = IndexEntry {
            train_views: s.train_views,
            holdout_index: s.holdout_index,
            color: name("color"),
            alpha: name("alpha"),
            depth: name("depth"),
            oracle_r: name("oracle_r"),
            oracle_d: name("oracle_d"),
        };
        s.rendered.color.write_raw(&dir.join(&entry.color))?;
        s.rendered.accum_alpha.write_raw(&dir.join(&entry.alpha))?;
        s.depth.depth.write_raw(&dir.join(&entry.depth))?;
        s.oracle_r.values.write_raw(&dir.join(&entry.oracle_r))?;
        s.oracle_d.values.write_raw(&dir.join(&entry.oracle_d))?;
        index.push(entry);
    }
    let path = dir.join("index.json");
    fs::write(&path, serde_json::to_string_pretty(&index).expect("index serializes")).map_err(|e| Error::io(&path, e))
}

pub fn load_dataset(dir: &Path) -> Result<Vec<TrainingSample>> {
    let path = dir.join("index.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let index: Vec<IndexEntry> = serde_json::from_str(&text).map_err(|e| Error::format(&path, e))?;
    index
        .into_iter()
        .map(|e| {
            Ok(TrainingSample {
                train_views: e.train_views,
                holdout_index: e.holdout_index,
                rendered: RenderedImage {
                    color: RgbImage::read_raw(&dir.join(&e.color))?,
                    accum_alpha: ScalarMap::read_raw(&dir.join(&e.alpha))?,
                },
                depth: DepthMap {
                    depth: ScalarMap::read_raw(&dir.join(&e.depth))?,
                },
                oracle_r: UncertaintyMap::from_map(ScalarMap::read_raw(&dir.join(&e.oracle_r))?),
                oracle_d: UncertaintyMap::from_map(ScalarMap::read_raw(&dir.join(&e.oracle_d))?),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cap_views_are_packed_on_one_side() {
        let intr = Intrinsics::from_fov(50.0, 16, 16);
        let views = cap_views(4, 3.5, 9, intr).unwrap();
        assert_eq!(views.len(), 4);
        let axis = views.iter().map(|c| c.center().normalize()).sum::<nalgebra::Vector3<f64>>().normalize();
        for c in &views {
            assert!((c.center().norm() - 3.5).abs() < 1e-9);
            assert!(c.center().normalize().dot(&axis) > 0.5);
        }
        assert_eq!(views, cap_views(4, 3.5, 9, intr).unwrap());
    }

    #[test]
    fn view_counts_below_two_are_rejected() {
        let scene = Scene::new(Vec::new(), [0.0; 3]);
        let cam = cap_views(1, 3.5, 1, Intrinsics::from_fov(50.0, 8, 8)).unwrap();
        let cfg = DatasetConfig {
            train_view_counts: vec![1],
            ..Default::default()
        };
        assert!(build_training_set(&scene, &cam, 0, &cfg, &UqContext::default()).is_err());
    }
}
