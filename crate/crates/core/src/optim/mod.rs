//! Gradient-descent fitting of a Gaussian scene to posed images, with views
//! appended to the training set while the fit is running.

mod adam;
mod loss;

use std::fs;
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::RgbImage;
use crate::render::{GaussianGrad, RenderOptions};
use crate::rng::{derive_seed, indexed, stream_rng, Stream};
use crate::scene::{normalize_quat, Camera, Gaussian3D, Scene};

pub use adam::AdamState;
pub use loss::{loss_gradients, photometric_loss, photometric_loss_and_grad, view_loss_and_grad};

/// Number of scalar parameters per Gaussian: mean 3, scales 3, quaternion 4,
/// color 3, opacity 1.
pub const PARAMS_PER_GAUSSIAN: usize = GaussianGrad::LEN;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DensifyConfig {
    pub enabled: bool,
    pub interval: u64,
    /// Mean positional-gradient norm above which a Gaussian is cloned.
    pub grad_threshold: f64,
    /// Gaussians whose opacity falls below this are removed.
    pub prune_opacity: f64,
    pub max_gaussians: usize,
}

impl Default for DensifyConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            interval: 100,
            grad_threshold: 2e-4,
            prune_opacity: 0.005,
            max_gaussians: 2000,
        }
    }
}

/// Adam with one step size per parameter group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimConfig {
    pub lr_mean: f64,
    pub lr_scales: f64,
    pub lr_rotation: f64,
    pub lr_color: f64,
    pub lr_opacity: f64,
    /// The mean step size decays log-linearly to `lr_mean * lr_mean_final_ratio`
    /// at `total_iters`.
    pub lr_mean_final_ratio: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub total_iters: u64,
    pub lambda_ssim: f64,
    pub scale_min: f64,
    /// Opacity is kept in [eps, 1 − eps].
    pub opacity_eps: f64,
    pub densify: DensifyConfig,
    pub render: RenderOptions,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            lr_mean: 0.004,
            lr_scales: 0.002,
            lr_rotation: 0.01,
            lr_color: 0.01,
            lr_opacity: 0.02,
            lr_mean_final_ratio: 0.1,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-10,
            total_iters: 3000,
            lambda_ssim: 0.2,
            scale_min: 1e-3,
            opacity_eps: 1e-3,
            densify: DensifyConfig::default(),
            render: RenderOptions::default(),
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        let lrs = [self.lr_mean, self.lr_scales, self.lr_rotation, self.lr_color, self.lr_opacity];
        if lrs.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.lambda_ssim) {
            return Err(Error::Config("lambda_ssim must be in [0,1]".into()));
        }
        if !(self.scale_min > 0.0) || !(self.opacity_eps > 0.0 && self.opacity_eps < 0.5) {
            return Err(Error::Config("scale_min and opacity_eps out of range".into()));
        }
        if self.densify.enabled && self.densify.interval == 0 {
            return Err(Error::Config("densify interval must be positive".into()));
        }
        Ok(())
    }

    fn mean_lr_at(&self, iteration: u64) -> f64 {
        let t = (iteration as f64 / self.total_iters.max(1) as f64).min(1.0);
        self.lr_mean * self.lr_mean_final_ratio.powf(t)
    }
}

/// One posed ground-truth image in the training set.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainView {
    pub camera: Camera,
    pub image: RgbImage,
}

/// Mutable fitting state. Views are only ever appended.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub scene: Scene,
    pub iteration: u64,
    pub active_views: Vec<TrainView>,
    pub rng_seed: u64,
    pub adam: AdamState,
    pub initial_loss: Option<f64>,
    densify_accum: Vec<f64>,
    densify_count: Vec<u32>,
    diverged_steps: u32,
}

/// Losses observed during one `fit` call.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FitReport {
    pub losses: Vec<f64>,
}

impl TrainState {
    pub fn new(scene: Scene, rng_seed: u64) -> Self {
        let n = scene.len();
        Self {
            adam: AdamState::new(n * PARAMS_PER_GAUSSIAN),
            scene,
            iteration: 0,
            active_views: Vec::new(),
            rng_seed,
            initial_loss: None,
            densify_accum: vec![0.0; n],
            densify_count: vec![0; n],
            diverged_steps: 0,
        }
    }

    pub fn add_view(&mut self, camera: Camera, image: RgbImage) -> Result<()> {
        if (camera.width, camera.height) != image.dims() {
            return Err(Error::dims((camera.width, camera.height), image.dims()));
        }
        self.active_views.push(TrainView { camera, image });
        Ok(())
    }

    /// View trained at `iteration`; a pure function of (seed, iteration, view count).
    pub fn view_for_iteration(&self, iteration: u64) -> usize {
        let seed = derive_seed(self.rng_seed, Stream::Optimizer);
        (indexed(seed, iteration) % self.active_views.len() as u64) as usize
    }

    /// Writes the scene JSON plus a sidecar `{iteration, seed, config_hash}`.
    pub fn save_checkpoint(&self, scene_path: &Path, config_hash: &str) -> Result<()> {
        let meta = CheckpointMeta {
            iteration: self.iteration,
            seed: self.rng_seed,
            config_hash: config_hash.to_string(),
        };
        save_checkpoint(&self.scene, &meta, scene_path)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub iteration: u64,
    pub seed: u64,
    pub config_hash: String,
}

pub fn sidecar_path(scene_path: &Path) -> std::path::PathBuf {
    scene_path.with_extension("meta.json")
}

pub fn save_checkpoint(scene: &Scene, meta: &CheckpointMeta, scene_path: &Path) -> Result<()> {
    scene.save(scene_path)?;
    let side = sidecar_path(scene_path);
    fs::write(&side, serde_json::to_string_pretty(meta).expect("meta serializes")).map_err(|e| Error::io(&side, e))
}

pub fn load_checkpoint(scene_path: &Path) -> Result<(Scene, CheckpointMeta)> {
    let scene = Scene::load(scene_path)?;
    let side = sidecar_path(scene_path);
    let text = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
    let meta = serde_json::from_str(&text).map_err(|e| Error::format(&side, e))?;
    Ok((scene, meta))
}

/// Flat parameter `idx` of a Gaussian, in the layout of [`GaussianGrad`].
pub fn param_mut(g: &mut Gaussian3D, idx: usize, f: impl FnOnce(&mut f64)) {
    match idx {
        0..=2 => f(&mut g.mean[idx]),
        3..=5 => f(&mut g.scales[idx - 3]),
        6..=9 => f(&mut g.rotation[idx - 6]),
        10..=12 => f(&mut g.color[idx - 10]),
        13 => f(&mut g.opacity),
        _ => panic!("parameter index {idx} out of range"),
    }
}

fn flatten(scene: &Scene) -> Vec<f64> {
    let mut out = Vec::with_capacity(scene.len() * PARAMS_PER_GAUSSIAN);
    for g in &scene.gaussians {
        out.extend_from_slice(&g.mean);
        out.extend_from_slice(&g.scales);
        out.extend_from_slice(&g.rotation);
        out.extend_from_slice(&g.color);
        out.push(g.opacity);
    }
    out
}

fn unflatten(scene: &mut Scene, flat: &[f64]) {
    for (g, p) in scene.gaussians.iter_mut().zip(flat.chunks(PARAMS_PER_GAUSSIAN)) {
        g.mean.copy_from_slice(&p[0..3]);
        g.scales.copy_from_slice(&p[3..6]);
        g.rotation.copy_from_slice(&p[6..10]);
        g.color.copy_from_slice(&p[10..13]);
        g.opacity = p[13];
    }
}

/// Projects every Gaussian back onto its constraint set.
pub fn project_constraints(scene: &mut Scene, config: &OptimConfig) {
    let eps = config.opacity_eps;
    for g in &mut scene.gaussians {
        for s in &mut g.scales {
            *s = s.max(config.scale_min);
        }
        for c in &mut g.color {
            *c = c.clamp(0.0, 1.0);
        }
        g.opacity = g.opacity.clamp(eps, 1.0 - eps);
        g.rotation = normalize_quat(g.rotation);
    }
}

/// Runs gradient steps until `state.iteration == until_iter`, one training view
/// per step.
pub fn fit(state: &mut TrainState, config: &OptimConfig, until_iter: u64) -> Result<FitReport> {
    let mut report = FitReport::default();
    if until_iter <= state.iteration {
        return Ok(report);
    }
    if state.active_views.is_empty() {
        return Err(Error::Invalid("fit needs at least one training view".into()));
    }
    config.validate()?;
    let lr_groups = [
        (0..3, config.lr_mean),
        (3..6, config.lr_scales),
        (6..10, config.lr_rotation),
        (10..13, config.lr_color),
        (13..14, config.lr_opacity),
    ];
    let mut group_of = [0.0; PARAMS_PER_GAUSSIAN];
    for (range, lr) in lr_groups {
        for i in range {
            group_of[i] = lr;
        }
    }
    while state.iteration < until_iter {
        let view = state.view_for_iteration(state.iteration);
        let (loss, grads) = loss_gradients(state, &[view], config)?;
        report.losses.push(loss);
        check_divergence(state, loss)?;

        let grad_flat: Vec<f64> = grads.iter().flat_map(|g| g.to_array()).collect();
        let mut params = flatten(&state.scene);
        let mean_lr = config.mean_lr_at(state.iteration);
        state.adam.update(
            &mut params,
            &grad_flat,
            |i| {
                let k = i % PARAMS_PER_GAUSSIAN;
                if k < 3 {
                    mean_lr
                } else {
                    group_of[k]
                }
            },
            config.beta1,
            config.beta2,
            config.adam_eps,
        );
        unflatten(&mut state.scene, &params);
        project_constraints(&mut state.scene, config);
        state.iteration += 1;

        if config.densify.enabled {
            for (i, g) in grads.iter().enumerate() {
                state.densify_accum[i] += g.mean.iter().map(|v| v * v).sum::<f64>().sqrt();
                state.densify_count[i] += 1;
            }
            if state.iteration % config.densify.interval == 0 {
                densify_and_prune(state, config);
            }
        }
    }
    Ok(report)
}

fn check_divergence(state: &mut TrainState, loss: f64) -> Result<()> {
    if !loss.is_finite() {
        return Err(Error::Diverged {
            iteration: state.iteration,
            loss,
            initial: state.initial_loss.unwrap_or(f64::NAN),
            steps: state.diverged_steps,
        });
    }
    let initial = *state.initial_loss.get_or_insert(loss);
    if loss > 10.0 * initial {
        state.diverged_steps += 1;
        if state.diverged_steps >= 200 {
            return Err(Error::Diverged {
                iteration: state.iteration,
                loss,
                initial,
                steps: state.diverged_steps,
            });
        }
    } else {
        state.diverged_steps = 0;
    }
    Ok(())
}

/// Clone Gaussians with a large mean positional gradient, drop nearly
/// transparent ones. Clones are appended so existing indices keep their order.
fn densify_and_prune(state: &mut TrainState, config: &OptimConfig) {
    let d = &config.densify;
    let n = state.scene.len();
    let mut clones = Vec::new();
    for i in 0..n {
        let count = state.densify_count[i].max(1) as f64;
        if state.densify_accum[i] / count > d.grad_threshold && n + clones.len() < d.max_gaussians {
            let mut g = state.scene.gaussians[i].clone();
            // Nudge the copy along its largest axis so the pair can separate.
            let r = g.rotation_matrix();
            let (axis, s) = g
                .scales
                .iter()
                .enumerate()
                .fold((0, 0.0), |acc, (k, &v)| if v > acc.1 { (k, v) } else { acc });
            for k in 0..3 {
                g.mean[k] += 0.5 * s * r[(k, axis)];
            }
            g.scales = g.scales.map(|v| (v * 0.8).max(config.scale_min));
            clones.push(g);
        }
    }
    state.scene.gaussians.extend(clones);
    let total = state.scene.len();
    state.adam.grow(total * PARAMS_PER_GAUSSIAN);
    let keep: Vec<bool> = state
        .scene
        .gaussians
        .iter()
        .map(|g| g.opacity >= d.prune_opacity)
        .collect();
    if keep.iter().any(|k| !k) && keep.iter().any(|k| *k) {
        let mut it = keep.iter();
        state.scene.gaussians.retain(|_| *it.next().unwrap());
        state.adam.retain_blocks(PARAMS_PER_GAUSSIAN, &keep);
    }
    let n = state.scene.len();
    state.densify_accum = vec![0.0; n];
    state.densify_count = vec![0; n];
}

/// Uniformly placed gray isotropic Gaussians inside the box with half-extents `bounds`.
pub fn init_scene(bounds: [f64; 3], n_init: usize, seed: u64, background: [f64; 3]) -> Result<Scene> {
    if n_init == 0 {
        return Err(Error::Invalid("n_init must be >= 1".into()));
    }
    let mut rng = stream_rng(seed, Stream::Init);
    let diameter = 2.0 * bounds.iter().map(|b| b * b).sum::<f64>().sqrt();
    let scale = diameter / (n_init as f64).cbrt() / 4.0;
    let gaussians = (0..n_init)
        .map(|_| {
            let mean = [
                rng.gen_range(-bounds[0]..=bounds[0]),
                rng.gen_range(-bounds[1]..=bounds[1]),
                rng.gen_range(-bounds[2]..=bounds[2]),
            ];
            Gaussian3D::isotropic(mean, scale, [0.5; 3], 0.1)
        })
        .collect();
    Ok(Scene::new(gaussians, background))
}
