//! Forward splatting: projection, depth sorting and front-to-back compositing
//! of color and depth.
//!
//! Per pixel, with splats sorted by ascending camera depth:
//!
//! ```text
//! color = Σᵢ cᵢ αᵢ Tᵢ + T_final · background
//! depth = Σᵢ zᵢ αᵢ Tᵢ            (Tᵢ = Π_{n<i} (1 − αₙ))
//! ```
//!
//! where αᵢ = min(α_max, oᵢ · exp(−½ dᵀ Σ₂⁻¹ d)) inside the 3σ ellipse and 0
//! outside it.

mod backward;
mod project;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::image::{RgbImage, ScalarMap};
use crate::scene::{Camera, Scene};

pub use backward::{render_backward, GaussianGrad, PixelGrads};
pub use project::{perspective_jacobian, project_gaussian, ProjectedFootprint, Splat2D, CUTOFF_SQ};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderOptions {
    /// Added to the diagonal of every screen-space covariance (pixels²).
    pub eps_cov: f64,
    pub alpha_max: f64,
    /// Compositing stops once transmittance falls below this.
    pub t_min: f64,
    pub near_plane: f64,
    /// Divide composited depth by accumulated alpha where it is positive.
    pub normalize_depth: bool,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self {
            eps_cov: 0.3,
            alpha_max: 0.99,
            t_min: 1e-4,
            near_plane: 0.05,
            normalize_depth: false,
        }
    }
}

/// Composited color plus per-pixel accumulated opacity.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedImage {
    pub color: RgbImage,
    pub accum_alpha: ScalarMap,
}

/// Opacity-composited camera-space depth. Zero where nothing was hit.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub depth: ScalarMap,
}

impl RenderedImage {
    pub fn dims(&self) -> (usize, usize) {
        self.color.dims()
    }
}

impl DepthMap {
    pub fn dims(&self) -> (usize, usize) {
        self.depth.dims()
    }
}

pub(crate) const TILE: usize = 8;

/// Projected splats in compositing order plus per-tile index lists.
pub(crate) struct Projection {
    pub splats: Vec<Splat2D>,
    tiles_x: usize,
    tiles: Vec<Vec<u32>>,
}

impl Projection {
    pub fn new(scene: &Scene, cam: &Camera, opts: &RenderOptions) -> Self {
        let splats = project_scene(scene, cam, opts);
        let tiles_x = cam.width.div_ceil(TILE);
        let tiles_y = cam.height.div_ceil(TILE);
        let mut tiles = vec![Vec::new(); tiles_x * tiles_y];
        for (k, s) in splats.iter().enumerate() {
            for ty in s.y_range.0 / TILE..=s.y_range.1 / TILE {
                for tx in s.x_range.0 / TILE..=s.x_range.1 / TILE {
                    tiles[ty * tiles_x + tx].push(k as u32);
                }
            }
        }
        Self {
            splats,
            tiles_x,
            tiles,
        }
    }

    /// Candidate splats for pixel (x, y), already in compositing order.
    #[inline]
    pub fn candidates(&self, x: usize, y: usize) -> &[u32] {
        &self.tiles[(y / TILE) * self.tiles_x + x / TILE]
    }

    /// Walks the compositing sequence of one pixel, calling `visit(k, alpha, T)`
    /// for every splat with non-zero alpha. Returns the final transmittance.
    #[inline]
    pub fn composite(
        &self,
        x: usize,
        y: usize,
        opts: &RenderOptions,
        mut visit: impl FnMut(usize, f64, f64),
    ) -> f64 {
        let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
        let mut t = 1.0;
        for &k in self.candidates(x, y) {
            let s = &self.splats[k as usize];
            if x < s.x_range.0 || x > s.x_range.1 || y < s.y_range.0 || y > s.y_range.1 {
                continue;
            }
            let (q, _, _) = s.mahalanobis_sq(px, py);
            if q > CUTOFF_SQ {
                continue;
            }
            let alpha = (s.base_opacity * (-0.5 * q).exp()).min(opts.alpha_max);
            if alpha <= 0.0 {
                continue;
            }
            visit(k as usize, alpha, t);
            t *= 1.0 - alpha;
            if t < opts.t_min {
                break;
            }
        }
        t
    }
}

/// Projects every Gaussian and sorts the survivors by (depth, scene index).
pub fn project_scene(scene: &Scene, cam: &Camera, opts: &RenderOptions) -> Vec<Splat2D> {
    let mut splats: Vec<Splat2D> = scene
        .gaussians
        .iter()
        .enumerate()
        .filter_map(|(i, g)| project_gaussian(g, i, cam, opts))
        .collect();
    splats.sort_by(|a, b| a.depth.total_cmp(&b.depth).then(a.index.cmp(&b.index)));
    splats
}

pub fn render(scene: &Scene, cam: &Camera) -> Result<(RenderedImage, DepthMap)> {
    render_with(scene, cam, &RenderOptions::default())
}

pub fn render_with(scene: &Scene, cam: &Camera, opts: &RenderOptions) -> Result<(RenderedImage, DepthMap)> {
    scene.check_finite()?;
    let proj = Projection::new(scene, cam, opts);
    let (w, h) = (cam.width, cam.height);
    let bg = scene.background_color;
    let mut color = RgbImage::new(w, h);
    let mut accum = ScalarMap::new(w, h);
    let mut depth = ScalarMap::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let mut c = [0.0; 3];
            let mut d = 0.0;
            let mut a = 0.0;
            let t = proj.composite(x, y, opts, |k, alpha, t| {
                let s = &proj.splats[k];
                let wgt = alpha * t;
                c[0] += wgt * s.color[0];
                c[1] += wgt * s.color[1];
                c[2] += wgt * s.color[2];
                d += wgt * s.depth;
                a += wgt;
            });
            for ch in 0..3 {
                c[ch] += t * bg[ch];
            }
            if opts.normalize_depth && a > 0.0 {
                d /= a;
            }
            color.set_pixel(x, y, c);
            accum.set(x, y, a);
            depth.set(x, y, d);
        }
    }
    Ok((
        RenderedImage {
            color,
            accum_alpha: accum,
        },
        DepthMap { depth },
    ))
}

/// Fraction of the listed Gaussians whose centers are visible from `cam`:
/// in frame, in front of the camera, and with less than half their line of
/// sight covered by nearer splats.
pub fn visible_fraction(scene: &Scene, cam: &Camera, indices: &[usize], opts: &RenderOptions) -> f64 {
    if indices.is_empty() {
        return 0.0;
    }
    let splats = project_scene(scene, cam, opts);
    let mut visible = 0usize;
    for &i in indices {
        let p = cam.world_to_camera(&scene.gaussians[i].mean_vec());
        if p.z <= opts.near_plane {
            continue;
        }
        let (u, v) = cam.project(&p);
        if u < 0.0 || v < 0.0 || u >= cam.width as f64 || v >= cam.height as f64 {
            continue;
        }
        let (x, y) = (u.floor() as usize, v.floor() as usize);
        let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
        let mut t = 1.0;
        for s in splats.iter().filter(|s| s.depth < p.z && s.index != i) {
            let (q, _, _) = s.mahalanobis_sq(px, py);
            if q <= CUTOFF_SQ {
                t *= 1.0 - (s.base_opacity * (-0.5 * q).exp()).min(opts.alpha_max);
            }
        }
        if 1.0 - t < 0.5 {
            visible += 1;
        }
    }
    visible as f64 / indices.len() as f64
}
