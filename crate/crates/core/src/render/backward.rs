//! Reverse-mode derivative of the forward compositor with respect to every
//! Gaussian parameter, given per-pixel upstream gradients.

use nalgebra::{Matrix2, Matrix3, Vector3};

use super::{Projection, RenderOptions, CUTOFF_SQ};
use crate::error::{Error, Result};
use crate::scene::{normalize_quat, quat_to_matrix, Camera, Scene};

/// Gradient laid out like [`crate::scene::Gaussian3D`]. The rotation entry is
/// taken through quaternion normalization, so at a unit quaternion it lies in
/// the sphere's tangent space.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GaussianGrad {
    pub mean: [f64; 3],
    pub scales: [f64; 3],
    pub rotation: [f64; 4],
    pub color: [f64; 3],
    pub opacity: f64,
}

impl GaussianGrad {
    pub const LEN: usize = 14;

    pub fn to_array(&self) -> [f64; Self::LEN] {
        let mut out = [0.0; Self::LEN];
        out[0..3].copy_from_slice(&self.mean);
        out[3..6].copy_from_slice(&self.scales);
        out[6..10].copy_from_slice(&self.rotation);
        out[10..13].copy_from_slice(&self.color);
        out[13] = self.opacity;
        out
    }

    pub fn norm_sq(&self) -> f64 {
        self.to_array().iter().map(|v| v * v).sum()
    }

    pub fn check_finite(&self, index: usize) -> Result<()> {
        let names = ["mean", "scales", "rotation", "color", "opacity"];
        let a = self.to_array();
        let spans = [0..3, 3..6, 6..10, 10..13, 13..14];
        for (name, span) in names.iter().zip(spans) {
            if a[span].iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { index, field: name });
            }
        }
        Ok(())
    }

    pub fn add_scaled(&mut self, other: &GaussianGrad, s: f64) {
        for k in 0..3 {
            self.mean[k] += s * other.mean[k];
            self.scales[k] += s * other.scales[k];
            self.color[k] += s * other.color[k];
        }
        for k in 0..4 {
            self.rotation[k] += s * other.rotation[k];
        }
        self.opacity += s * other.opacity;
    }
}

/// Upstream gradients per pixel: color is interleaved RGB, the others one value
/// per pixel. Missing entries are treated as zero.
#[derive(Debug, Clone, Copy)]
pub struct PixelGrads<'a> {
    pub color: &'a [f64],
    pub depth: Option<&'a [f64]>,
    pub alpha: Option<&'a [f64]>,
}

#[derive(Clone, Copy, Default)]
struct SplatAccum {
    mean2d: [f64; 2],
    conic: [f64; 3],
    opacity: f64,
    color: [f64; 3],
    depth: f64,
}

#[derive(Clone, Copy)]
struct Contribution {
    k: usize,
    alpha: f64,
    t: f64,
}

pub fn render_backward(
    scene: &Scene,
    cam: &Camera,
    opts: &RenderOptions,
    upstream: &PixelGrads<'_>,
) -> Result<Vec<GaussianGrad>> {
    scene.check_finite()?;
    let (w, h) = (cam.width, cam.height);
    if upstream.color.len() != 3 * w * h {
        return Err(Error::Invalid("color gradient has wrong length".into()));
    }
    let proj = Projection::new(scene, cam, opts);
    let bg = scene.background_color;
    let mut acc = vec![SplatAccum::default(); proj.splats.len()];
    let mut seq: Vec<Contribution> = Vec::with_capacity(64);

    for y in 0..h {
        for x in 0..w {
            let p = y * w + x;
            let gc = [upstream.color[3 * p], upstream.color[3 * p + 1], upstream.color[3 * p + 2]];
            let mut gd = upstream.depth.map_or(0.0, |d| d[p]);
            let mut ga = upstream.alpha.map_or(0.0, |a| a[p]);
            if gc == [0.0; 3] && gd == 0.0 && ga == 0.0 {
                continue;
            }
            seq.clear();
            let mut depth_raw = 0.0;
            let mut accum = 0.0;
            proj.composite(x, y, opts, |k, alpha, t| {
                seq.push(Contribution { k, alpha, t });
                depth_raw += alpha * t * proj.splats[k].depth;
                accum += alpha * t;
            });
            if opts.normalize_depth && accum > 0.0 {
                ga -= gd * depth_raw / (accum * accum);
                gd /= accum;
            }
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            // Suffix of everything behind splat i, normalized by T_{i+1}.
            let mut qc = bg;
            let mut qd = 0.0;
            let mut qa = 0.0;
            for c in seq.iter().rev() {
                let s = &proj.splats[c.k];
                let a = &mut acc[c.k];
                let wgt = c.alpha * c.t;
                for ch in 0..3 {
                    a.color[ch] += gc[ch] * wgt;
                }
                a.depth += gd * wgt;
                let mut d_alpha = ga * (1.0 - qa) + gd * (s.depth - qd);
                for ch in 0..3 {
                    d_alpha += gc[ch] * (s.color[ch] - qc[ch]);
                }
                d_alpha *= c.t;
                for ch in 0..3 {
                    qc[ch] = s.color[ch] * c.alpha + (1.0 - c.alpha) * qc[ch];
                }
                qd = s.depth * c.alpha + (1.0 - c.alpha) * qd;
                qa = c.alpha + (1.0 - c.alpha) * qa;

                let (q, dx, dy) = s.mahalanobis_sq(px, py);
                debug_assert!(q <= CUTOFF_SQ);
                let gauss = (-0.5 * q).exp();
                if s.base_opacity * gauss > opts.alpha_max {
                    continue;
                }
                a.opacity += d_alpha * gauss;
                let d_q = d_alpha * s.base_opacity * gauss * -0.5;
                a.conic[0] += d_q * dx * dx;
                a.conic[1] += d_q * 2.0 * dx * dy;
                a.conic[2] += d_q * dy * dy;
                let [ca, cb, cc] = s.conic;
                a.mean2d[0] += d_q * -2.0 * (ca * dx + cb * dy);
                a.mean2d[1] += d_q * -2.0 * (cb * dx + cc * dy);
            }
        }
    }

    let mut grads = vec![GaussianGrad::default(); scene.len()];
    let w_rot = cam.rotation_matrix();
    for (s, a) in proj.splats.iter().zip(&acc) {
        let g = &scene.gaussians[s.index];
        let out = &mut grads[s.index];
        out.color = a.color;
        out.opacity = a.opacity;

        // conic = Σ₂⁻¹  ⇒  dL/dΣ₂ = −Σ₂⁻¹ · dL/dconic · Σ₂⁻¹
        let conic = Matrix2::new(s.conic[0], s.conic[1], s.conic[1], s.conic[2]);
        let g_conic = Matrix2::new(a.conic[0], 0.5 * a.conic[1], 0.5 * a.conic[1], a.conic[2]);
        let g_cov2d = -(conic * g_conic * conic);
        let j = &s.jacobian;
        let v = &s.cov_cam;
        let g_cov_cam = j.transpose() * g_cov2d * j;
        let g_j = 2.0 * g_cov2d * j * v;
        let g_cov = w_rot.transpose() * g_cov_cam * w_rot;

        let qn = normalize_quat(g.rotation);
        let r = quat_to_matrix(qn);
        let sc = Vector3::from(g.scales);
        let m = r * Matrix3::from_diagonal(&sc);
        let g_m = 2.0 * g_cov * m;
        let mut g_r = Matrix3::zeros();
        for i in 0..3 {
            for k in 0..3 {
                out.scales[k] += g_m[(i, k)] * r[(i, k)];
                g_r[(i, k)] = g_m[(i, k)] * sc[k];
            }
        }
        let g_qhat = quat_grad(qn, &g_r);
        let qnorm = g.rotation.iter().map(|v| v * v).sum::<f64>().sqrt();
        let dot: f64 = (0..4).map(|k| qn[k] * g_qhat[k]).sum();
        for k in 0..4 {
            out.rotation[k] = (g_qhat[k] - qn[k] * dot) / qnorm;
        }

        let p = &s.p_cam;
        let iz = 1.0 / p.z;
        let iz2 = iz * iz;
        let iz3 = iz2 * iz;
        let (fx, fy) = (cam.fx, cam.fy);
        let (gu, gv) = (a.mean2d[0], a.mean2d[1]);
        let mut g_t = Vector3::new(
            gu * fx * iz,
            gv * fy * iz,
            -(gu * fx * p.x + gv * fy * p.y) * iz2 + a.depth,
        );
        g_t.x += g_j[(0, 2)] * -fx * iz2;
        g_t.y += g_j[(1, 2)] * -fy * iz2;
        g_t.z += g_j[(0, 0)] * -fx * iz2
            + g_j[(0, 2)] * 2.0 * fx * p.x * iz3
            + g_j[(1, 1)] * -fy * iz2
            + g_j[(1, 2)] * 2.0 * fy * p.y * iz3;
        out.mean = (w_rot.transpose() * g_t).into();
    }
    Ok(grads)
}

/// dL/dq̂ from dL/dR for R = R(q̂), q̂ = (w, x, y, z).
fn quat_grad(q: [f64; 4], g_r: &Matrix3<f64>) -> [f64; 4] {
    let [w, x, y, z] = q;
    let dw = Matrix3::new(0.0, -2.0 * z, 2.0 * y, 2.0 * z, 0.0, -2.0 * x, -2.0 * y, 2.0 * x, 0.0);
    let dx = Matrix3::new(0.0, 2.0 * y, 2.0 * z, 2.0 * y, -4.0 * x, -2.0 * w, 2.0 * z, 2.0 * w, -4.0 * x);
    let dy = Matrix3::new(-4.0 * y, 2.0 * x, 2.0 * w, 2.0 * x, 0.0, 2.0 * z, -2.0 * w, 2.0 * z, -4.0 * y);
    let dz = Matrix3::new(-4.0 * z, -2.0 * w, 2.0 * x, 2.0 * w, -4.0 * z, 2.0 * y, 2.0 * x, 2.0 * y, 0.0);
    [
        g_r.component_mul(&dw).sum(),
        g_r.component_mul(&dx).sum(),
        g_r.component_mul(&dy).sum(),
        g_r.component_mul(&dz).sum(),
    ]
}
