use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::RenderOptions;
use crate::scene::{Camera, Gaussian3D};

/// A Gaussian after projection into one camera.
#[derive(Debug, Clone, PartialEq)]
pub struct Splat2D {
    /// Index of the source Gaussian in its scene.
    pub index: usize,
    pub mean2d: [f64; 2],
    /// Regularized screen-space covariance (pixels²).
    pub cov2d: Matrix2<f64>,
    /// Inverse of `cov2d` as (a, b, c) with q = a·dx² + 2b·dx·dy + c·dy².
    pub conic: [f64; 3],
    /// Camera-space z of the mean.
    pub depth: f64,
    pub color: [f64; 3],
    pub base_opacity: f64,
    /// Inclusive pixel ranges whose centers can lie inside the 3σ ellipse.
    pub x_range: (usize, usize),
    pub y_range: (usize, usize),
    pub(crate) p_cam: Vector3<f64>,
    pub(crate) jacobian: Matrix2x3<f64>,
    pub(crate) cov_cam: Matrix3<f64>,
}

/// Mahalanobis cutoff: a splat has no footprint beyond 3σ.
pub const CUTOFF_SQ: f64 = 9.0;

/// Screen-space projection data that is independent of the image bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProjectedFootprint {
    pub mean2d: [f64; 2],
    pub cov2d: [[f64; 2]; 2],
    pub depth: f64,
}

/// Perspective Jacobian of `(fx·x/z + cx, fy·y/z + cy)` at `p`.
pub fn perspective_jacobian(cam: &Camera, p: &Vector3<f64>) -> Matrix2x3<f64> {
    let iz = 1.0 / p.z;
    let iz2 = iz * iz;
    Matrix2x3::new(
        cam.fx * iz,
        0.0,
        -cam.fx * p.x * iz2,
        0.0,
        cam.fy * iz,
        -cam.fy * p.y * iz2,
    )
}

/// First-order (EWA) projection of one Gaussian. Returns `None` when it lies
/// in front of the near plane or its 3σ footprint misses the image.
pub fn project_gaussian(g: &Gaussian3D, index: usize, cam: &Camera, opts: &RenderOptions) -> Option<Splat2D> {
    let w = cam.rotation_matrix();
    let p_cam = w * g.mean_vec() + cam.translation_vec();
    if p_cam.z <= opts.near_plane {
        return None;
    }
    let jacobian = perspective_jacobian(cam, &p_cam);
    let cov_cam = w * g.covariance() * w.transpose();
    let cov2d = jacobian * cov_cam * jacobian.transpose() + Matrix2::identity() * opts.eps_cov;
    let det = cov2d[(0, 0)] * cov2d[(1, 1)] - cov2d[(0, 1)] * cov2d[(1, 0)];
    if !(det > 0.0) {
        return None;
    }
    let conic = [cov2d[(1, 1)] / det, -cov2d[(0, 1)] / det, cov2d[(0, 0)] / det];
    let (u, v) = cam.project(&p_cam);
    let rx = (CUTOFF_SQ * cov2d[(0, 0)]).sqrt();
    let ry = (CUTOFF_SQ * cov2d[(1, 1)]).sqrt();
    // Pixel x is sampled at x + 0.5.
    let x0 = (u - rx - 0.5).ceil().max(0.0);
    let x1 = (u + rx - 0.5).floor().min(cam.width as f64 - 1.0);
    let y0 = (v - ry - 0.5).ceil().max(0.0);
    let y1 = (v + ry - 0.5).floor().min(cam.height as f64 - 1.0);
    if !(x0 <= x1 && y0 <= y1) {
        return None;
    }
    Some(Splat2D {
        index,
        mean2d: [u, v],
        cov2d,
        conic,
        depth: p_cam.z,
        color: g.color,
        base_opacity: g.opacity,
        x_range: (x0 as usize, x1 as usize),
        y_range: (y0 as usize, y1 as usize),
        p_cam,
        jacobian,
        cov_cam,
    })
}

impl Splat2D {
    pub fn footprint(&self) -> ProjectedFootprint {
        ProjectedFootprint {
            mean2d: self.mean2d,
            cov2d: [
                [self.cov2d[(0, 0)], self.cov2d[(0, 1)]],
                [self.cov2d[(1, 0)], self.cov2d[(1, 1)]],
            ],
            depth: self.depth,
        }
    }

    /// Squared Mahalanobis distance from the splat center to pixel center (px, py).
    #[inline]
    pub fn mahalanobis_sq(&self, px: f64, py: f64) -> (f64, f64, f64) {
        let dx = px - self.mean2d[0];
        let dy = py - self.mean2d[1];
        let [a, b, c] = self.conic;
        (a * dx * dx + 2.0 * b * dx * dy + c * dy * dy, dx, dy)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{normalize_quat, Intrinsics};
    use rand::{Rng, SeedableRng};

    fn opts() -> RenderOptions {
        RenderOptions::default()
    }

    fn axis_camera() -> Camera {
        Camera::from_pose(Intrinsics::from_fov(60.0, 32, 32), Matrix3::identity(), Vector3::zeros())
    }

    #[test]
    fn on_axis_isotropic_closed_form() {
        let cam = axis_camera();
        let (d, s) = (4.0, 0.2);
        let g = Gaussian3D::isotropic([0.0, 0.0, d], s, [1.0; 3], 0.5);
        let splat = project_gaussian(&g, 0, &cam, &opts()).unwrap();
        let ex = (cam.fx * s / d).powi(2) + opts().eps_cov;
        let ey = (cam.fy * s / d).powi(2) + opts().eps_cov;
        assert!(((splat.cov2d[(0, 0)] - ex) / ex).abs() < 1e-6);
        assert!(((splat.cov2d[(1, 1)] - ey) / ey).abs() < 1e-6);
        assert!(splat.cov2d[(0, 1)].abs() < 1e-12);
        assert!((splat.mean2d[0] - cam.cx).abs() < 1e-12);
    }

    #[test]
    fn behind_camera_is_culled() {
        let g = Gaussian3D::isotropic([0.0, 0.0, -2.0], 0.2, [1.0; 3], 0.5);
        assert!(project_gaussian(&g, 0, &axis_camera(), &opts()).is_none());
    }

    #[test]
    fn off_image_footprint_is_culled() {
        let g = Gaussian3D::isotropic([50.0, 0.0, 2.0], 0.01, [1.0; 3], 0.5);
        assert!(project_gaussian(&g, 0, &axis_camera(), &opts()).is_none());
    }

    /// Σ₂ against J_fd·Σ_cam·J_fdᵀ with J_fd from central differences of the
    /// pixel projection.
    #[test]
    fn covariance_matches_finite_difference_jacobian() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let cam = Camera::look_at(
                Intrinsics::from_fov(55.0, 40, 30),
                Vector3::new(rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0), rng.gen_range(2.0..4.0)),
                Vector3::new(rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3), 0.0),
            );
            let g = Gaussian3D {
                mean: [rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5)],
                scales: [rng.gen_range(0.02..0.3), rng.gen_range(0.02..0.3), rng.gen_range(0.02..0.3)],
                rotation: normalize_quat([
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                ]),
                color: [0.5; 3],
                opacity: 0.5,
            };
            let Some(splat) = project_gaussian(&g, 0, &cam, &opts()) else { continue };
            let p = cam.world_to_camera(&g.mean_vec());
            let h = 1e-6;
            let mut jfd = Matrix2x3::zeros();
            for k in 0..3 {
                let mut dp = Vector3::zeros();
                dp[k] = h;
                let (u1, v1) = cam.project(&(p + dp));
                let (u0, v0) = cam.project(&(p - dp));
                jfd[(0, k)] = (u1 - u0) / (2.0 * h);
                jfd[(1, k)] = (v1 - v0) / (2.0 * h);
            }
            let w = cam.rotation_matrix();
            let cov_cam = w * g.covariance() * w.transpose();
            let expected = jfd * cov_cam * jfd.transpose() + Matrix2::identity() * opts().eps_cov;
            let rel = (splat.cov2d - expected).abs().max() / expected.abs().max();
            assert!(rel < 1e-4, "relative error {rel}");
        }
    }
}
