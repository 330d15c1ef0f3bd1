use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Pinhole intrinsics in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Intrinsics {
    /// Square pixels, principal point at the image center, horizontal field of view in degrees.
    pub fn from_fov(fov_x_deg: f64, width: usize, height: usize) -> Self {
        let f = 0.5 * width as f64 / (0.5 * fov_x_deg.to_radians()).tan();
        Self {
            fx: f,
            fy: f,
            cx: 0.5 * width as f64,
            cy: 0.5 * height as f64,
            width,
            height,
        }
    }
}

/// Pinhole camera with a world-to-camera pose, `x_cam = R·x_world + t`.
/// Camera axes follow the x-right, y-down, z-forward convention.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    /// Row-major world-to-camera rotation.
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
}

impl Camera {
    pub fn from_pose(intr: Intrinsics, rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        let mut rows = [[0.0; 3]; 3];
        for (r, row) in rows.iter_mut().enumerate() {
            for (c, v) in row.iter_mut().enumerate() {
                *v = rotation[(r, c)];
            }
        }
        Self {
            fx: intr.fx,
            fy: intr.fy,
            cx: intr.cx,
            cy: intr.cy,
            width: intr.width,
            height: intr.height,
            rotation: rows,
            translation: translation.into(),
        }
    }

    /// Camera at `eye` looking at `target`. World up is +z, falling back to +y
    /// when the viewing direction is parallel to z.
    pub fn look_at(intr: Intrinsics, eye: Vector3<f64>, target: Vector3<f64>) -> Self {
        let forward = (target - eye).normalize();
        let mut right = forward.cross(&Vector3::z());
        if right.norm() < 1e-9 {
            right = forward.cross(&Vector3::y());
        }
        let right = right.normalize();
        let down = forward.cross(&right);
        let rot = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let t = -(rot * eye);
        Self::from_pose(intr, rot, t)
    }

    pub fn intrinsics(&self) -> Intrinsics {
        Intrinsics {
            fx: self.fx,
            fy: self.fy,
            cx: self.cx,
            cy: self.cy,
            width: self.width,
            height: self.height,
        }
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        let r = &self.rotation;
        Matrix3::new(
            r[0][0], r[0][1], r[0][2], r[1][0], r[1][1], r[1][2], r[2][0], r[2][1], r[2][2],
        )
    }

    pub fn translation_vec(&self) -> Vector3<f64> {
        Vector3::from(self.translation)
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation_matrix().transpose() * self.translation_vec())
    }

    /// Viewing direction in world coordinates.
    pub fn forward(&self) -> Vector3<f64> {
        Vector3::from(self.rotation[2])
    }

    pub fn world_to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation_matrix() * p + self.translation_vec()
    }

    /// Pixel coordinates of a camera-space point (pixel centers sit at +0.5).
    pub fn project(&self, p_cam: &Vector3<f64>) -> (f64, f64) {
        (
            self.fx * p_cam.x / p_cam.z + self.cx,
            self.fy * p_cam.y / p_cam.z + self.cy,
        )
    }

    /// Same pose, intrinsics rescaled to a new resolution.
    pub fn with_resolution(&self, width: usize, height: usize) -> Camera {
        let sx = width as f64 / self.width as f64;
        let sy = height as f64 / self.height as f64;
        Camera {
            fx: self.fx * sx,
            fy: self.fy * sy,
            cx: self.cx * sx,
            cy: self.cy * sy,
            width,
            height,
            ..self.clone()
        }
    }

    pub fn same_intrinsics(&self, other: &Camera) -> bool {
        self.intrinsics() == other.intrinsics()
    }

    /// Max abs difference over pose entries.
    pub fn pose_distance(&self, other: &Camera) -> f64 {
        let dr = (self.rotation_matrix() - other.rotation_matrix()).abs().max();
        let dt = (self.translation_vec() - other.translation_vec()).abs().max();
        dr.max(dt)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) || self.width == 0 || self.height == 0 {
            return Err(Error::Invalid("camera intrinsics must be positive".into()));
        }
        let r = self.rotation_matrix();
        let ortho = (r * r.transpose() - Matrix3::identity()).abs().max();
        if ortho > 1e-6 || (r.determinant() - 1.0).abs() > 1e-6 {
            return Err(Error::Invalid("camera rotation is not a proper rotation".into()));
        }
        if self.translation.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid("camera translation is not finite".into()));
        }
        Ok(())
    }
}
