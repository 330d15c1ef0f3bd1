//! Geometric types, procedural ground-truth scenes and candidate viewpoints.

mod camera;
mod synth;
mod viewpoints;

use std::fs;
use std::path::Path;

use nalgebra::{Matrix3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use camera::{Camera, Intrinsics};
pub use synth::{generate_synthetic_scene, Layout, SceneSpec, SyntheticScene};
pub use viewpoints::{interpolate_path, sample_sphere_viewpoints, sample_viewpoints, ViewpointSet, ViewpointSpec};

/// One splatting primitive. Covariance is stored as per-axis standard
/// deviations plus a rotation so it stays positive definite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gaussian3D {
    pub mean: [f64; 3],
    pub scales: [f64; 3],
    /// Unit quaternion, (w, x, y, z).
    #[serde(rename = "rotation_quat_wxyz")]
    pub rotation: [f64; 4],
    pub color: [f64; 3],
    pub opacity: f64,
}

impl Gaussian3D {
    pub fn isotropic(mean: [f64; 3], scale: f64, color: [f64; 3], opacity: f64) -> Self {
        Self {
            mean,
            scales: [scale; 3],
            rotation: [1.0, 0.0, 0.0, 0.0],
            color,
            opacity,
        }
    }

    pub fn mean_vec(&self) -> Vector3<f64> {
        Vector3::from(self.mean)
    }

    /// Rotation matrix of the normalized quaternion.
    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        quat_to_matrix(normalize_quat(self.rotation))
    }

    /// Σ = R·diag(s²)·Rᵀ.
    pub fn covariance(&self) -> Matrix3<f64> {
        let r = self.rotation_matrix();
        let s = Matrix3::from_diagonal(&Vector3::from(self.scales).map(|v| v * v));
        r * s * r.transpose()
    }

    /// Checks finiteness and the constraint set.
    pub fn validate(&self, index: usize) -> Result<()> {
        let fields: [(&'static str, &[f64]); 5] = [
            ("mean", &self.mean),
            ("scales", &self.scales),
            ("rotation", &self.rotation),
            ("color", &self.color),
            ("opacity", std::slice::from_ref(&self.opacity)),
        ];
        for (field, vals) in fields {
            if vals.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { index, field });
            }
        }
        let bad = |what: &str| Err(Error::Invalid(format!("gaussian {index}: {what}")));
        if self.scales.iter().any(|&s| s <= 0.0) {
            return bad("scales must be positive");
        }
        let qn = self.rotation.iter().map(|v| v * v).sum::<f64>().sqrt();
        if (qn - 1.0).abs() > 1e-6 {
            return bad("quaternion is not unit length");
        }
        if self.color.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return bad("color outside [0,1]");
        }
        if !(self.opacity > 0.0 && self.opacity < 1.0) {
            return bad("opacity outside (0,1)");
        }
        Ok(())
    }
}

pub fn normalize_quat(q: [f64; 4]) -> [f64; 4] {
    let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    if n == 0.0 {
        return [1.0, 0.0, 0.0, 0.0];
    }
    q.map(|v| v / n)
}

/// Rotation matrix of a unit quaternion (w, x, y, z).
pub fn quat_to_matrix(q: [f64; 4]) -> Matrix3<f64> {
    let [w, x, y, z] = q;
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

pub fn quat_from_nalgebra(q: &UnitQuaternion<f64>) -> [f64; 4] {
    [q.w, q.i, q.j, q.k]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub gaussians: Vec<Gaussian3D>,
    pub background_color: [f64; 3],
}

impl Scene {
    pub fn new(gaussians: Vec<Gaussian3D>, background_color: [f64; 3]) -> Self {
        Self {
            gaussians,
            background_color,
        }
    }

    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }

    /// Rejects non-finite parameters, naming the offending Gaussian.
    pub fn check_finite(&self) -> Result<()> {
        for (i, g) in self.gaussians.iter().enumerate() {
            let all = g
                .mean
                .iter()
                .chain(&g.scales)
                .chain(&g.rotation)
                .chain(&g.color)
                .chain(std::iter::once(&g.opacity));
            for v in all {
                if !v.is_finite() {
                    return Err(Error::NonFinite {
                        index: i,
                        field: "parameter",
                    });
                }
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        for (i, g) in self.gaussians.iter().enumerate() {
            g.validate(i)?;
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scene serializes")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Scene> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let scene: Scene = serde_json::from_str(&text).map_err(|e| Error::format(path, e))?;
        scene.check_finite().map_err(|e| Error::format(path, e))?;
        Ok(scene)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn covariance_is_spd() {
        let g = Gaussian3D {
            mean: [0.0; 3],
            scales: [0.1, 0.2, 0.3],
            rotation: normalize_quat([0.9, 0.1, -0.3, 0.2]),
            color: [0.5; 3],
            opacity: 0.5,
        };
        let s = g.covariance();
        assert!((s - s.transpose()).norm() < 1e-15);
        let eig = s.symmetric_eigen().eigenvalues;
        let mut e: Vec<f64> = eig.iter().copied().collect();
        e.sort_by(f64::total_cmp);
        assert!((e[0] - 0.01).abs() < 1e-12 && (e[2] - 0.09).abs() < 1e-12);
    }

    #[test]
    fn quat_matrix_matches_nalgebra() {
        let q = UnitQuaternion::from_euler_angles(0.3, -1.1, 2.0);
        let ours = quat_to_matrix(quat_from_nalgebra(&q));
        assert!((ours - q.to_rotation_matrix().into_inner()).norm() < 1e-12);
    }

    #[test]
    fn validate_names_nonfinite_gaussian() {
        let mut scene = Scene::new(vec![Gaussian3D::isotropic([0.0; 3], 0.1, [0.5; 3], 0.5); 3], [0.0; 3]);
        scene.gaussians[2].opacity = f64::NAN;
        match scene.check_finite() {
            Err(Error::NonFinite { index, .. }) => assert_eq!(index, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn scene_json_uses_documented_field_names() {
        let scene = Scene::new(vec![Gaussian3D::isotropic([1.0, 2.0, 3.0], 0.1, [0.5; 3], 0.5)], [0.1; 3]);
        let v: serde_json::Value = serde_json::from_str(&scene.to_json()).unwrap();
        let g = &v["gaussians"][0];
        for key in ["mean", "scales", "rotation_quat_wxyz", "color", "opacity"] {
            assert!(g.get(key).is_some(), "missing {key}");
        }
        assert!(v.get("background_color").is_some());
    }
}
