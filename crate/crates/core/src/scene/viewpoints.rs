use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use nalgebra::{Rotation3, UnitQuaternion, Vector3};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{Camera, Intrinsics};
use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewpointSet {
    pub cameras: Vec<Camera>,
    pub selected_mask: Vec<bool>,
}

impl ViewpointSet {
    pub fn new(cameras: Vec<Camera>) -> Self {
        let n = cameras.len();
        Self {
            cameras,
            selected_mask: vec![false; n],
        }
    }

    pub fn len(&self) -> usize {
        self.cameras.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cameras.is_empty()
    }

    pub fn unselected(&self) -> impl Iterator<Item = usize> + '_ {
        self.selected_mask.iter().enumerate().filter(|(_, s)| !**s).map(|(i, _)| i)
    }

    /// Marks `idx` as selected; selecting twice is an error.
    pub fn select(&mut self, idx: usize) -> Result<()> {
        match self.selected_mask.get_mut(idx) {
            None => Err(Error::Invalid(format!("view {idx} out of range"))),
            Some(true) => Err(Error::Invalid(format!("view {idx} already selected"))),
            Some(s) => {
                *s = true;
                Ok(())
            }
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("viewpoints serialize");
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<ViewpointSet> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::format(path, e))
    }
}

/// Candidate placement on a sphere around the scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ViewpointSpec {
    pub n: usize,
    pub radius: f64,
    pub center: [f64; 3],
    pub seed: u64,
    /// Restrict to the z ≥ 0 half of the sphere.
    pub hemisphere: bool,
    pub fov_deg: f64,
    pub width: usize,
    pub height: usize,
}

impl Default for ViewpointSpec {
    fn default() -> Self {
        Self {
            n: 256,
            radius: 3.5,
            center: [0.0; 3],
            seed: 0,
            hemisphere: false,
            fov_deg: 50.0,
            width: 64,
            height: 64,
        }
    }
}

impl ViewpointSpec {
    pub fn intrinsics(&self) -> Intrinsics {
        Intrinsics::from_fov(self.fov_deg, self.width, self.height)
    }
}

pub fn sample_viewpoints(spec: &ViewpointSpec) -> Result<ViewpointSet> {
    fibonacci_cameras(spec.n, spec.radius, spec.center, spec.seed, spec.hemisphere, spec.intrinsics())
}

/// Fibonacci-lattice cameras on a full sphere, all looking at `center`.
pub fn sample_sphere_viewpoints(
    n: usize,
    radius: f64,
    center: [f64; 3],
    seed: u64,
    intr: Intrinsics,
) -> Result<ViewpointSet> {
    fibonacci_cameras(n, radius, center, seed, false, intr)
}

fn fibonacci_cameras(
    n: usize,
    radius: f64,
    center: [f64; 3],
    seed: u64,
    hemisphere: bool,
    intr: Intrinsics,
) -> Result<ViewpointSet> {
    if n == 0 || !(radius > 0.0) {
        return Err(Error::Invalid("viewpoint sampling needs n >= 1 and radius > 0".into()));
    }
    let golden_angle = PI * (3.0 - 5f64.sqrt());
    let offset = stream_rng(seed, Stream::Viewpoints).gen_range(0.0..2.0 * PI);
    let center = Vector3::from(center);
    let nf = n as f64;
    let cameras = (0..n)
        .map(|i| {
            let fi = i as f64;
            let z = if hemisphere {
                1.0 - (fi + 0.5) / nf
            } else {
                1.0 - (2.0 * fi + 1.0) / nf
            };
            let rxy = (1.0 - z * z).max(0.0).sqrt();
            let phi = fi * golden_angle + offset;
            let dir = Vector3::new(rxy * phi.cos(), rxy * phi.sin(), z);
            Camera::look_at(intr, center + radius * dir, center)
        })
        .collect();
    Ok(ViewpointSet::new(cameras))
}

/// `k` poses from `a` to `b`: centers interpolated linearly, orientations by slerp.
/// Endpoints are copies of the inputs.
pub fn interpolate_path(a: &Camera, b: &Camera, k: usize) -> Result<Vec<Camera>> {
    if k < 2 {
        return Err(Error::Invalid("path interpolation needs k >= 2".into()));
    }
    if !a.same_intrinsics(b) {
        return Err(Error::Invalid("path endpoints have different intrinsics".into()));
    }
    let qa = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(a.rotation_matrix()));
    let qb = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(b.rotation_matrix()));
    let (ca, cb) = (a.center(), b.center());
    let mut out = Vec::with_capacity(k);
    out.push(a.clone());
    for i in 1..k - 1 {
        let t = i as f64 / (k - 1) as f64;
        let q = slerp(&qa, &qb, t);
        let center = ca + (cb - ca) * t;
        let rot = q.to_rotation_matrix().into_inner();
        out.push(Camera::from_pose(a.intrinsics(), rot, -(rot * center)));
    }
    out.push(b.clone());
    Ok(out)
}

fn slerp(a: &UnitQuaternion<f64>, b: &UnitQuaternion<f64>, t: f64) -> UnitQuaternion<f64> {
    // try_slerp returns None only for antipodal rotations (180° apart); fall back to nlerp there.
    a.try_slerp(b, t, 1e-12).unwrap_or_else(|| a.nlerp(b, t))
}
