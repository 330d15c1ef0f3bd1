//! Procedural ground-truth scenes.

use std::f64::consts::PI;
use std::str::FromStr;

use nalgebra::{Rotation3, UnitQuaternion, Vector3};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{quat_from_nalgebra, Gaussian3D, Scene};
use crate::error::{Error, Result};
use crate::rng::{stream_rng, Rng, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Layout {
    BlobCluster,
    TexturedBox,
    OccludedCavity,
}

impl FromStr for Layout {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "blob-cluster" => Ok(Layout::BlobCluster),
            "textured-box" => Ok(Layout::TexturedBox),
            "occluded-cavity" => Ok(Layout::OccludedCavity),
            other => Err(Error::Config(format!(
                "unknown layout '{other}' (expected blob-cluster, textured-box or occluded-cavity)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneSpec {
    pub seed: u64,
    pub n_gaussians: usize,
    pub layout: String,
    /// Half-extents of the axis-aligned box centered at the origin.
    pub bounds: [f64; 3],
    pub background: [f64; 3],
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            n_gaussians: 200,
            layout: "occluded-cavity".into(),
            bounds: [1.0; 3],
            background: [0.0; 3],
        }
    }
}

impl SceneSpec {
    pub fn diameter(&self) -> f64 {
        2.0 * Vector3::from(self.bounds).norm()
    }
}

/// A generated scene plus the indices of Gaussians inside the concave region
/// (empty for layouts without one).
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub scene: Scene,
    pub cavity: Vec<usize>,
}

pub fn generate_synthetic_scene(spec: &SceneSpec) -> Result<SyntheticScene> {
    let layout: Layout = spec.layout.parse()?;
    if spec.n_gaussians == 0 {
        return Err(Error::Config("n_gaussians must be >= 1".into()));
    }
    if spec.bounds.iter().any(|b| !(*b > 0.0 && b.is_finite())) {
        return Err(Error::Config("bounds must be positive".into()));
    }
    let mut rng = stream_rng(spec.seed, Stream::Scene);
    let b = Vector3::from(spec.bounds);
    let (gaussians, cavity) = match layout {
        Layout::BlobCluster => (blob_cluster(&mut rng, spec.n_gaussians, &b), Vec::new()),
        Layout::TexturedBox => (textured_box(&mut rng, spec.n_gaussians, &b), Vec::new()),
        Layout::OccludedCavity => occluded_cavity(&mut rng, spec.n_gaussians, &b),
    };
    Ok(SyntheticScene {
        scene: Scene::new(gaussians, spec.background),
        cavity,
    })
}

fn random_quat(rng: &mut Rng) -> [f64; 4] {
    let axis = Vector3::new(
        rng.gen_range(-1.0..1.0),
        rng.gen_range(-1.0..1.0),
        rng.gen_range(-1.0..1.0),
    );
    let axis = if axis.norm() < 1e-6 { Vector3::z() } else { axis };
    let q = UnitQuaternion::from_axis_angle(&nalgebra::Unit::new_normalize(axis), rng.gen_range(0.0..PI));
    quat_from_nalgebra(&q)
}

fn random_color(rng: &mut Rng) -> [f64; 3] {
    [rng.gen_range(0.05..0.95), rng.gen_range(0.05..0.95), rng.gen_range(0.05..0.95)]
}

fn clamp_into(p: Vector3<f64>, b: &Vector3<f64>) -> [f64; 3] {
    [
        p.x.clamp(-b.x, b.x),
        p.y.clamp(-b.y, b.y),
        p.z.clamp(-b.z, b.z),
    ]
}

fn blob_cluster(rng: &mut Rng, n: usize, b: &Vector3<f64>) -> Vec<Gaussian3D> {
    let n_clusters = (n / 20).clamp(1, 8);
    let centers: Vec<Vector3<f64>> = (0..n_clusters)
        .map(|_| {
            Vector3::new(
                rng.gen_range(-0.5..0.5) * b.x,
                rng.gen_range(-0.5..0.5) * b.y,
                rng.gen_range(-0.5..0.5) * b.z,
            )
        })
        .collect();
    let base = b.min();
    (0..n)
        .map(|i| {
            let c = centers[i % n_clusters];
            let offset = Vector3::new(
                rng.gen_range(-0.3..0.3) * b.x,
                rng.gen_range(-0.3..0.3) * b.y,
                rng.gen_range(-0.3..0.3) * b.z,
            );
            Gaussian3D {
                mean: clamp_into(c + offset, b),
                scales: [
                    rng.gen_range(0.04..0.15) * base,
                    rng.gen_range(0.04..0.15) * base,
                    rng.gen_range(0.04..0.15) * base,
                ],
                rotation: random_quat(rng),
                color: random_color(rng),
                opacity: rng.gen_range(0.5..0.95),
            }
        })
        .collect()
}

/// Axis-aligned face of a box: fixed axis, sign, and the two in-plane axes.
#[derive(Clone, Copy)]
struct Face {
    axis: usize,
    sign: f64,
}

impl Face {
    fn tangents(self) -> (usize, usize) {
        match self.axis {
            0 => (1, 2),
            1 => (0, 2),
            _ => (0, 1),
        }
    }

    fn area(self, h: &Vector3<f64>) -> f64 {
        let (a, b) = self.tangents();
        4.0 * h[a] * h[b]
    }
}

/// Flat disc Gaussians tiled over the given faces of a box with half-extents `h`.
/// `color_of` receives the face and in-plane coordinates in [-1, 1].
fn tile_faces(
    rng: &mut Rng,
    n: usize,
    h: &Vector3<f64>,
    offset: &Vector3<f64>,
    faces: &[Face],
    opacity: f64,
    color_of: &dyn Fn(Face, f64, f64) -> [f64; 3],
) -> Vec<Gaussian3D> {
    let total_area: f64 = faces.iter().map(|f| f.area(h)).sum();
    let mut out = Vec::with_capacity(n);
    let mut remaining = n;
    for (fi, face) in faces.iter().enumerate() {
        let share = if fi + 1 == faces.len() {
            remaining
        } else {
            ((n as f64 * face.area(h) / total_area).round() as usize).min(remaining)
        };
        remaining -= share;
        if share == 0 {
            continue;
        }
        let (ta, tb) = face.tangents();
        let aspect = h[ta] / h[tb];
        let cols = ((share as f64 * aspect).sqrt().ceil() as usize).max(1);
        let rows = share.div_ceil(cols);
        let step_a = 2.0 * h[ta] / cols as f64;
        let step_b = 2.0 * h[tb] / rows as f64;
        for k in 0..share {
            let (ci, ri) = (k % cols, k / cols);
            let ua = -1.0 + (2.0 * (ci as f64 + 0.5 + rng.gen_range(-0.2..0.2))) / cols as f64;
            let ub = -1.0 + (2.0 * (ri as f64 + 0.5 + rng.gen_range(-0.2..0.2))) / rows as f64;
            let mut p = *offset;
            p[face.axis] += face.sign * h[face.axis];
            p[ta] += ua * h[ta];
            p[tb] += ub * h[tb];
            let mut scales = [0.0; 3];
            scales[face.axis] = 0.02 * h.min();
            scales[ta] = 0.6 * step_a;
            scales[tb] = 0.6 * step_b;
            let spin = Rotation3::from_axis_angle(
                &nalgebra::Unit::new_normalize(axis_vec(face.axis)),
                rng.gen_range(-0.3..0.3),
            );
            out.push(Gaussian3D {
                mean: p.into(),
                scales,
                rotation: quat_from_nalgebra(&UnitQuaternion::from_rotation_matrix(&spin)),
                color: color_of(*face, ua, ub),
                opacity,
            });
        }
    }
    out
}

fn axis_vec(axis: usize) -> Vector3<f64> {
    let mut v = Vector3::zeros();
    v[axis] = 1.0;
    v
}

fn checker(face: Face, ua: f64, ub: f64, cells: f64) -> [f64; 3] {
    let parity = (((ua + 1.0) * cells).floor() as i64 + ((ub + 1.0) * cells).floor() as i64) & 1;
    let hue = (face.axis as f64 * 2.0 + if face.sign > 0.0 { 1.0 } else { 0.0 }) / 6.0;
    let base = [
        0.5 + 0.4 * (2.0 * PI * hue).cos(),
        0.5 + 0.4 * (2.0 * PI * (hue + 1.0 / 3.0)).cos(),
        0.5 + 0.4 * (2.0 * PI * (hue + 2.0 / 3.0)).cos(),
    ];
    if parity == 0 {
        base
    } else {
        base.map(|c| 0.35 * c + 0.05)
    }
}

const ALL_FACES: [Face; 6] = [
    Face { axis: 0, sign: -1.0 },
    Face { axis: 0, sign: 1.0 },
    Face { axis: 1, sign: -1.0 },
    Face { axis: 1, sign: 1.0 },
    Face { axis: 2, sign: -1.0 },
    Face { axis: 2, sign: 1.0 },
];

fn textured_box(rng: &mut Rng, n: usize, b: &Vector3<f64>) -> Vec<Gaussian3D> {
    let h = b * 0.7;
    tile_faces(rng, n, &h, &Vector3::zeros(), &ALL_FACES, 0.9, &|f, a, c| checker(f, a, c, 2.0))
}

/// A box open on its +x face. A quarter of the Gaussians decorate the inside
/// (the cavity); the rest form the five opaque walls.
fn occluded_cavity(rng: &mut Rng, n: usize, b: &Vector3<f64>) -> (Vec<Gaussian3D>, Vec<usize>) {
    let h = b * 0.8;
    let n_cavity = if n == 1 { 1 } else { (n / 4).max(1) };
    let n_walls = n - n_cavity;
    let walls: Vec<Face> = ALL_FACES.iter().copied().filter(|f| !(f.axis == 0 && f.sign > 0.0)).collect();
    let mut gaussians = tile_faces(rng, n_walls, &h, &Vector3::zeros(), &walls, 0.95, &|f, a, c| {
        checker(f, a, c, 1.5)
    });
    let inner = h * 0.75;
    let start = gaussians.len();
    for _ in 0..n_cavity {
        // Cavity content hugs the back half of the interior, away from the opening.
        let p = Vector3::new(
            rng.gen_range(-1.0..0.2) * inner.x,
            rng.gen_range(-1.0..1.0) * inner.y,
            rng.gen_range(-1.0..1.0) * inner.z,
        );
        let s = 0.12 * inner.min();
        gaussians.push(Gaussian3D {
            mean: p.into(),
            scales: [
                rng.gen_range(0.5..1.5) * s,
                rng.gen_range(0.5..1.5) * s,
                rng.gen_range(0.5..1.5) * s,
            ],
            rotation: random_quat(rng),
            color: random_color(rng),
            opacity: rng.gen_range(0.6..0.95),
        });
    }
    (gaussians, (start..start + n_cavity).collect())
}
