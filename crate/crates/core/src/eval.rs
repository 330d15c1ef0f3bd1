//! Image-quality metrics and their average / worst-5% aggregation.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::planner::{RunLog, TestSet};
use crate::image::RgbImage;
use crate::render::{render_with, RenderOptions};
use crate::scene::{Camera, Scene};
use crate::uncertainty::ssim::ssim_map;

/// Peak signal-to-noise ratio in dB for unit dynamic range. Identical images
/// give `f64::INFINITY`, written as `"inf"` in JSON and CSV.
pub fn psnr(a: &RgbImage, b: &RgbImage) -> Result<f64> {
    a.check_same_dims(b)?;
    let mse = compensated_sum(a.data.iter().zip(&b.data).map(|(x, y)| (x - y) * (x - y))) / a.data.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (1.0 / mse).log10())
}

/// Neumaier summation, so uniform errors give the closed-form MSE.
fn compensated_sum(values: impl Iterator<Item = f64>) -> f64 {
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for v in values {
        let t = sum + v;
        comp += if sum.abs() >= v.abs() { (sum - t) + v } else { (v - t) + sum };
        sum = t;
    }
    sum + comp
}

pub fn ssim_scalar(a: &RgbImage, b: &RgbImage) -> Result<f64> {
    Ok(ssim_map(a, b)?.mean())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    #[serde(with = "inf_f64")]
    pub avg: f64,
    #[serde(with = "inf_f64")]
    pub worst5: f64,
}

/// Mean, and mean of the ⌈0.05·N⌉ lowest values (higher-is-better metrics).
pub fn aggregate(values: &[f64]) -> Result<Aggregate> {
    if values.is_empty() {
        return Err(Error::Invalid("cannot aggregate an empty metric list".into()));
    }
    let avg = values.iter().sum::<f64>() / values.len() as f64;
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let k = (0.05 * values.len() as f64).ceil() as usize;
    let worst5 = sorted[..k].iter().sum::<f64>() / k as f64;
    Ok(Aggregate { avg, worst5 })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ViewMetric {
    #[serde(with = "inf_f64")]
    pub psnr_db: f64,
    pub ssim: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub per_view: Vec<ViewMetric>,
    #[serde(with = "inf_f64")]
    pub psnr_avg: f64,
    #[serde(with = "inf_f64")]
    pub psnr_worst5: f64,
    pub ssim_avg: f64,
    pub ssim_worst5: f64,
}

impl MetricReport {
    pub fn from_views(per_view: Vec<ViewMetric>) -> Result<Self> {
        let p = aggregate(&per_view.iter().map(|m| m.psnr_db).collect::<Vec<_>>())?;
        let s = aggregate(&per_view.iter().map(|m| m.ssim).collect::<Vec<_>>())?;
        Ok(Self {
            per_view,
            psnr_avg: p.avg,
            psnr_worst5: p.worst5,
            ssim_avg: s.avg,
            ssim_worst5: s.worst5,
        })
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("view,psnr_db,ssim\n");
        for (i, m) in self.per_view.iter().enumerate() {
            let _ = writeln!(out, "{i},{},{}", fmt_f64(m.psnr_db), m.ssim);
        }
        let _ = writeln!(out, "avg,{},{}", fmt_f64(self.psnr_avg), self.ssim_avg);
        let _ = writeln!(out, "worst5,{},{}", fmt_f64(self.psnr_worst5), self.ssim_worst5);
        out
    }

    /// Largest absolute difference over every reported number; infinities
    /// compare equal to each other.
    pub fn max_abs_diff(&self, other: &MetricReport) -> f64 {
        if self.per_view.len() != other.per_view.len() {
            return f64::INFINITY;
        }
        let d = |a: f64, b: f64| if a == b { 0.0 } else { (a - b).abs() };
        let mut m = d(self.psnr_avg, other.psnr_avg)
            .max(d(self.psnr_worst5, other.psnr_worst5))
            .max(d(self.ssim_avg, other.ssim_avg))
            .max(d(self.ssim_worst5, other.ssim_worst5));
        for (a, b) in self.per_view.iter().zip(&other.per_view) {
            m = m.max(d(a.psnr_db, b.psnr_db)).max(d(a.ssim, b.ssim));
        }
        m
    }
}

pub fn fmt_f64(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".into()
    } else {
        format!("{v}")
    }
}

/// Renders `scene` from every test camera and compares with the ground-truth images.
pub fn evaluate(scene: &Scene, cameras: &[Camera], gt: &[RgbImage], opts: &RenderOptions) -> Result<MetricReport> {
    if cameras.is_empty() {
        return Err(Error::Invalid("empty test set".into()));
    }
    if cameras.len() != gt.len() {
        return Err(Error::Invalid("test cameras and images differ in count".into()));
    }
    let per_view = cameras
        .iter()
        .zip(gt)
        .map(|(cam, gt)| {
            let (img, _) = render_with(scene, cam, opts)?;
            Ok(ViewMetric {
                psnr_db: psnr(&img.color, gt)?,
                ssim: ssim_scalar(&img.color, gt)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    MetricReport::from_views(per_view)
}

/// One point of a per-step quality curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    /// Selection round, or the number of rounds for the final point.
    pub round: usize,
    pub iteration: u64,
    pub n_views: usize,
    #[serde(with = "inf_f64")]
    pub psnr_avg: f64,
    #[serde(with = "inf_f64")]
    pub psnr_worst5: f64,
    pub ssim_avg: f64,
    pub ssim_worst5: f64,
}

impl CurvePoint {
    pub fn new(round: usize, iteration: u64, n_views: usize, m: &MetricReport) -> Self {
        Self {
            round,
            iteration,
            n_views,
            psnr_avg: m.psnr_avg,
            psnr_worst5: m.psnr_worst5,
            ssim_avg: m.ssim_avg,
            ssim_worst5: m.ssim_worst5,
        }
    }
}

/// Re-evaluates every checkpoint of a run on the test set: one point per
/// addition plus the final one.
pub fn per_step_curve(log: &RunLog, test: &TestSet, opts: &RenderOptions) -> Result<Vec<CurvePoint>> {
    let expected = log.records.len() + 1;
    if log.checkpoints.len() != expected {
        return Err(Error::Invalid(format!(
            "run has {} checkpoints, expected {expected}",
            log.checkpoints.len()
        )));
    }
    log.checkpoints
        .iter()
        .map(|c| {
            let m = evaluate(&c.scene, &test.cameras, &test.images, opts)?;
            Ok(CurvePoint::new(c.round, c.iteration, c.n_views, &m))
        })
        .collect()
}

pub fn curve_to_csv(points: &[CurvePoint]) -> String {
    let mut out = String::from("round,iteration,n_views,psnr_avg,psnr_worst5,ssim_avg,ssim_worst5\n");
    for p in points {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            p.round,
            p.iteration,
            p.n_views,
            fmt_f64(p.psnr_avg),
            fmt_f64(p.psnr_worst5),
            p.ssim_avg,
            p.ssim_worst5
        );
    }
    out
}

/// Serde for floats that may be +∞ (PSNR of identical images).
pub mod inf_f64 {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if *v == f64::INFINITY {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*v)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        #[derive(serde::Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Text(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) if t == "inf" => Ok(f64::INFINITY),
            Repr::Text(t) => Err(serde::de::Error::custom(format!("bad float '{t}'"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn psnr_closed_forms() {
        let a = RgbImage::filled(8, 8, [0.2, 0.5, 0.7]);
        assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
        let b = RgbImage::filled(8, 8, [0.3, 0.6, 0.8]);
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-9);
    }

    #[test]
    fn psnr_matches_direct_mse() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut a = RgbImage::new(7, 5);
        let mut b = RgbImage::new(7, 5);
        a.data.iter_mut().for_each(|v| *v = rng.gen());
        b.data.iter_mut().for_each(|v| *v = rng.gen());
        let mut mse = 0.0;
        for y in 0..5 {
            for x in 0..7 {
                let (p, q) = (a.pixel(x, y), b.pixel(x, y));
                for c in 0..3 {
                    mse += (p[c] - q[c]).powi(2);
                }
            }
        }
        mse /= 105.0;
        assert!((psnr(&a, &b).unwrap() - (-10.0 * mse.log10())).abs() < 1e-9);
        assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
    }

    #[test]
    fn ssim_identity_and_inverse_checkerboard() {
        let mut a = RgbImage::new(8, 8);
        for y in 0..8 {
            for x in 0..8 {
                let v = ((x + y) % 2) as f64;
                a.set_pixel(x, y, [v; 3]);
            }
        }
        assert_eq!(ssim_scalar(&a, &a).unwrap(), 1.0);
        let mut inv = a.clone();
        inv.data.iter_mut().for_each(|v| *v = 1.0 - *v);
        assert!(ssim_scalar(&a, &inv).unwrap() < 0.0);
        let map_mean = ssim_map(&a, &inv).unwrap().mean();
        assert!((ssim_scalar(&a, &inv).unwrap() - map_mean).abs() < 1e-12);
    }

    #[test]
    fn metrics_invariant_under_joint_horizontal_flip() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut a = RgbImage::new(13, 9);
        let mut b = RgbImage::new(13, 9);
        a.data.iter_mut().for_each(|v| *v = rng.gen());
        b.data.iter_mut().for_each(|v| *v = rng.gen());
        let (fa, fb) = (a.flip_horizontal(), b.flip_horizontal());
        assert!((psnr(&a, &b).unwrap() - psnr(&fa, &fb).unwrap()).abs() < 1e-12);
        assert!((ssim_scalar(&a, &b).unwrap() - ssim_scalar(&fa, &fb).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn aggregate_counting_cases() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        let a = aggregate(&v).unwrap();
        assert_eq!(a.worst5, 3.0);
        assert_eq!(a.avg, 50.5);
        let one = aggregate(&[4.25]).unwrap();
        assert_eq!((one.avg, one.worst5), (4.25, 4.25));
        assert!(aggregate(&[]).is_err());
    }

    #[test]
    fn inf_roundtrips_through_json() {
        let m = ViewMetric {
            psnr_db: f64::INFINITY,
            ssim: 1.0,
        };
        let s = serde_json::to_string(&m).unwrap();
        assert!(s.contains("\"inf\""));
        assert_eq!(serde_json::from_str::<ViewMetric>(&s).unwrap(), m);
    }

    #[test]
    fn empty_test_set_is_error() {
        let scene = Scene::new(vec![], [0.0; 3]);
        assert!(evaluate(&scene, &[], &[], &RenderOptions::default()).is_err());
    }

    proptest::proptest! {
        #[test]
        fn worst5_never_exceeds_average(values in proptest::collection::vec(-100.0f64..100.0, 1..200)) {
            let a = aggregate(&values).unwrap();
            let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            proptest::prop_assert!(a.worst5 <= a.avg + 1e-9);
            proptest::prop_assert!(a.avg >= lo - 1e-9 && a.avg <= hi + 1e-9);
        }
    }
}
