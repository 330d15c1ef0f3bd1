//! Hand-crafted per-pixel cues shared by the heuristic predictor and the
//! regressor. Every component is squashed with `tanh(v / scale)` using fixed
//! scales, never by a per-image maximum, so values are comparable across views.

use serde::{Deserialize, Serialize};

use super::{UncertaintyMap, UqContext};
use crate::error::Result;
use crate::image::ScalarMap;
use crate::render::{DepthMap, RenderedImage};

/// Soft-saturation scales.
const VARIANCE_SCALE: f64 = 0.01;
const LAPLACIAN_SCALE: f64 = 0.05;
const DEPTH_GRADIENT_SCALE: f64 = 0.05;

/// Mixing weights; each map's weights sum to one so the output stays in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HeuristicWeights {
    pub render_variance: f64,
    pub render_laplacian: f64,
    pub render_coverage: f64,
    pub depth_gradient: f64,
    pub depth_coverage: f64,
}

impl Default for HeuristicWeights {
    fn default() -> Self {
        Self {
            render_variance: 0.3,
            render_laplacian: 0.3,
            render_coverage: 0.4,
            depth_gradient: 0.6,
            depth_coverage: 0.4,
        }
    }
}

pub const FEATURE_NAMES: [&str; 12] = [
    "color_variance",
    "laplacian_energy",
    "uncovered",
    "depth_gradient",
    "mean_r",
    "mean_g",
    "mean_b",
    "depth",
    "window_color_variance",
    "window_laplacian_energy",
    "window_uncovered",
    "window_depth_gradient",
];

pub(crate) struct Cues {
    pub variance: ScalarMap,
    pub laplacian: ScalarMap,
    pub uncovered: ScalarMap,
    pub depth_gradient: ScalarMap,
}

fn clamp_idx(v: isize, n: usize) -> usize {
    v.clamp(0, n as isize - 1) as usize
}

/// Squashed cue maps.
pub(crate) fn cues(rendered: &RenderedImage, depth: &DepthMap, ctx: &UqContext) -> Cues {
    let (w, h) = rendered.dims();
    let img = &rendered.color;
    let variance = ScalarMap::from_fn(w, h, |x, y| {
        let mut acc = 0.0;
        for c in 0..3 {
            let mut vals = [0.0; 9];
            let mut n = 0;
            for dy in -1..=1isize {
                for dx in -1..=1isize {
                    let (qx, qy) = (x as isize + dx, y as isize + dy);
                    if qx < 0 || qy < 0 || qx >= w as isize || qy >= h as isize {
                        continue;
                    }
                    vals[n] = img.pixel(qx as usize, qy as usize)[c];
                    n += 1;
                }
            }
            let vals = &vals[..n];
            let mean = vals.iter().sum::<f64>() / n as f64;
            acc += vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        }
        (acc / 3.0 / VARIANCE_SCALE).tanh()
    });
    let laplacian = ScalarMap::from_fn(w, h, |x, y| {
        let at = |dx: isize, dy: isize| img.pixel(clamp_idx(x as isize + dx, w), clamp_idx(y as isize + dy, h));
        let (c0, l, r, u, d) = (at(0, 0), at(-1, 0), at(1, 0), at(0, -1), at(0, 1));
        let mut e = 0.0;
        for c in 0..3 {
            let lap = l[c] + r[c] + u[c] + d[c] - 4.0 * c0[c];
            e += lap * lap;
        }
        (e / 3.0 / LAPLACIAN_SCALE).tanh()
    });
    let uncovered = ScalarMap::from_fn(w, h, |x, y| (1.0 - rendered.accum_alpha.get(x, y)).clamp(0.0, 1.0));
    let scale = if ctx.normalize_depth_features { ctx.depth_scale } else { 1.0 };
    let dm = &depth.depth;
    let depth_gradient = ScalarMap::from_fn(w, h, |x, y| {
        let gx = central(|i| dm.get(i, y), x, w);
        let gy = central(|i| dm.get(x, i), y, h);
        ((gx * gx + gy * gy).sqrt() / scale / DEPTH_GRADIENT_SCALE).tanh()
    });
    Cues {
        variance,
        laplacian,
        uncovered,
        depth_gradient,
    }
}

/// Central difference, one-sided at the borders.
fn central(f: impl Fn(usize) -> f64, i: usize, n: usize) -> f64 {
    if n < 2 {
        0.0
    } else if i == 0 {
        f(1) - f(0)
    } else if i == n - 1 {
        f(n - 1) - f(n - 2)
    } else {
        0.5 * (f(i + 1) - f(i - 1))
    }
}

/// 𝓡 mixes color variance, Laplacian energy and missing coverage; 𝓓 mixes
/// depth-gradient magnitude and missing coverage.
pub fn heuristic_uncertainty(
    rendered: &RenderedImage,
    depth: &DepthMap,
    ctx: &UqContext,
) -> Result<(UncertaintyMap, UncertaintyMap)> {
    depth.depth.check_same_dims(rendered.dims())?;
    let c = cues(rendered, depth, ctx);
    let w = &ctx.heuristic;
    let (width, height) = rendered.dims();
    let r = ScalarMap::from_fn(width, height, |x, y| {
        w.render_variance * c.variance.get(x, y)
            + w.render_laplacian * c.laplacian.get(x, y)
            + w.render_coverage * c.uncovered.get(x, y)
    });
    let d = ScalarMap::from_fn(width, height, |x, y| {
        w.depth_gradient * c.depth_gradient.get(x, y) + w.depth_coverage * c.uncovered.get(x, y)
    });
    Ok((UncertaintyMap::from_map(r), UncertaintyMap::from_map(d)))
}

/// Box mean over a (2r+1)² window, truncated at the border.
fn box_mean(m: &ScalarMap, r: usize) -> ScalarMap {
    let (w, h) = m.dims();
    let mut rows = ScalarMap::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let (lo, hi) = (x.saturating_sub(r), (x + r).min(w - 1));
            rows.set(x, y, (lo..=hi).map(|i| m.get(i, y)).sum::<f64>() / (hi - lo + 1) as f64);
        }
    }
    let mut out = ScalarMap::new(w, h);
    for y in 0..h {
        let (lo, hi) = (y.saturating_sub(r), (y + r).min(h - 1));
        for x in 0..w {
            out.set(x, y, (lo..=hi).map(|i| rows.get(x, i)).sum::<f64>() / (hi - lo + 1) as f64);
        }
    }
    out
}

/// Row-major feature matrix, `FEATURE_NAMES.len()` values per pixel.
pub fn pixel_features(rendered: &RenderedImage, depth: &DepthMap, ctx: &UqContext) -> Result<Vec<f64>> {
    depth.depth.check_same_dims(rendered.dims())?;
    let c = cues(rendered, depth, ctx);
    let (w, h) = rendered.dims();
    let means: Vec<ScalarMap> = (0..3)
        .map(|ch| {
            let plane = ScalarMap {
                width: w,
                height: h,
                data: rendered.color.channel(ch),
            };
            box_mean(&plane, 1)
        })
        .collect();
    let scale = if ctx.normalize_depth_features { ctx.depth_scale } else { 1.0 };
    let windowed = [&c.variance, &c.laplacian, &c.uncovered, &c.depth_gradient].map(|m| box_mean(m, 5));
    let mut out = Vec::with_capacity(w * h * FEATURE_NAMES.len());
    for i in 0..w * h {
        out.extend_from_slice(&[
            c.variance.data[i],
            c.laplacian.data[i],
            c.uncovered.data[i],
            c.depth_gradient.data[i],
            means[0].data[i],
            means[1].data[i],
            means[2].data[i],
            depth.depth.data[i] / scale,
            windowed[0].data[i],
            windowed[1].data[i],
            windowed[2].data[i],
            windowed[3].data[i],
        ]);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::RgbImage;

    fn covered(w: usize, h: usize, rgb: [f64; 3], depth: impl Fn(usize, usize) -> f64) -> (RenderedImage, DepthMap) {
        (
            RenderedImage {
                color: RgbImage::filled(w, h, rgb),
                accum_alpha: ScalarMap::filled(w, h, 1.0),
            },
            DepthMap {
                depth: ScalarMap::from_fn(w, h, depth),
            },
        )
    }

    #[test]
    fn constant_covered_view_has_zero_uncertainty() {
        let (r, d) = covered(6, 5, [0.4, 0.2, 0.9], |_, _| 2.0);
        let (ur, ud) = heuristic_uncertainty(&r, &d, &UqContext::default()).unwrap();
        assert!(ur.values.data.iter().all(|&v| v < 1e-12));
        assert!(ud.values.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn uncovered_pixel_gets_at_least_coverage_weight() {
        let (mut r, d) = covered(5, 5, [0.5; 3], |_, _| 1.0);
        r.accum_alpha.set(2, 2, 0.0);
        let ctx = UqContext::default();
        let (ur, ud) = heuristic_uncertainty(&r, &d, &ctx).unwrap();
        assert!(ur.values.get(2, 2) >= ctx.heuristic.render_coverage);
        assert!(ud.values.get(2, 2) >= ctx.heuristic.depth_coverage);
    }

    #[test]
    fn depth_step_peaks_on_edge_columns() {
        // Columns 0..=2 at depth 1, columns 3..=4 at depth 2. Central
        // differences give |∂D/∂x| = 0.5 at columns 2 and 3, zero elsewhere.
        let (r, d) = covered(5, 5, [0.5; 3], |x, _| if x <= 2 { 1.0 } else { 2.0 });
        let ctx = UqContext::default();
        let (_, ud) = heuristic_uncertainty(&r, &d, &ctx).unwrap();
        let expected_edge = ctx.heuristic.depth_gradient * (0.5 / DEPTH_GRADIENT_SCALE).tanh();
        for y in 0..5 {
            for x in 0..5 {
                let v = ud.values.get(x, y);
                if x == 2 || x == 3 {
                    assert!((v - expected_edge).abs() < 1e-12);
                } else {
                    assert_eq!(v, 0.0);
                }
            }
        }
    }

    #[test]
    fn outputs_stay_in_unit_interval() {
        let mut r = RenderedImage {
            color: RgbImage::new(7, 7),
            accum_alpha: ScalarMap::new(7, 7),
        };
        for (i, v) in r.color.data.iter_mut().enumerate() {
            *v = (i % 2) as f64;
        }
        let d = DepthMap {
            depth: ScalarMap::from_fn(7, 7, |x, y| ((x * 31 + y * 17) % 5) as f64 * 10.0),
        };
        let (ur, ud) = heuristic_uncertainty(&r, &d, &UqContext::default()).unwrap();
        for v in ur.values.data.iter().chain(&ud.values.data) {
            assert!((0.0..=1.0).contains(v));
        }
        let f = pixel_features(&r, &d, &UqContext::default()).unwrap();
        assert_eq!(f.len(), 49 * FEATURE_NAMES.len());
    }
}
