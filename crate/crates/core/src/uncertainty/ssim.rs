//! Windowed SSIM: 11×11 Gaussian window (σ = 1.5), C1 = 0.01², C2 = 0.03² on
//! unit dynamic range, per channel then averaged. Near the border the window
//! is truncated and renormalized to unit mass.

use crate::error::Result;
use crate::image::{RgbImage, ScalarMap};

pub const C1: f64 = 0.01 * 0.01;
pub const C2: f64 = 0.03 * 0.03;
pub const WINDOW_RADIUS: usize = 5;
pub const WINDOW_SIGMA: f64 = 1.5;

fn kernel() -> [f64; 2 * WINDOW_RADIUS + 1] {
    let mut k = [0.0; 2 * WINDOW_RADIUS + 1];
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - WINDOW_RADIUS as f64;
        *v = (-d * d / (2.0 * WINDOW_SIGMA * WINDOW_SIGMA)).exp();
    }
    let s: f64 = k.iter().sum();
    k.map(|v| v / s)
}

/// Separable truncated Gaussian filter with per-position renormalization.
struct Window {
    w: usize,
    h: usize,
    k: [f64; 2 * WINDOW_RADIUS + 1],
    inv_norm_x: Vec<f64>,
    inv_norm_y: Vec<f64>,
}

impl Window {
    fn new(w: usize, h: usize) -> Self {
        let k = kernel();
        let norm = |len: usize| -> Vec<f64> {
            (0..len)
                .map(|p| {
                    let lo = p.saturating_sub(WINDOW_RADIUS);
                    let hi = (p + WINDOW_RADIUS).min(len - 1);
                    1.0 / (lo..=hi).map(|q| k[q + WINDOW_RADIUS - p]).sum::<f64>()
                })
                .collect()
        };
        Self {
            w,
            h,
            k,
            inv_norm_x: norm(w),
            inv_norm_y: norm(h),
        }
    }

    /// Unnormalized separable correlation with the (symmetric) kernel.
    fn raw(&self, src: &[f64]) -> Vec<f64> {
        let (w, h, r) = (self.w, self.h, WINDOW_RADIUS);
        let mut tmp = vec![0.0; w * h];
        for y in 0..h {
            let row = &src[y * w..(y + 1) * w];
            for x in 0..w {
                let lo = x.saturating_sub(r);
                let hi = (x + r).min(w - 1);
                let mut s = 0.0;
                for q in lo..=hi {
                    s += self.k[q + r - x] * row[q];
                }
                tmp[y * w + x] = s;
            }
        }
        let mut out = vec![0.0; w * h];
        for y in 0..h {
            let lo = y.saturating_sub(r);
            let hi = (y + r).min(h - 1);
            for q in lo..=hi {
                let kv = self.k[q + r - y];
                let src_row = &tmp[q * w..(q + 1) * w];
                let dst = &mut out[y * w..(y + 1) * w];
                for (d, s) in dst.iter_mut().zip(src_row) {
                    *d += kv * s;
                }
            }
        }
        out
    }

    fn scale_by_norm(&self, v: &mut [f64]) {
        for y in 0..self.h {
            for x in 0..self.w {
                v[y * self.w + x] *= self.inv_norm_x[x] * self.inv_norm_y[y];
            }
        }
    }

    /// Weighted local mean.
    fn mean(&self, src: &[f64]) -> Vec<f64> {
        let mut out = self.raw(src);
        self.scale_by_norm(&mut out);
        out
    }

    /// Adjoint of `mean`.
    fn mean_adjoint(&self, src: &[f64]) -> Vec<f64> {
        let mut scaled = src.to_vec();
        self.scale_by_norm(&mut scaled);
        self.raw(&scaled)
    }
}

struct ChannelStats {
    mu_x: Vec<f64>,
    mu_y: Vec<f64>,
    exx: Vec<f64>,
    eyy: Vec<f64>,
    exy: Vec<f64>,
}

fn channel_stats(win: &Window, x: &[f64], y: &[f64]) -> ChannelStats {
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(y).map(|(a, b)| a * b).collect();
    ChannelStats {
        mu_x: win.mean(x),
        mu_y: win.mean(y),
        exx: win.mean(&xx),
        eyy: win.mean(&yy),
        exy: win.mean(&xy),
    }
}

#[inline]
fn ssim_terms(s: &ChannelStats, i: usize) -> (f64, f64, f64, f64) {
    let (mx, my) = (s.mu_x[i], s.mu_y[i]);
    let vx = s.exx[i] - mx * mx;
    let vy = s.eyy[i] - my * my;
    let cxy = s.exy[i] - mx * my;
    (
        2.0 * mx * my + C1,
        2.0 * cxy + C2,
        mx * mx + my * my + C1,
        vx + vy + C2,
    )
}

/// Per-pixel SSIM averaged over the three channels, in [-1, 1].
pub fn ssim_map(a: &RgbImage, b: &RgbImage) -> Result<ScalarMap> {
    a.check_same_dims(b)?;
    let (w, h) = a.dims();
    let win = Window::new(w, h);
    let mut out = ScalarMap::new(w, h);
    for c in 0..3 {
        let stats = channel_stats(&win, &a.channel(c), &b.channel(c));
        for (i, v) in out.data.iter_mut().enumerate() {
            let (a1, a2, b1, b2) = ssim_terms(&stats, i);
            *v += a1 * a2 / (b1 * b2) / 3.0;
        }
    }
    Ok(out)
}

/// Mean SSIM and its gradient with respect to every value of `x` (interleaved RGB).
pub fn ssim_mean_and_grad(x: &RgbImage, y: &RgbImage) -> Result<(f64, Vec<f64>)> {
    x.check_same_dims(y)?;
    let (w, h) = x.dims();
    let n = w * h;
    let win = Window::new(w, h);
    let scale = 1.0 / (3.0 * n as f64);
    let mut mean = 0.0;
    let mut grad = vec![0.0; 3 * n];
    for c in 0..3 {
        let xc = x.channel(c);
        let yc = y.channel(c);
        let stats = channel_stats(&win, &xc, &yc);
        let mut g_mu = vec![0.0; n];
        let mut g_exx = vec![0.0; n];
        let mut g_exy = vec![0.0; n];
        for i in 0..n {
            let (a1, a2, b1, b2) = ssim_terms(&stats, i);
            let s = a1 * a2 / (b1 * b2);
            mean += s * scale;
            let (mx, my) = (stats.mu_x[i], stats.mu_y[i]);
            g_mu[i] = scale
                * ((2.0 * my * a2 - 2.0 * my * a1) / (b1 * b2) - s * 2.0 * mx / b1 + s * 2.0 * mx / b2);
            g_exx[i] = scale * (-s / b2);
            g_exy[i] = scale * (2.0 * a1 / (b1 * b2));
        }
        let back_mu = win.mean_adjoint(&g_mu);
        let back_xx = win.mean_adjoint(&g_exx);
        let back_xy = win.mean_adjoint(&g_exy);
        for i in 0..n {
            grad[3 * i + c] = back_mu[i] + 2.0 * xc[i] * back_xx[i] + yc[i] * back_xy[i];
        }
    }
    Ok((mean, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(rng: &mut ChaCha8Rng, w: usize, h: usize) -> RgbImage {
        let mut img = RgbImage::new(w, h);
        img.data.iter_mut().for_each(|v| *v = rng.gen_range(0.0..1.0));
        img
    }

    #[test]
    fn identical_images_give_ones() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random_image(&mut rng, 9, 7);
        let m = ssim_map(&a, &a).unwrap();
        assert!(m.data.iter().all(|v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn constant_images_closed_form() {
        let half = RgbImage::filled(8, 8, [0.5; 3]);
        assert!(ssim_map(&half, &half).unwrap().data.iter().all(|v| (v - 1.0).abs() < 1e-12));
        let zero = RgbImage::filled(8, 8, [0.0; 3]);
        let one = RgbImage::filled(8, 8, [1.0; 3]);
        let expected = (C1 * C2) / ((1.0 + C1) * C2);
        let m = ssim_map(&zero, &one).unwrap();
        assert!(m.data.iter().all(|v| (v - expected).abs() < 1e-12));
    }

    /// Second implementation: explicit 2-D window sums at every pixel.
    fn reference_ssim(a: &RgbImage, b: &RgbImage) -> Vec<f64> {
        let (w, h) = a.dims();
        let r = WINDOW_RADIUS as i64;
        let g = |d: i64| (-(d * d) as f64 / (2.0 * WINDOW_SIGMA * WINDOW_SIGMA)).exp();
        let mut out = vec![0.0; w * h];
        for c in 0..3 {
            for py in 0..h as i64 {
                for px in 0..w as i64 {
                    let (mut sw, mut sx, mut sy, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
                    for qy in (py - r).max(0)..=(py + r).min(h as i64 - 1) {
                        for qx in (px - r).max(0)..=(px + r).min(w as i64 - 1) {
                            let wt = g(qx - px) * g(qy - py);
                            let xa = a.pixel(qx as usize, qy as usize)[c];
                            let xb = b.pixel(qx as usize, qy as usize)[c];
                            sw += wt;
                            sx += wt * xa;
                            sy += wt * xb;
                            sxx += wt * xa * xa;
                            syy += wt * xb * xb;
                            sxy += wt * xa * xb;
                        }
                    }
                    let (mx, my) = (sx / sw, sy / sw);
                    let vx = sxx / sw - mx * mx;
                    let vy = syy / sw - my * my;
                    let cov = sxy / sw - mx * my;
                    let s = (2.0 * mx * my + C1) * (2.0 * cov + C2) / ((mx * mx + my * my + C1) * (vx + vy + C2));
                    out[(py as usize) * w + px as usize] += s / 3.0;
                }
            }
        }
        out
    }

    #[test]
    fn matches_direct_window_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for (w, h) in [(8, 8), (13, 6)] {
            let a = random_image(&mut rng, w, h);
            let b = random_image(&mut rng, w, h);
            let ours = ssim_map(&a, &b).unwrap();
            let reference = reference_ssim(&a, &b);
            for (x, y) in ours.data.iter().zip(&reference) {
                assert!((x - y).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let a = random_image(&mut rng, 12, 10);
        let b = random_image(&mut rng, 12, 10);
        let ab = ssim_map(&a, &b).unwrap();
        let ba = ssim_map(&b, &a).unwrap();
        for (x, y) in ab.data.iter().zip(&ba.data) {
            assert!((x - y).abs() < 1e-14);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = random_image(&mut rng, 14, 12);
        let y = random_image(&mut rng, 14, 12);
        let (m, grad) = ssim_mean_and_grad(&x, &y).unwrap();
        assert!((m - ssim_map(&x, &y).unwrap().mean()).abs() < 1e-12);
        let h = 1e-6;
        for i in (0..x.data.len()).step_by(7) {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp.data[i] += h;
            xm.data[i] -= h;
            let fd = (ssim_map(&xp, &y).unwrap().mean() - ssim_map(&xm, &y).unwrap().mean()) / (2.0 * h);
            assert!((fd - grad[i]).abs() < 1e-7, "{i}: {fd} vs {}", grad[i]);
        }
    }

    #[test]
    fn dimension_mismatch_is_error() {
        assert!(ssim_map(&RgbImage::new(4, 4), &RgbImage::new(4, 5)).is_err());
    }
}
