use super::{OptimConfig, TrainState};
use crate::error::{Error, Result};
use crate::image::RgbImage;
use crate::render::{render_backward, render_with, GaussianGrad, PixelGrads, RenderOptions};
use crate::scene::{Camera, Scene};
use crate::uncertainty::ssim::{ssim_map, ssim_mean_and_grad};

/// `(1 − λ)·L1 + λ·(1 − SSIM)` with L1 the mean absolute difference.
pub fn photometric_loss(rendered: &RgbImage, gt: &RgbImage, lambda_ssim: f64) -> Result<f64> {
    rendered.check_same_dims(gt)?;
    let l1 = mean_abs_diff(rendered, gt);
    let ssim = if lambda_ssim > 0.0 {
        ssim_map(rendered, gt)?.mean()
    } else {
        1.0
    };
    Ok((1.0 - lambda_ssim) * l1 + lambda_ssim * (1.0 - ssim))
}

fn mean_abs_diff(a: &RgbImage, b: &RgbImage) -> f64 {
    a.data.iter().zip(&b.data).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.data.len() as f64
}

/// Loss and its gradient with respect to every rendered color value.
pub fn photometric_loss_and_grad(rendered: &RgbImage, gt: &RgbImage, lambda_ssim: f64) -> Result<(f64, Vec<f64>)> {
    rendered.check_same_dims(gt)?;
    let n = rendered.data.len() as f64;
    let l1 = mean_abs_diff(rendered, gt);
    let mut grad: Vec<f64> = rendered
        .data
        .iter()
        .zip(&gt.data)
        .map(|(x, y)| (1.0 - lambda_ssim) * sign(x - y) / n)
        .collect();
    let mut loss = (1.0 - lambda_ssim) * l1;
    if lambda_ssim > 0.0 {
        let (ssim, g) = ssim_mean_and_grad(rendered, gt)?;
        loss += lambda_ssim * (1.0 - ssim);
        for (a, b) in grad.iter_mut().zip(&g) {
            *a -= lambda_ssim * b;
        }
    }
    Ok((loss, grad))
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Loss of `scene` against one posed image, with per-Gaussian gradients.
pub fn view_loss_and_grad(
    scene: &Scene,
    cam: &Camera,
    gt: &RgbImage,
    lambda_ssim: f64,
    opts: &RenderOptions,
) -> Result<(f64, Vec<GaussianGrad>)> {
    let (img, _) = render_with(scene, cam, opts)?;
    let (loss, d_color) = photometric_loss_and_grad(&img.color, gt, lambda_ssim)?;
    let grads = render_backward(
        scene,
        cam,
        opts,
        &PixelGrads {
            color: &d_color,
            depth: None,
            alpha: None,
        },
    )?;
    Ok((loss, grads))
}

/// Mean loss over `views` (indices into the active training set) and the
/// matching gradient for every Gaussian.
pub fn loss_gradients(state: &TrainState, views: &[usize], config: &OptimConfig) -> Result<(f64, Vec<GaussianGrad>)> {
    if views.is_empty() {
        return Err(Error::Invalid("empty view batch".into()));
    }
    let mut total = vec![GaussianGrad::default(); state.scene.len()];
    let mut loss = 0.0;
    let w = 1.0 / views.len() as f64;
    for &v in views {
        let view = state
            .active_views
            .get(v)
            .ok_or_else(|| Error::Invalid(format!("view {v} not in training set")))?;
        let (l, g) = view_loss_and_grad(&state.scene, &view.camera, &view.image, config.lambda_ssim, &config.render)?;
        loss += w * l;
        for (t, gi) in total.iter_mut().zip(&g) {
            t.add_scaled(gi, w);
        }
    }
    for (i, g) in total.iter().enumerate() {
        g.check_finite(i)?;
    }
    Ok((loss, total))
}
