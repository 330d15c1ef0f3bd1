//! C interface to the gsnbv engine.
//!
//! Scenes and viewpoint sets live behind opaque handles created by
//! `*_generate`/`*_load`/`*_sample` and released with the matching `*_free`.
//! Every fallible call returns a status code (`GSNBV_OK` or a negative
//! `GSNBV_ERR_*`); the message of the last failure on the calling thread is
//! available from `gsnbv_last_error_message`. Images cross the boundary as
//! row-major `double` arrays, RGB interleaved.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use gsnbv::eval::{psnr, ssim_scalar};
use gsnbv::image::{RgbImage, ScalarMap};
use gsnbv::render::{render_with, DepthMap, RenderOptions};
use gsnbv::scene::{generate_synthetic_scene, sample_viewpoints, Scene, SceneSpec, ViewpointSet, ViewpointSpec};
use gsnbv::scoring::{total_score, ScoreWeights};
use gsnbv::uncertainty::{oracle_uncertainty, UncertaintyMap};
use gsnbv::Error;

pub const GSNBV_OK: i32 = 0;
pub const GSNBV_ERR_NULL: i32 = -1;
pub const GSNBV_ERR_INVALID: i32 = -2;
pub const GSNBV_ERR_DIMENSION: i32 = -3;
pub const GSNBV_ERR_IO: i32 = -4;
pub const GSNBV_ERR_FORMAT: i32 = -5;
pub const GSNBV_ERR_CONFIG: i32 = -6;
pub const GSNBV_ERR_BUFFER: i32 = -7;
pub const GSNBV_ERR_PANIC: i32 = -8;

/// Opaque scene handle.
pub struct GsnbvScene(Scene);

/// Opaque viewpoint-set handle.
pub struct GsnbvViewpoints(ViewpointSet);

/// Decomposed view score.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct GsnbvViewScore {
    pub l_blend: f64,
    pub l_blend_star: f64,
    pub sum_r: f64,
    pub sum_d: f64,
    pub total: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn code_of(e: &Error) -> i32 {
    match e {
        Error::Config(_) => GSNBV_ERR_CONFIG,
        Error::Dimension { .. } => GSNBV_ERR_DIMENSION,
        Error::Io { .. } => GSNBV_ERR_IO,
        Error::Format { .. } => GSNBV_ERR_FORMAT,
        Error::Round { source, .. } => code_of(source),
        _ => GSNBV_ERR_INVALID,
    }
}

enum Fail {
    Null(&'static str),
    Buffer(String),
    Core(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Core(e)
    }
}

/// Runs `f`, converting errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> i32 {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => GSNBV_OK,
        Ok(Err(Fail::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            GSNBV_ERR_NULL
        }
        Ok(Err(Fail::Buffer(msg))) => {
            set_error(msg);
            GSNBV_ERR_BUFFER
        }
        Ok(Err(Fail::Core(e))) => {
            set_error(e.to_string());
            code_of(&e)
        }
        Err(_) => {
            set_error("internal panic".into());
            GSNBV_ERR_PANIC
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &'static str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail::Core(Error::Invalid(format!("{what} is not UTF-8"))))
}

unsafe fn slice_arg<'a>(p: *const f64, len: usize, what: &'static str) -> Result<&'a [f64], Fail> {
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn out_slice<'a>(p: *mut f64, len: usize, need: usize, what: &'static str) -> Result<&'a mut [f64], Fail> {
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    if len < need {
        return Err(Fail::Buffer(format!("{what} holds {len} values, {need} needed")));
    }
    Ok(std::slice::from_raw_parts_mut(p, need))
}

unsafe fn handle<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or(Fail::Null(what))
}

fn rgb(data: &[f64], width: usize, height: usize) -> RgbImage {
    RgbImage {
        width,
        height,
        data: data.to_vec(),
    }
}

fn scalar(data: &[f64], width: usize, height: usize) -> ScalarMap {
    ScalarMap {
        width,
        height,
        data: data.to_vec(),
    }
}

/// Message of the last failed call on this thread, or NULL. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn gsnbv_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Generates a synthetic scene. `layout` is "blob-cluster", "textured-box" or
/// "occluded-cavity"; bounds are unit half-extents.
///
/// # Safety
/// `layout` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gsnbv_scene_generate(
    seed: u64,
    n_gaussians: usize,
    layout: *const c_char,
    out: *mut *mut GsnbvScene,
) -> i32 {
    guard(|| {
        let layout = str_arg(layout, "layout")?;
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        let spec = SceneSpec {
            seed,
            n_gaussians,
            layout: layout.into(),
            ..Default::default()
        };
        let s = generate_synthetic_scene(&spec)?;
        *out = Box::into_raw(Box::new(GsnbvScene(s.scene)));
        Ok(())
    })
}

/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gsnbv_scene_load(path: *const c_char, out: *mut *mut GsnbvScene) -> i32 {
    guard(|| {
        let path = PathBuf::from(str_arg(path, "path")?);
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        *out = Box::into_raw(Box::new(GsnbvScene(Scene::load(&path)?)));
        Ok(())
    })
}

/// # Safety
/// `scene` must come from this library; `path` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn gsnbv_scene_save(scene: *const GsnbvScene, path: *const c_char) -> i32 {
    guard(|| {
        let scene = handle(scene, "scene")?;
        let path = PathBuf::from(str_arg(path, "path")?);
        scene.0.save(&path)?;
        Ok(())
    })
}

/// Number of Gaussians, or 0 for NULL.
///
/// # Safety
/// `scene` must be NULL or come from this library.
#[no_mangle]
pub unsafe extern "C" fn gsnbv_scene_len(scene: *const GsnbvScene) -> usize {
    scene.as_ref().map_or(0, |s| s.0.len())
}

/// # Safety
/// `scene` must be NULL or an unfreed handle from this library.
#[no_mangle]
pub unsafe extern "C" fn gsnbv_scene_free(scene: *mut GsnbvScene) {
    if !scene.is_null() {
        drop(Box::from_raw(scene));
    }
}

/// Fibonacci-sphere candidate cameras looking at the origin.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gsnbv_viewpoints_sample(
    n: usize,
    radius: f64,
    seed: u64,
    fov_deg: f64,
    width: usize,
    height: usize,
    out: *mut *mut GsnbvViewpoints,
) -> i32 {
    guard(|| {
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        if width == 0 || height == 0 || !(fov_deg > 0.0 && fov_deg < 180.0) {
            return Err(Error::Invalid("image size and field of view must be positive".into()).into());
        }
        let set = sample_viewpoints(&ViewpointSpec {
            n,
            radius,
            seed,
            fov_deg,
            width,
            height,
            ..Default::default()
        })?;
        *out = Box::into_raw(Box::new(GsnbvViewpoints(set)));
        Ok(())
    })
}

/// # Safety
/// `vp` must be NULL or come from this library.
#[no_mangle]
pub unsafe extern "C" fn gsnbv_viewpoints_len(vp: *const GsnbvViewpoints) -> usize {
    vp.as_ref().map_or(0, |v| v.0.len())
}

/// # Safety
/// `vp` must be NULL or an unfreed handle from this library.
#[no_mangle]
pub unsafe extern "C" fn gsnbv_viewpoints_free(vp: *mut GsnbvViewpoints) {
    if !vp.is_null() {
        drop(Box::from_raw(vp));
    }
}

/// Renders `scene` from camera `index` of `vp`. `rgb` receives width·height·3
/// values; `depth` and `alpha` (either may be NULL) width·height each.
///
/// # Safety
/// Handles must come from this library; each non-NULL buffer must hold at
/// least its stated length.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn gsnbv_render(
    scene: *const GsnbvScene,
    vp: *const GsnbvViewpoints,
    index: usize,
    rgb: *mut f64,
    rgb_len: usize,
    depth: *mut f64,
    depth_len: usize,
    alpha: *mut f64,
    alpha_len: usize,
) -> i32 {
    guard(|| {
        let scene = handle(scene, "scene")?;
        let vp = handle(vp, "viewpoints")?;
        let cam = vp
            .0
            .cameras
            .get(index)
            .ok_or_else(|| Error::Invalid(format!("camera index {index} out of range")))?;
        let n = cam.width * cam.height;
        let rgb = out_slice(rgb, rgb_len, 3 * n, "rgb")?;
        let (img, d) = render_with(&scene.0, cam, &RenderOptions::default())?;
        rgb.copy_from_slice(&img.color.data);
        if !depth.is_null() {
            out_slice(depth, depth_len, n, "depth")?.copy_from_slice(&d.depth.data);
        }
        if !alpha.is_null() {
            out_slice(alpha, alpha_len, n, "alpha")?.copy_from_slice(&img.accum_alpha.data);
        }
        Ok(())
    })
}

/// Total view score from depth, render-uncertainty and depth-uncertainty maps
/// of width·height values each. Depth is divided by `depth_scale`.
///
/// # Safety
/// Input arrays must hold width·height values; `out` must be writable.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn gsnbv_score(
    depth: *const f64,
    r: *const f64,
    d: *const f64,
    width: usize,
    height: usize,
    lambda0: f64,
    lambda1: f64,
    lambda2: f64,
    depth_scale: f64,
    out: *mut GsnbvViewScore,
) -> i32 {
    guard(|| {
        let n = width * height;
        let depth = scalar(slice_arg(depth, n, "depth")?, width, height);
        let r = UncertaintyMap::from_map(scalar(slice_arg(r, n, "r")?, width, height));
        let du = UncertaintyMap::from_map(scalar(slice_arg(d, n, "d")?, width, height));
        let out = out.as_mut().ok_or(Fail::Null("out"))?;
        let w = ScoreWeights {
            lambda0,
            lambda1,
            lambda2,
        };
        w.validate()?;
        if !(depth_scale > 0.0) {
            return Err(Error::Invalid("depth_scale must be positive".into()).into());
        }
        let s = total_score(&DepthMap { depth }, &r, &du, &w, depth_scale)?;
        *out = GsnbvViewScore {
            l_blend: s.l_blend,
            l_blend_star: s.l_blend_star,
            sum_r: s.sum_r,
            sum_d: s.sum_d,
            total: s.total,
        };
        Ok(())
    })
}

/// PSNR in dB of two RGB images; identical images give +infinity.
///
/// # Safety
/// `a` and `b` must hold width·height·3 values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gsnbv_psnr(a: *const f64, b: *const f64, width: usize, height: usize, out: *mut f64) -> i32 {
    guard(|| {
        let n = 3 * width * height;
        let a = rgb(slice_arg(a, n, "a")?, width, height);
        let b = rgb(slice_arg(b, n, "b")?, width, height);
        *out.as_mut().ok_or(Fail::Null("out"))? = psnr(&a, &b)?;
        Ok(())
    })
}

/// Mean SSIM of two RGB images.
///
/// # Safety
/// `a` and `b` must hold width·height·3 values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gsnbv_ssim(a: *const f64, b: *const f64, width: usize, height: usize, out: *mut f64) -> i32 {
    guard(|| {
        let n = 3 * width * height;
        let a = rgb(slice_arg(a, n, "a")?, width, height);
        let b = rgb(slice_arg(b, n, "b")?, width, height);
        *out.as_mut().ok_or(Fail::Null("out"))? = ssim_scalar(&a, &b)?;
        Ok(())
    })
}

/// Per-pixel (1 − SSIM)/2 between a rendering and its ground truth.
///
/// # Safety
/// `rendered` and `gt` must hold width·height·3 values; `out` must hold
/// `out_len` ≥ width·height values.
#[no_mangle]
pub unsafe extern "C" fn gsnbv_oracle_uncertainty(
    rendered: *const f64,
    gt: *const f64,
    width: usize,
    height: usize,
    out: *mut f64,
    out_len: usize,
) -> i32 {
    guard(|| {
        let n = 3 * width * height;
        let a = rgb(slice_arg(rendered, n, "rendered")?, width, height);
        let b = rgb(slice_arg(gt, n, "gt")?, width, height);
        let out = out_slice(out, out_len, width * height, "out")?;
        out.copy_from_slice(&oracle_uncertainty(&a, &b)?.values.data);
        Ok(())
    })
}
