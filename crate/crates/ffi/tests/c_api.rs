use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use gsnbv_ffi::*;

fn last_error() -> String {
    let p = gsnbv_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn generate_render_and_score_through_handles() {
    unsafe {
        let layout = CString::new("occluded-cavity").unwrap();
        let mut scene = ptr::null_mut();
        assert_eq!(gsnbv_scene_generate(3, 80, layout.as_ptr(), &mut scene), GSNBV_OK);
        assert_eq!(gsnbv_scene_len(scene), 80);
        let mut vp = ptr::null_mut();
        assert_eq!(gsnbv_viewpoints_sample(8, 3.5, 1, 50.0, 16, 12, &mut vp), GSNBV_OK);
        assert_eq!(gsnbv_viewpoints_len(vp), 8);

        let n = 16 * 12;
        let mut rgb = vec![0.0; 3 * n];
        let mut depth = vec![0.0; n];
        let mut alpha = vec![0.0; n];
        let rc = gsnbv_render(
            scene,
            vp,
            2,
            rgb.as_mut_ptr(),
            rgb.len(),
            depth.as_mut_ptr(),
            depth.len(),
            alpha.as_mut_ptr(),
            alpha.len(),
        );
        assert_eq!(rc, GSNBV_OK);
        assert!(alpha.iter().any(|&a| a > 0.5));
        assert!(depth.iter().all(|&d| d >= 0.0));

        let mut p = 0.0;
        assert_eq!(gsnbv_psnr(rgb.as_ptr(), rgb.as_ptr(), 16, 12, &mut p), GSNBV_OK);
        assert_eq!(p, f64::INFINITY);
        let mut s = 0.0;
        assert_eq!(gsnbv_ssim(rgb.as_ptr(), rgb.as_ptr(), 16, 12, &mut s), GSNBV_OK);
        assert!((s - 1.0).abs() < 1e-12);

        let mut unc = vec![1.0; n];
        assert_eq!(
            gsnbv_oracle_uncertainty(rgb.as_ptr(), rgb.as_ptr(), 16, 12, unc.as_mut_ptr(), n),
            GSNBV_OK
        );
        assert!(unc.iter().all(|&u| u == 0.0));

        let ones = vec![1.0; n];
        let zeros = vec![0.0; n];
        let mut score = GsnbvViewScore::default();
        let rc = gsnbv_score(ones.as_ptr(), ones.as_ptr(), zeros.as_ptr(), 16, 12, 1.0, 0.1, 0.1, 1.0, &mut score);
        assert_eq!(rc, GSNBV_OK);
        assert!((score.total - n as f64 * 2.1).abs() < 1e-9);

        gsnbv_viewpoints_free(vp);
        gsnbv_scene_free(scene);
    }
}

#[test]
fn failures_report_codes_and_messages() {
    unsafe {
        let bad = CString::new("teapot").unwrap();
        let mut scene = ptr::null_mut();
        assert_eq!(gsnbv_scene_generate(1, 10, bad.as_ptr(), &mut scene), GSNBV_ERR_CONFIG);
        assert!(scene.is_null());
        assert!(last_error().contains("teapot"));

        assert_eq!(gsnbv_scene_generate(1, 10, ptr::null(), &mut scene), GSNBV_ERR_NULL);

        let missing = CString::new("/nonexistent/scene.json").unwrap();
        assert_eq!(gsnbv_scene_load(missing.as_ptr(), &mut scene), GSNBV_ERR_IO);
        assert!(last_error().contains("/nonexistent/scene.json"));

        let layout = CString::new("blob-cluster").unwrap();
        assert_eq!(gsnbv_scene_generate(1, 5, layout.as_ptr(), &mut scene), GSNBV_OK);
        let mut vp = ptr::null_mut();
        assert_eq!(gsnbv_viewpoints_sample(2, 3.0, 0, 50.0, 8, 8, &mut vp), GSNBV_OK);
        let mut small = vec![0.0; 10];
        let rc = gsnbv_render(scene, vp, 0, small.as_mut_ptr(), small.len(), ptr::null_mut(), 0, ptr::null_mut(), 0);
        assert_eq!(rc, GSNBV_ERR_BUFFER);
        let mut rgb = vec![0.0; 192];
        let rc = gsnbv_render(scene, vp, 9, rgb.as_mut_ptr(), rgb.len(), ptr::null_mut(), 0, ptr::null_mut(), 0);
        assert_eq!(rc, GSNBV_ERR_INVALID);
        assert!(last_error().contains("out of range"));

        let neg = vec![-1.0; 4];
        let r = vec![0.5; 4];
        let mut score = GsnbvViewScore::default();
        let rc = gsnbv_score(neg.as_ptr(), r.as_ptr(), r.as_ptr(), 2, 2, 1.0, 0.1, 0.1, 1.0, &mut score);
        assert_eq!(rc, GSNBV_ERR_INVALID);

        gsnbv_viewpoints_free(vp);
        gsnbv_scene_free(scene);
        gsnbv_scene_free(ptr::null_mut());
        assert_eq!(gsnbv_scene_len(ptr::null()), 0);
    }
}

#[test]
fn scene_files_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let path = CString::new(tmp.path().join("s.json").to_str().unwrap()).unwrap();
    unsafe {
        let layout = CString::new("textured-box").unwrap();
        let mut a = ptr::null_mut();
        assert_eq!(gsnbv_scene_generate(4, 30, layout.as_ptr(), &mut a), GSNBV_OK);
        assert_eq!(gsnbv_scene_save(a, path.as_ptr()), GSNBV_OK);
        let mut b = ptr::null_mut();
        assert_eq!(gsnbv_scene_load(path.as_ptr(), &mut b), GSNBV_OK);
        assert_eq!(gsnbv_scene_len(b), 30);
        gsnbv_scene_free(a);
        gsnbv_scene_free(b);
    }
}

const C_PROGRAM: &str = r#"
#include <math.h>
#include <stdio.h>
#include "gsnbv.h"

int main(void) {
    GsnbvScene *scene = NULL;
    GsnbvViewpoints *vp = NULL;
    double rgb[3 * 8 * 8];
    double p = 0.0;
    if (gsnbv_scene_generate(2, 20, "blob-cluster", &scene) != GSNBV_OK) return 1;
    if (gsnbv_viewpoints_sample(4, 3.5, 0, 50.0, 8, 8, &vp) != GSNBV_OK) return 2;
    if (gsnbv_render(scene, vp, 1, rgb, 3 * 8 * 8, NULL, 0, NULL, 0) != GSNBV_OK) return 3;
    if (gsnbv_psnr(rgb, rgb, 8, 8, &p) != GSNBV_OK || !isinf(p)) return 4;
    if (gsnbv_scene_generate(2, 20, "nope", &scene) != GSNBV_ERR_CONFIG) return 5;
    printf("%s\n", gsnbv_last_error_message());
    gsnbv_viewpoints_free(vp);
    gsnbv_scene_free(scene);
    return 0;
}
"#;

fn header_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("include")
}

/// The static library cargo placed next to this test's `deps` directory.
fn static_lib() -> Option<PathBuf> {
    let exe = std::env::current_exe().ok()?;
    let lib = exe.parent()?.parent()?.join("libgsnbv_ffi.a");
    lib.exists().then_some(lib)
}

#[test]
fn header_compiles_and_links_from_c() {
    let tmp = tempfile::tempdir().unwrap();
    let src = tmp.path().join("smoke.c");
    std::fs::write(&src, C_PROGRAM).unwrap();
    let syntax = Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(header_dir())
        .arg(&src)
        .status();
    let Ok(syntax) = syntax else {
        eprintln!("no C compiler on PATH; header check not run");
        return;
    };
    assert!(syntax.success(), "generated header does not compile");

    let Some(lib) = static_lib() else {
        eprintln!("static library not built alongside tests; link check not run");
        return;
    };
    let exe = tmp.path().join("smoke");
    let link = Command::new("cc")
        .args(["-std=c99", "-I"])
        .arg(header_dir())
        .arg(&src)
        .arg(&lib)
        .args(["-lm", "-lpthread", "-ldl", "-o"])
        .arg(&exe)
        .status()
        .unwrap();
    assert!(link.success(), "linking against {} failed", lib.display());
    let out = Command::new(&exe).output().unwrap();
    assert!(out.status.success(), "C smoke program exited with {:?}", out.status.code());
    assert!(String::from_utf8_lossy(&out.stdout).contains("nope"));
}
