use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use tcsplat_ffi::*;

fn scenes() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenes")
}

fn cpath(p: PathBuf) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(tcs_last_error_message()) }.to_string_lossy().into_owned()
}

unsafe fn load(scene: &str, camera: &str) -> (*mut TcsScene, *mut TcsCamera) {
    let (mut s, mut c) = (ptr::null_mut(), ptr::null_mut());
    assert_eq!(tcs_scene_load(cpath(scenes().join(scene)).as_ptr(), &mut s), TcsStatus::Ok);
    assert_eq!(tcs_camera_load(cpath(scenes().join(camera)).as_ptr(), &mut c), TcsStatus::Ok);
    (s, c)
}

#[test]
fn version_is_package_version() {
    let v = unsafe { CStr::from_ptr(tcs_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn render_round_trip() {
    unsafe {
        let (scene, cam) = load("three.json", "camera_128.json");
        assert_eq!(tcs_scene_len(scene), 3);

        let mut r = ptr::null_mut();
        let st = tcs_render(scene, cam, TCS_BACKEND_REFERENCE, TCS_COORDS_LOCAL, 0, true, &mut r);
        assert_eq!(st, TcsStatus::Ok, "{}", last_error());
        let (mut w, mut h) = (0, 0);
        assert_eq!(tcs_render_dimensions(r, &mut w, &mut h), TcsStatus::Ok);
        assert_eq!((w, h), (128, 128));

        let mut stats = TcsStats::default();
        assert_eq!(tcs_render_stats(r, &mut stats), TcsStatus::Ok);
        assert!(stats.n_splats > 0);
        assert_eq!(stats.exp_calls, stats.f_blend + stats.f_cull);

        let mut small = vec![0.0; 10];
        assert_eq!(tcs_render_copy_rgb(r, small.as_mut_ptr(), small.len()), TcsStatus::BufferTooSmall);
        assert!(last_error().contains("needed"));
        let mut rgb = vec![-1.0; 128 * 128 * 3];
        assert_eq!(tcs_render_copy_rgb(r, rgb.as_mut_ptr(), rgb.len()), TcsStatus::Ok);
        assert!(rgb.iter().all(|x| (0.0..=1.0).contains(x)));
        assert!(rgb.iter().any(|&x| x > 0.0));

        let mut r2 = ptr::null_mut();
        let st = tcs_render(scene, cam, TCS_BACKEND_FRAG2MAT, TCS_COORDS_GLOBAL, 16, true, &mut r2);
        assert_eq!(st, TcsStatus::Ok);
        let mut psnr = 0.0;
        assert_eq!(tcs_psnr(r, r2, &mut psnr), TcsStatus::Ok);
        assert!(psnr >= 90.0, "{psnr}");
        let mut self_psnr = 0.0;
        assert_eq!(tcs_psnr(r, r, &mut self_psnr), TcsStatus::Ok);
        assert_eq!(self_psnr, f64::INFINITY);

        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("x.ppm");
        assert_eq!(tcs_render_write_image(r, cpath(out.clone()).as_ptr()), TcsStatus::Ok);
        assert_eq!(std::fs::read(&out).unwrap().len(), 15 + 128 * 128 * 3);

        tcs_render_free(r);
        tcs_render_free(r2);
        tcs_scene_free(scene);
        tcs_camera_free(cam);
    }
}

#[test]
fn errors_map_to_status_codes() {
    unsafe {
        let mut s = ptr::null_mut();
        let missing = CString::new("/no/such/scene.json").unwrap();
        assert_eq!(tcs_scene_load(missing.as_ptr(), &mut s), TcsStatus::Io);
        assert!(s.is_null());
        assert!(last_error().contains("/no/such/scene.json"));

        assert_eq!(tcs_scene_load(ptr::null(), &mut s), TcsStatus::NullPointer);
        assert_eq!(tcs_scene_load(missing.as_ptr(), ptr::null_mut()), TcsStatus::NullPointer);

        let dir = tempfile::tempdir().unwrap();
        let bad = dir.path().join("bad.json");
        std::fs::write(&bad, "{").unwrap();
        assert_eq!(tcs_scene_load(cpath(bad).as_ptr(), &mut s), TcsStatus::Format);

        let empty_ply = dir.path().join("e.ply");
        let props: String = tcsplat::scene::PLY_PROPERTIES.iter().map(|p| format!("property float {p}\n")).collect();
        std::fs::write(&empty_ply, format!("ply\nformat ascii 1.0\nelement vertex 0\n{props}end_header\n")).unwrap();
        assert_eq!(tcs_scene_load(cpath(empty_ply).as_ptr(), &mut s), TcsStatus::EmptyScene);

        let (scene, cam) = load("three.json", "camera_128.json");
        let mut r = ptr::null_mut();
        assert_eq!(tcs_render(scene, cam, 99, TCS_COORDS_LOCAL, 0, true, &mut r), TcsStatus::InvalidArgument);
        assert!(last_error().contains("backend"));
        assert_eq!(tcs_render(scene, cam, TCS_BACKEND_FRAG2MAT, 7, 0, true, &mut r), TcsStatus::InvalidArgument);
        assert_eq!(tcs_render(ptr::null(), cam, 0, 0, 0, true, &mut r), TcsStatus::NullPointer);
        assert!(r.is_null());

        let mut c = ptr::null_mut();
        assert_eq!(tcs_camera_new(0, 64, 50.0, 50.0, 0.0, 0.0, 0.2, ptr::null(), &mut c), TcsStatus::Validation);
        assert_eq!(tcs_camera_new(64, 64, 50.0, 50.0, 32.0, 32.0, 0.2, ptr::null(), &mut c), TcsStatus::Ok);
        assert_eq!(last_error(), "");
        tcs_camera_free(c);
        tcs_scene_free(scene);
        tcs_camera_free(cam);

        tcs_scene_free(ptr::null_mut());
        tcs_render_free(ptr::null_mut());
        assert_eq!(tcs_scene_len(ptr::null()), 0);
    }
}

#[test]
fn camera_new_matches_loaded_camera() {
    unsafe {
        let (scene, loaded) = load("three.json", "camera_128.json");
        let json: serde_like::Cam = serde_like::read(&scenes().join("camera_128.json"));
        let mut made = ptr::null_mut();
        let st = tcs_camera_new(json.width, json.height, json.fx, json.fy, json.cx, json.cy, json.near, json.view.as_ptr(), &mut made);
        assert_eq!(st, TcsStatus::Ok, "{}", last_error());
        let mut rgb = [vec![0.0; 128 * 128 * 3], vec![0.0; 128 * 128 * 3]];
        for (cam, buf) in [loaded, made].into_iter().zip(rgb.iter_mut()) {
            let mut r = ptr::null_mut();
            assert_eq!(tcs_render(scene, cam, TCS_BACKEND_REFERENCE, 0, 0, true, &mut r), TcsStatus::Ok);
            assert_eq!(tcs_render_copy_rgb(r, buf.as_mut_ptr(), buf.len()), TcsStatus::Ok);
            tcs_render_free(r);
        }
        assert_eq!(rgb[0], rgb[1]);
        tcs_scene_free(scene);
        tcs_camera_free(loaded);
        tcs_camera_free(made);
    }
}

mod serde_like {
    // Minimal field extraction so this test does not need a JSON dependency.
    pub struct Cam {
        pub width: u32,
        pub height: u32,
        pub fx: f64,
        pub fy: f64,
        pub cx: f64,
        pub cy: f64,
        pub near: f64,
        pub view: Vec<f64>,
    }

    fn field<'a>(text: &'a str, key: &str) -> &'a str {
        let start = text.find(&format!("\"{key}\"")).unwrap_or_else(|| panic!("{key}")) + key.len() + 2;
        let rest = text[start..].trim_start().trim_start_matches(':').trim_start();
        let end = if rest.starts_with('[') { rest.find(']').unwrap() + 1 } else { rest.find([',', '}', '\n']).unwrap() };
        rest[..end].trim()
    }

    pub fn read(path: &std::path::Path) -> Cam {
        let t = std::fs::read_to_string(path).unwrap();
        let num = |k: &str| field(&t, k).parse::<f64>().unwrap();
        let view = field(&t, "view").trim_matches(['[', ']']).split(',').map(|x| x.trim().parse().unwrap()).collect();
        Cam {
            width: num("width") as u32,
            height: num("height") as u32,
            fx: num("fx"),
            fy: num("fy"),
            cx: num("cx"),
            cy: num("cy"),
            near: num("near"),
            view,
        }
    }
}

#[test]
fn precision_entry_points() {
    unsafe {
        let mut r = 0.0;
        assert_eq!(tcs_round_to(1.0 + 1.0 / 4096.0, TCS_FORMAT_FP16, &mut r), TcsStatus::Ok);
        assert_eq!(r, 1.0);
        assert_eq!(tcs_round_to(65520.0, TCS_FORMAT_FP16, &mut r), TcsStatus::Ok);
        assert_eq!(r, f64::INFINITY);
        assert_eq!(tcs_round_to(0.1, TCS_FORMAT_FP32, &mut r), TcsStatus::Ok);
        assert_eq!(r, 0.1f32 as f64);
        assert_eq!(tcs_round_to(1.0, 5, &mut r), TcsStatus::InvalidArgument);
        assert_eq!(tcs_round_to(f64::NAN, TCS_FORMAT_TF32, &mut r), TcsStatus::InvalidArgument);

        let u = [1.0, 1.0, 1.0, 3.0, -2.0, 9.0, -6.0, 4.0];
        let v = [-1.0, -1.0, -1.0, 0.5, 0.25, -0.5, 0.125, -0.25];
        let (mut beta, mut ovf) = (0.0, true);
        assert_eq!(tcs_emulated_mma(u.as_ptr(), v.as_ptr(), TCS_FORMAT_FP16, &mut beta, &mut ovf), TcsStatus::Ok);
        let exact: f64 = u.iter().zip(&v).map(|(a, b)| a * b).sum();
        assert_eq!(beta, exact);
        assert!(!ovf);

        let big = [1.0, 1.0, 1.0, 300.0, 300.0, 90000.0, 90000.0, 90000.0];
        assert_eq!(tcs_emulated_mma(big.as_ptr(), v.as_ptr(), TCS_FORMAT_FP16, &mut beta, &mut ovf), TcsStatus::Ok);
        assert!(ovf);

        let mut b = TcsErrorBound::default();
        assert_eq!(tcs_error_bound(u.as_ptr(), v.as_ptr(), TCS_FORMAT_TF32, &mut b), TcsStatus::Ok);
        let abs: f64 = u.iter().zip(&v).map(|(a, b)| (a * b).abs()).sum();
        assert_eq!(b.abs_sum, abs);
        assert_eq!(b.leading_order, 2.0 * 2f64.powi(-10) * abs);
        assert!(b.rigorous >= b.leading_order);
        assert_eq!(tcs_error_bound(ptr::null(), v.as_ptr(), TCS_FORMAT_TF32, &mut b), TcsStatus::NullPointer);
    }
}

#[test]
fn header_declares_the_api() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/tcsplat.h")).unwrap();
    for name in [
        "tcs_version", "tcs_last_error_message", "tcs_scene_load", "tcs_scene_len", "tcs_scene_free",
        "tcs_camera_load", "tcs_camera_new", "tcs_camera_free", "tcs_render", "tcs_render_dimensions",
        "tcs_render_stats", "tcs_render_copy_rgb", "tcs_render_write_image", "tcs_render_free", "tcs_psnr",
        "tcs_round_to", "tcs_emulated_mma", "tcs_error_bound",
        "typedef struct TcsScene TcsScene", "TCS_STATUS_BUFFER_TOO_SMALL = 7", "TCS_FORMAT_TF32 1",
    ] {
        assert!(header.contains(name), "{name}");
    }
}

/// Compiles and runs a small C program against the header and static library.
#[test]
fn c_program_links_against_library() {
    let Some(cc) = ["cc", "gcc", "clang"].into_iter().find(|c| Command::new(c).arg("--version").output().is_ok()) else {
        eprintln!("no C compiler found, skipping");
        return;
    };
    let manifest = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    // Test binaries live in target/<profile>/deps; the static library is one level up.
    let exe = std::env::current_exe().unwrap();
    let lib_dir = exe.parent().unwrap().parent().unwrap();
    let lib = lib_dir.join("libtcsplat_ffi.a");
    if !lib.exists() {
        eprintln!("{} not built, skipping", lib.display());
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("main.c");
    std::fs::write(
        &src,
        r#"
#include <stdio.h>
#include "tcsplat.h"
int main(int argc, char **argv) {
    TcsScene *s = NULL; TcsCamera *c = NULL; TcsRender *r = NULL;
    if (tcs_scene_load(argv[1], &s) != TCS_STATUS_OK) return 1;
    if (tcs_camera_load(argv[2], &c) != TCS_STATUS_OK) return 2;
    if (tcs_render(s, c, TCS_BACKEND_FRAG2MAT_FP16, TCS_COORDS_LOCAL, 0, true, &r) != TCS_STATUS_OK) return 3;
    TcsStats st;
    tcs_render_stats(r, &st);
    if (tcs_scene_load("/missing.json", &s) != TCS_STATUS_IO) return 4;
    printf("%zu %llu %s\n", tcs_scene_len(NULL), (unsigned long long)st.n_splats, tcs_last_error_message());
    tcs_render_free(r); tcs_camera_free(c);
    return 0;
}
"#,
    )
    .unwrap();
    let bin = dir.path().join("main");
    let out = Command::new(cc)
        .arg(&src)
        .arg("-I")
        .arg(manifest.join("include"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let run = Command::new(&bin)
        .arg(scenes().join("three.json"))
        .arg(scenes().join("camera_128.json"))
        .output()
        .unwrap();
    assert!(run.status.success(), "exit {:?}", run.status.code());
    let text = String::from_utf8_lossy(&run.stdout);
    let fields: Vec<&str> = text.split_whitespace().collect();
    assert_eq!(fields[0], "0");
    assert!(fields[1].parse::<u64>().unwrap() > 0);
    assert!(text.contains("/missing.json"));
}
