//! C ABI over the `tcsplat` renderer.
//!
//! Objects are opaque handles created by `tcs_*_load` / `tcs_*_new` /
//! `tcs_render` and released with the matching `tcs_*_free`. Every fallible
//! function returns a [`TcsStatus`]; on failure a description is available
//! from [`tcs_last_error_message`] on the same thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use tcsplat::harness::{render_scene, BackendKind};
use tcsplat::precision::{emulated_mma, error_bound, round_to};
use tcsplat::{Camera, CoordMode, Error, FragmentStats, HalfFormat, Image, Scene};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TcsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    Validation = 5,
    EmptyScene = 6,
    BufferTooSmall = 7,
    Panic = 8,
}

pub const TCS_BACKEND_REFERENCE: u32 = 0;
pub const TCS_BACKEND_FRAG2MAT: u32 = 1;
pub const TCS_BACKEND_FRAG2MAT_FP16: u32 = 2;
pub const TCS_BACKEND_FRAG2MAT_TF32: u32 = 3;

pub const TCS_COORDS_GLOBAL: u32 = 0;
pub const TCS_COORDS_LOCAL: u32 = 1;

pub const TCS_FORMAT_FP16: u32 = 0;
pub const TCS_FORMAT_TF32: u32 = 1;
pub const TCS_FORMAT_FP32: u32 = 2;

/// Opaque scene handle.
pub struct TcsScene(Scene);
/// Opaque camera handle.
pub struct TcsCamera(Camera);
/// Opaque handle to a rendered image and its fragment statistics.
pub struct TcsRender {
    image: Image,
    stats: FragmentStats,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct TcsStats {
    pub f_blend: u64,
    pub f_cull: u64,
    pub f_skip: u64,
    pub exp_calls: u64,
    pub n_splats: u64,
    pub overflow: u64,
    pub preprocess_ms: f64,
    pub sorting_ms: f64,
    pub blending_ms: f64,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct TcsErrorBound {
    pub abs_sum: f64,
    pub leading_order: f64,
    pub rigorous: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).unwrap_or_default());
}

struct Failure(TcsStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Io { .. } => TcsStatus::Io,
            Error::Format { .. } | Error::Json(_) => TcsStatus::Format,
            Error::EmptyScene(_) => TcsStatus::EmptyScene,
            Error::InvalidGaussian { .. } | Error::Validation(_) => TcsStatus::Validation,
            Error::Contract(_) => TcsStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(TcsStatus::InvalidArgument, msg.into())
}

fn null(name: &str) -> Failure {
    Failure(TcsStatus::NullPointer, format!("{name} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> TcsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_last_error("");
            TcsStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("internal panic: {msg}"));
            TcsStatus::Panic
        }
    }
}

unsafe fn path_arg(p: *const c_char, name: &str) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return Err(null(name));
    }
    let s = CStr::from_ptr(p).to_str().map_err(|_| invalid(format!("{name} is not valid UTF-8")))?;
    Ok(PathBuf::from(s))
}

unsafe fn out_arg<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(name))
}

unsafe fn ref_arg<'a, T>(p: *const T, name: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(name))
}

unsafe fn array8(p: *const f64, name: &str) -> Result<[f64; 8], Failure> {
    if p.is_null() {
        return Err(null(name));
    }
    let mut out = [0.0; 8];
    out.copy_from_slice(std::slice::from_raw_parts(p, 8));
    Ok(out)
}

fn format_arg(format: u32) -> Result<HalfFormat, Failure> {
    match format {
        TCS_FORMAT_FP16 => Ok(HalfFormat::FP16),
        TCS_FORMAT_TF32 => Ok(HalfFormat::TF32),
        TCS_FORMAT_FP32 => Ok(HalfFormat::FP32),
        f => Err(invalid(format!("unknown format {f}"))),
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn tcs_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message for the last failed call on this thread, or an empty string.
/// Valid until the next `tcs_*` call on the same thread.
#[no_mangle]
pub extern "C" fn tcs_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Load a scene from a `.ply` checkpoint or a JSON scene file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tcs_scene_load(path: *const c_char, out: *mut *mut TcsScene) -> TcsStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = std::ptr::null_mut();
        let scene = Scene::load(path_arg(path, "path")?)?;
        *out = Box::into_raw(Box::new(TcsScene(scene)));
        Ok(())
    })
}

/// Number of Gaussians in a scene; 0 for a null handle.
///
/// # Safety
/// `scene` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn tcs_scene_len(scene: *const TcsScene) -> usize {
    scene.as_ref().map_or(0, |s| s.0.len())
}

/// # Safety
/// `scene` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn tcs_scene_free(scene: *mut TcsScene) {
    if !scene.is_null() {
        drop(Box::from_raw(scene));
    }
}

/// Load a camera from JSON.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tcs_camera_load(path: *const c_char, out: *mut *mut TcsCamera) -> TcsStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = std::ptr::null_mut();
        let cam = Camera::load(path_arg(path, "path")?)?;
        *out = Box::into_raw(Box::new(TcsCamera(cam)));
        Ok(())
    })
}

/// Create a pinhole camera. `view` points to 16 row-major doubles or is null
/// for the identity transform.
///
/// # Safety
/// `view` must be null or point to 16 doubles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn tcs_camera_new(
    width: u32,
    height: u32,
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    near: f64,
    view: *const f64,
    out: *mut *mut TcsCamera,
) -> TcsStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = std::ptr::null_mut();
        let mut cam = Camera::looking_down_z(width, height, fx);
        cam.fy = fy;
        cam.cx = cx;
        cam.cy = cy;
        cam.near = near;
        if !view.is_null() {
            cam.view.copy_from_slice(std::slice::from_raw_parts(view, 16));
        }
        cam.validate()?;
        *out = Box::into_raw(Box::new(TcsCamera(cam)));
        Ok(())
    })
}

/// # Safety
/// `camera` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn tcs_camera_free(camera: *mut TcsCamera) {
    if !camera.is_null() {
        drop(Box::from_raw(camera));
    }
}

/// Render `scene` through `camera`.
///
/// `backend` is one of `TCS_BACKEND_*` and `coords` one of `TCS_COORDS_*`;
/// the reference backend ignores `coords`. A `batch_width` of 0
/// selects the default.
///
/// # Safety
/// Handles must be live; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn tcs_render(
    scene: *const TcsScene,
    camera: *const TcsCamera,
    backend: u32,
    coords: u32,
    batch_width: u32,
    early_cull: bool,
    out: *mut *mut TcsRender,
) -> TcsStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = std::ptr::null_mut();
        let scene = &ref_arg(scene, "scene")?.0;
        let cam = &ref_arg(camera, "camera")?.0;
        let backend = match backend {
            TCS_BACKEND_REFERENCE => BackendKind::Reference,
            TCS_BACKEND_FRAG2MAT => BackendKind::Frag2mat,
            TCS_BACKEND_FRAG2MAT_FP16 => BackendKind::Frag2matFp16,
            TCS_BACKEND_FRAG2MAT_TF32 => BackendKind::Frag2matTf32,
            b => return Err(invalid(format!("unknown backend {b}"))),
        };
        let coords = match coords {
            TCS_COORDS_GLOBAL => CoordMode::Global,
            TCS_COORDS_LOCAL => CoordMode::Local,
            c => return Err(invalid(format!("unknown coordinate mode {c}"))),
        };
        let bw = if batch_width == 0 { tcsplat::tensor::DEFAULT_BATCH_WIDTH } else { batch_width as usize };
        let (image, stats, _) = render_scene(scene, cam, backend, coords, bw, early_cull)?;
        *out = Box::into_raw(Box::new(TcsRender { image, stats }));
        Ok(())
    })
}

/// # Safety
/// `render` must be a live handle; the out pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn tcs_render_dimensions(render: *const TcsRender, width: *mut u32, height: *mut u32) -> TcsStatus {
    guard(|| {
        let r = ref_arg(render, "render")?;
        *out_arg(width, "width")? = r.image.width;
        *out_arg(height, "height")? = r.image.height;
        Ok(())
    })
}

/// # Safety
/// `render` must be a live handle; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn tcs_render_stats(render: *const TcsRender, out: *mut TcsStats) -> TcsStatus {
    guard(|| {
        let s = &ref_arg(render, "render")?.stats;
        let c = &s.counts;
        *out_arg(out, "out")? = TcsStats {
            f_blend: c.f_blend,
            f_cull: c.f_cull,
            f_skip: c.f_skip,
            exp_calls: c.exp_calls,
            n_splats: c.n_splats,
            overflow: c.overflow,
            preprocess_ms: s.stage_ms.preprocess,
            sorting_ms: s.stage_ms.sorting,
            blending_ms: s.stage_ms.blending,
        };
        Ok(())
    })
}

/// Copy the row-major RGB image as `width * height * 3` doubles into `out`,
/// which holds `len` doubles.
///
/// # Safety
/// `render` must be a live handle; `out` must point to `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn tcs_render_copy_rgb(render: *const TcsRender, out: *mut f64, len: usize) -> TcsStatus {
    guard(|| {
        let img = &ref_arg(render, "render")?.image;
        if out.is_null() {
            return Err(null("out"));
        }
        let need = img.rgb.len() * 3;
        if len < need {
            return Err(Failure(TcsStatus::BufferTooSmall, format!("buffer holds {len} values, {need} needed")));
        }
        let dst = std::slice::from_raw_parts_mut(out, need);
        for (d, px) in dst.chunks_exact_mut(3).zip(&img.rgb) {
            d.copy_from_slice(px);
        }
        Ok(())
    })
}

/// Write the image as binary PPM, or PNG for a `.png` path.
///
/// # Safety
/// `render` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn tcs_render_write_image(render: *const TcsRender, path: *const c_char) -> TcsStatus {
    guard(|| {
        let r = ref_arg(render, "render")?;
        tcsplat::output::write_image(&r.image, path_arg(path, "path")?)?;
        Ok(())
    })
}

/// # Safety
/// `render` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn tcs_render_free(render: *mut TcsRender) {
    if !render.is_null() {
        drop(Box::from_raw(render));
    }
}

/// PSNR in dB between two renders; `+inf` for identical images.
///
/// # Safety
/// Handles must be live; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn tcs_psnr(a: *const TcsRender, b: *const TcsRender, out: *mut f64) -> TcsStatus {
    guard(|| {
        let (a, b) = (ref_arg(a, "a")?, ref_arg(b, "b")?);
        *out_arg(out, "out")? = tcsplat::metrics::psnr(&a.image, &b.image)?;
        Ok(())
    })
}

/// Round `x` to the nearest value of a `TCS_FORMAT_*` format.
///
/// # Safety
/// `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn tcs_round_to(x: f64, format: u32, out: *mut f64) -> TcsStatus {
    guard(|| {
        let fmt = format_arg(format)?;
        if !x.is_finite() {
            return Err(invalid("x must be finite"));
        }
        *out_arg(out, "out")? = round_to(x, fmt);
        Ok(())
    })
}

/// Emulated length-8 dot product with inputs in `format`, FP32 products and
/// left-to-right FP32 accumulation.
///
/// # Safety
/// `u` and `v` must point to 8 doubles; out pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn tcs_emulated_mma(
    u: *const f64,
    v: *const f64,
    format: u32,
    beta: *mut f64,
    overflow: *mut bool,
) -> TcsStatus {
    guard(|| {
        let (u, v) = (array8(u, "u")?, array8(v, "v")?);
        let (b, trace) = emulated_mma(&u, &v, format_arg(format)?);
        *out_arg(beta, "beta")? = b;
        *out_arg(overflow, "overflow")? = trace.overflow;
        Ok(())
    })
}

/// Error bounds of [`tcs_emulated_mma`] for the same inputs.
///
/// # Safety
/// `u` and `v` must point to 8 doubles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn tcs_error_bound(u: *const f64, v: *const f64, format: u32, out: *mut TcsErrorBound) -> TcsStatus {
    guard(|| {
        let (u, v) = (array8(u, "u")?, array8(v, "v")?);
        let b = error_bound(&u, &v, format_arg(format)?);
        *out_arg(out, "out")? = TcsErrorBound { abs_sum: b.abs_sum, leading_order: b.leading_order, rigorous: b.rigorous };
        Ok(())
    })
}
