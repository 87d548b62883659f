//! Subcommand implementations shared by the CLI and the tests.

use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::metrics::{compare, serialize_float, Comparison};
use crate::output::{write_image, write_json};
use crate::precision::{coordinate_error_sweep, HalfFormat, SweepReport};
use crate::projection::ProjectionDiagnostics;
use crate::raster::{computation_model, render_with_diagnostics, FragmentCounts, FragmentStats, Image, ReferenceBackend};
use crate::scene::{Camera, Scene};
use crate::tensor::{Arithmetic, CoordMode, Frag2MatBackend, DEFAULT_BATCH_WIDTH};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum BackendKind {
    /// Per-fragment double-precision alpha.
    Reference,
    /// Matrix formulation in double precision.
    Frag2mat,
    /// Matrix formulation with FP16 inputs and FP32 accumulation.
    Frag2matFp16,
    /// Matrix formulation with TF32 inputs and FP32 accumulation.
    Frag2matTf32,
}

impl BackendKind {
    pub fn arithmetic(self) -> Arithmetic {
        match self {
            BackendKind::Reference | BackendKind::Frag2mat => Arithmetic::Exact,
            BackendKind::Frag2matFp16 => Arithmetic::Mma(HalfFormat::FP16),
            BackendKind::Frag2matTf32 => Arithmetic::Mma(HalfFormat::TF32),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum SweepFormat {
    Fp16,
    Tf32,
}

impl From<SweepFormat> for HalfFormat {
    fn from(f: SweepFormat) -> Self {
        match f {
            SweepFormat::Fp16 => HalfFormat::FP16,
            SweepFormat::Tf32 => HalfFormat::TF32,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub scene: PathBuf,
    pub camera: PathBuf,
    pub backend: BackendKind,
    pub coords: CoordMode,
    pub batch_width: usize,
    pub early_cull: bool,
    pub out_image: Option<PathBuf>,
    pub out_report: Option<PathBuf>,
    pub seed: u64,
    pub k_alpha: f64,
    pub k_cull: f64,
    pub k_blend: f64,
}

impl RunConfig {
    pub fn new(scene: impl Into<PathBuf>, camera: impl Into<PathBuf>) -> Self {
        RunConfig {
            scene: scene.into(),
            camera: camera.into(),
            backend: BackendKind::Reference,
            coords: CoordMode::Local,
            batch_width: DEFAULT_BATCH_WIDTH,
            early_cull: true,
            out_image: None,
            out_report: None,
            seed: 0,
            k_alpha: 1.0,
            k_cull: 1.0,
            k_blend: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for path in [&self.scene, &self.camera] {
            if !path.exists() {
                return Err(Error::Validation(format!("{}: file not found", path.display())));
            }
        }
        if self.batch_width == 0 {
            return Err(Error::Validation("batch width must be positive".into()));
        }
        computation_model(&FragmentCounts::default(), self.k_alpha, self.k_cull, self.k_blend)?;
        Ok(())
    }

    pub fn label(&self) -> String {
        match self.backend {
            BackendKind::Reference => "reference".into(),
            b => format!("{}/{}", serde_plain(&b), serde_plain(&self.coords)),
        }
    }
}

fn serde_plain<T: Serialize>(v: &T) -> String {
    serde_json::to_value(v).ok().and_then(|v| v.as_str().map(str::to_owned)).unwrap_or_default()
}

/// Render a scene with an explicitly chosen backend.
pub fn render_scene(
    scene: &Scene,
    cam: &Camera,
    backend: BackendKind,
    coords: CoordMode,
    batch_width: usize,
    early_cull: bool,
) -> Result<(Image, FragmentStats, ProjectionDiagnostics)> {
    match backend {
        BackendKind::Reference => render_with_diagnostics(scene, cam, &ReferenceBackend),
        kind => {
            let b = Frag2MatBackend::new(coords, kind.arithmetic())
                .with_batch_width(batch_width)
                .with_early_cull(early_cull);
            render_with_diagnostics(scene, cam, &b)
        }
    }
}

fn load_inputs(cfg: &RunConfig) -> Result<(Scene, Camera)> {
    cfg.validate()?;
    Ok((Scene::load(&cfg.scene)?, Camera::load(&cfg.camera)?))
}

fn render_cfg(cfg: &RunConfig, scene: &Scene, cam: &Camera) -> Result<(Image, FragmentStats, ProjectionDiagnostics)> {
    render_scene(scene, cam, cfg.backend, cfg.coords, cfg.batch_width, cfg.early_cull)
}

#[derive(Clone, Debug, Serialize)]
pub struct RenderReport {
    pub backend: String,
    pub width: u32,
    pub height: u32,
    pub gaussians: usize,
    pub projection: ProjectionDiagnostics,
    pub stats: FragmentStats,
}

/// Render one configuration, writing the image and the fragment statistics.
pub fn cmd_render(cfg: &RunConfig) -> Result<(Image, RenderReport)> {
    let (scene, cam) = load_inputs(cfg)?;
    let (image, stats, projection) = render_cfg(cfg, &scene, &cam)?;
    if let Some(path) = &cfg.out_image {
        write_image(&image, path)?;
    }
    if let Some(path) = &cfg.out_report {
        write_json(&stats, path)?;
    }
    let report = RenderReport {
        backend: cfg.label(),
        width: cam.width,
        height: cam.height,
        gaussians: scene.len(),
        projection,
        stats,
    };
    Ok((image, report))
}

#[derive(Clone, Debug, Serialize)]
pub struct CompareReport {
    pub a: String,
    pub b: String,
    #[serde(flatten)]
    pub comparison: Comparison,
    pub stats_a: FragmentStats,
    pub stats_b: FragmentStats,
}

/// Render two configurations and compare the float images.
pub fn cmd_compare(a: &RunConfig, b: &RunConfig) -> Result<CompareReport> {
    let (scene_a, cam_a) = load_inputs(a)?;
    let (scene_b, cam_b) = if (&b.scene, &b.camera) == (&a.scene, &a.camera) {
        (scene_a.clone(), cam_a.clone())
    } else {
        load_inputs(b)?
    };
    if (cam_a.width, cam_a.height) != (cam_b.width, cam_b.height) {
        return Err(Error::Validation(format!(
            "camera dimensions differ: {}x{} vs {}x{}",
            cam_a.width, cam_a.height, cam_b.width, cam_b.height
        )));
    }
    let (img_a, stats_a, _) = render_cfg(a, &scene_a, &cam_a)?;
    let (img_b, stats_b, _) = render_cfg(b, &scene_b, &cam_b)?;
    let comparison = compare(&img_a, &img_b, &stats_a.counts, &stats_b.counts)?;
    let report = CompareReport { a: a.label(), b: b.label(), comparison, stats_a, stats_b };
    if let Some(path) = &a.out_report {
        write_json(&report, path)?;
    }
    Ok(report)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct Fractions {
    pub blend: f64,
    pub cull: f64,
    pub skip: f64,
}

impl Fractions {
    pub fn of(c: &FragmentCounts) -> Self {
        let total = c.total_fragments();
        if total == 0 {
            return Fractions::default();
        }
        let t = total as f64;
        Fractions { blend: c.f_blend as f64 / t, cull: c.f_cull as f64 / t, skip: c.f_skip as f64 / t }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ProfileReport {
    pub backend: String,
    pub counts: FragmentCounts,
    pub total_fragments: u64,
    pub fractions: Fractions,
    pub exp_calls_with_early_cull: u64,
    pub exp_calls_without_early_cull: u64,
    /// Rendered bytes agree between the two runs.
    pub identical_images: bool,
    /// Float images agree exactly between the two runs.
    pub identical_float_images: bool,
    pub k_alpha: f64,
    pub k_cull: f64,
    pub k_blend: f64,
    #[serde(serialize_with = "serialize_float")]
    pub c_total: f64,
    pub stage_ms: crate::raster::StageTimings,
}

/// Fragment breakdown of the matrix path with and without early culling.
/// The reference backend is profiled through the double-precision matrix
/// path, which makes the same decisions.
pub fn cmd_profile(cfg: &RunConfig) -> Result<ProfileReport> {
    let (scene, cam) = load_inputs(cfg)?;
    let backend = match cfg.backend {
        BackendKind::Reference => BackendKind::Frag2mat,
        b => b,
    };
    let (img_on, on, _) = render_scene(&scene, &cam, backend, cfg.coords, cfg.batch_width, true)?;
    let (img_off, off, _) = render_scene(&scene, &cam, backend, cfg.coords, cfg.batch_width, false)?;
    let c_total = computation_model(&on.counts, cfg.k_alpha, cfg.k_cull, cfg.k_blend)?;
    let report = ProfileReport {
        backend: RunConfig { backend, ..cfg.clone() }.label(),
        counts: on.counts,
        total_fragments: on.counts.total_fragments(),
        fractions: Fractions::of(&on.counts),
        exp_calls_with_early_cull: on.counts.exp_calls,
        exp_calls_without_early_cull: off.counts.exp_calls,
        identical_images: crate::output::to_rgb8(&img_on) == crate::output::to_rgb8(&img_off),
        identical_float_images: img_on == img_off,
        k_alpha: cfg.k_alpha,
        k_cull: cfg.k_cull,
        k_blend: cfg.k_blend,
        c_total,
        stage_ms: on.stage_ms,
    };
    if let Some(path) = &cfg.out_report {
        write_json(&report, path)?;
    }
    Ok(report)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepArgs {
    pub mode: CoordMode,
    pub format: SweepFormat,
    pub widths: Vec<u32>,
    pub trials: usize,
    pub seed: u64,
    pub out: Option<PathBuf>,
}

pub fn cmd_error_sweep(args: &SweepArgs) -> Result<SweepReport> {
    let report = coordinate_error_sweep(&args.widths, args.mode, args.format.into(), args.trials, args.seed)?;
    if let Some(path) = &args.out {
        write_json(&report, path)?;
    }
    Ok(report)
}

/// Write a scene as JSON, or as a PLY checkpoint for a `.ply` path.
pub fn save_scene(scene: &Scene, path: &Path) -> Result<()> {
    match path.extension().and_then(|e| e.to_str()) {
        Some(ext) if ext.eq_ignore_ascii_case("ply") => crate::scene::write_ply(scene, path),
        _ => crate::scene::write_synthetic(scene, path),
    }
}
