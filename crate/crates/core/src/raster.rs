//! Conditional alpha blending over depth-sorted tile lists, fragment
//! accounting and the linear computation model.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::projection::{project_scene, ProjectedGaussian, ProjectionDiagnostics};
use crate::scene::{Camera, Scene};
use crate::tiling::{build_tiles, TileGrid, TILE_PIXELS, TILE_SIZE};
use crate::{Error, Result};

/// Fragments with `alpha < CULL_ALPHA` do not contribute.
pub const CULL_ALPHA: f64 = 1.0 / 255.0;
/// A pixel stops blending once `T - alpha T < TERMINATE_T`.
pub const TERMINATE_T: f64 = 1e-4;

/// Fragment counters. Every (in-image pixel, splat) pair of a tile lands in
/// exactly one of `f_blend`, `f_cull`, `f_skip`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FragmentCounts {
    /// Fragments that passed the cull test, including the one that
    /// terminated its pixel.
    pub f_blend: u64,
    pub f_cull: u64,
    /// Fragments never evaluated because their pixel had terminated.
    pub f_skip: u64,
    pub exp_calls: u64,
    /// Total splats, summed over tile lists.
    #[serde(rename = "N")]
    pub n_splats: u64,
    /// Fragments whose exponent came out non-finite.
    pub overflow: u64,
}

impl FragmentCounts {
    pub fn merge(&mut self, o: &FragmentCounts) {
        self.f_blend += o.f_blend;
        self.f_cull += o.f_cull;
        self.f_skip += o.f_skip;
        self.exp_calls += o.exp_calls;
        self.n_splats += o.n_splats;
        self.overflow += o.overflow;
    }

    pub fn total_fragments(&self) -> u64 {
        self.f_blend + self.f_cull + self.f_skip
    }
}

/// Wall-clock milliseconds per stage; informational only.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub preprocess: f64,
    pub sorting: f64,
    pub blending: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FragmentStats {
    #[serde(flatten)]
    pub counts: FragmentCounts,
    pub stage_ms: StageTimings,
}

/// Row-major linear RGB image.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub width: u32,
    pub height: u32,
    pub rgb: Vec<[f64; 3]>,
}

impl Image {
    pub fn black(width: u32, height: u32) -> Self {
        Image { width, height, rgb: vec![[0.0; 3]; width as usize * height as usize] }
    }

    pub fn pixel(&self, x: u32, y: u32) -> [f64; 3] {
        self.rgb[y as usize * self.width as usize + x as usize]
    }
}

/// `alpha = o exp(-1/2 d^T Sigma'^-1 d)` with `d = mu' - p`.
pub fn alpha_reference(g: &ProjectedGaussian, p: [f64; 2]) -> f64 {
    let dx = g.mean2d[0] - p[0];
    let dy = g.mean2d[1] - p[1];
    let [a, b, c] = g.inv_cov;
    let q = a * dx * dx + 2.0 * b * dx * dy + c * dy * dy;
    g.opacity * (-0.5 * q).exp()
}

/// Alpha of one fragment as produced by a backend.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FragmentAlpha {
    /// `None` when the backend culled the fragment without evaluating `exp`.
    pub alpha: Option<f64>,
    /// The exponent was non-finite.
    pub overflow: bool,
}

/// Location of a tile and its splats, depth-sorted.
pub struct TileInput<'a> {
    pub tx: u32,
    pub ty: u32,
    pub splats: Vec<&'a ProjectedGaussian>,
}

/// Source of fragment alphas for the blend loop.
pub trait AlphaBackend: Sync {
    type Source<'a>: TileAlphaSource
    where
        Self: 'a;

    /// Splats consumed per batch.
    fn batch_width(&self) -> usize;

    fn tile_source<'a>(&'a self, tile: &'a TileInput<'a>) -> Self::Source<'a>;
}

pub trait TileAlphaSource {
    /// Prepare splats `start..end` of the tile list.
    fn load_batch(&mut self, start: usize, end: usize);

    /// Alpha of tile pixel `pixel` (row-major within the tile) for splat
    /// `splat`, which lies in the loaded batch.
    fn alpha(&mut self, pixel: usize, splat: usize) -> FragmentAlpha;
}

/// Per-fragment reference evaluation in double precision.
#[derive(Clone, Copy, Debug, Default)]
pub struct ReferenceBackend;

pub struct ReferenceSource<'a> {
    tile: &'a TileInput<'a>,
}

impl AlphaBackend for ReferenceBackend {
    type Source<'a> = ReferenceSource<'a>;

    fn batch_width(&self) -> usize {
        1
    }

    fn tile_source<'a>(&'a self, tile: &'a TileInput<'a>) -> ReferenceSource<'a> {
        ReferenceSource { tile }
    }
}

impl TileAlphaSource for ReferenceSource<'_> {
    fn load_batch(&mut self, _start: usize, _end: usize) {}

    fn alpha(&mut self, pixel: usize, splat: usize) -> FragmentAlpha {
        let p = tile_pixel_coords(self.tile.tx, self.tile.ty, pixel);
        let a = alpha_reference(self.tile.splats[splat], p);
        FragmentAlpha { alpha: Some(a), overflow: !a.is_finite() }
    }
}

/// Integer pixel coordinates of tile pixel `i`.
pub fn tile_pixel_coords(tx: u32, ty: u32, i: usize) -> [f64; 2] {
    let ts = TILE_SIZE as usize;
    [(tx as usize * ts + i % ts) as f64, (ty as usize * ts + i / ts) as f64]
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FragmentEvent {
    Blended,
    Culled,
    /// Passed the cull test but met the termination condition; not composited.
    Terminated,
    Skipped,
}

/// Hook for inspecting every fragment decision of [`blend_tile`].
pub trait BlendObserver {
    /// `t_before` and `t_after` are the pixel's transmittance around the
    /// event.
    fn fragment(&mut self, pixel: usize, splat: usize, event: FragmentEvent, t_before: f64, t_after: f64);
}

pub struct NoObserver;

impl BlendObserver for NoObserver {
    #[inline]
    fn fragment(&mut self, _: usize, _: usize, _: FragmentEvent, _: f64, _: f64) {}
}

/// Result of blending one tile; `color` and `transmittance` hold all 256
/// tile pixels, with out-of-image pixels left black.
pub struct TileOutput {
    pub color: Vec<[f64; 3]>,
    pub transmittance: Vec<f64>,
    pub counts: FragmentCounts,
}

/// Blend one tile's depth-ordered splats. Pixels outside `width x height`
/// generate no fragments.
pub fn blend_tile<B: AlphaBackend, O: BlendObserver>(
    tile: &TileInput<'_>,
    backend: &B,
    width: u32,
    height: u32,
    observer: &mut O,
) -> TileOutput {
    let mut color = vec![[0.0; 3]; TILE_PIXELS];
    let mut trans = vec![1.0; TILE_PIXELS];
    let mut done = vec![true; TILE_PIXELS];
    let mut counts = FragmentCounts { n_splats: tile.splats.len() as u64, ..Default::default() };
    let mut active = 0usize;
    for (i, d) in done.iter_mut().enumerate() {
        let [x, y] = tile_pixel_coords(tile.tx, tile.ty, i);
        if (x as u32) < width && (y as u32) < height {
            *d = false;
            active += 1;
        }
    }
    let in_image = active as u64;
    let n = tile.splats.len();
    let bw = backend.batch_width().max(1);
    let mut source = backend.tile_source(tile);
    let mut start = 0;
    while start < n {
        if active == 0 {
            counts.f_skip += in_image * (n - start) as u64;
            for j in start..n {
                for i in (0..TILE_PIXELS).filter(|&i| in_bounds(tile, i, width, height)) {
                    observer.fragment(i, j, FragmentEvent::Skipped, trans[i], trans[i]);
                }
            }
            break;
        }
        let end = (start + bw).min(n);
        source.load_batch(start, end);
        for j in start..end {
            let g = tile.splats[j];
            for i in 0..TILE_PIXELS {
                if done[i] {
                    if in_bounds(tile, i, width, height) {
                        counts.f_skip += 1;
                        observer.fragment(i, j, FragmentEvent::Skipped, trans[i], trans[i]);
                    }
                    continue;
                }
                let fa = source.alpha(i, j);
                counts.overflow += fa.overflow as u64;
                let t = trans[i];
                let Some(a) = fa.alpha else {
                    counts.f_cull += 1;
                    observer.fragment(i, j, FragmentEvent::Culled, t, t);
                    continue;
                };
                counts.exp_calls += 1;
                if !(a >= CULL_ALPHA) {
                    counts.f_cull += 1;
                    observer.fragment(i, j, FragmentEvent::Culled, t, t);
                    continue;
                }
                counts.f_blend += 1;
                let t_next = t - a * t;
                if t_next < TERMINATE_T {
                    done[i] = true;
                    active -= 1;
                    observer.fragment(i, j, FragmentEvent::Terminated, t, t);
                    continue;
                }
                let w = a * t;
                for (c, gc) in color[i].iter_mut().zip(g.color) {
                    *c += gc * w;
                }
                trans[i] = t_next;
                observer.fragment(i, j, FragmentEvent::Blended, t, t_next);
            }
        }
        start = end;
    }
    TileOutput { color, transmittance: trans, counts }
}

fn in_bounds(tile: &TileInput<'_>, i: usize, width: u32, height: u32) -> bool {
    let [x, y] = tile_pixel_coords(tile.tx, tile.ty, i);
    (x as u32) < width && (y as u32) < height
}

/// Blend pre-projected splats with the given backend.
pub fn render_splats<B: AlphaBackend>(
    projected: &[ProjectedGaussian],
    cam: &Camera,
    backend: &B,
) -> (Image, FragmentStats) {
    let t0 = Instant::now();
    let grid = build_tiles(projected, cam);
    let sorting = t0.elapsed().as_secs_f64() * 1e3;
    let (image, counts, blending) = blend_grid(&grid, projected, cam, backend);
    let stats = FragmentStats {
        counts,
        stage_ms: StageTimings { preprocess: 0.0, sorting, blending },
    };
    (image, stats)
}

fn blend_grid<B: AlphaBackend>(
    grid: &TileGrid,
    projected: &[ProjectedGaussian],
    cam: &Camera,
    backend: &B,
) -> (Image, FragmentCounts, f64) {
    let t0 = Instant::now();
    let outputs: Vec<TileOutput> = (0..grid.tile_count())
        .into_par_iter()
        .map(|k| {
            let tx = k as u32 % grid.tiles_x;
            let ty = k as u32 / grid.tiles_x;
            let tile = TileInput {
                tx,
                ty,
                splats: grid.lists[k].iter().map(|&i| &projected[i as usize]).collect(),
            };
            blend_tile(&tile, backend, cam.width, cam.height, &mut NoObserver)
        })
        .collect();
    let mut image = Image::black(cam.width, cam.height);
    let mut counts = FragmentCounts::default();
    for (k, out) in outputs.iter().enumerate() {
        counts.merge(&out.counts);
        let tx = k as u32 % grid.tiles_x;
        let ty = k as u32 / grid.tiles_x;
        for (i, c) in out.color.iter().enumerate() {
            let [x, y] = tile_pixel_coords(tx, ty, i);
            let (x, y) = (x as u32, y as u32);
            if x < cam.width && y < cam.height {
                image.rgb[(y * cam.width + x) as usize] = *c;
            }
        }
    }
    (image, counts, t0.elapsed().as_secs_f64() * 1e3)
}

/// Full pipeline: projection, tiling and blending on a black background.
pub fn render<B: AlphaBackend>(scene: &Scene, cam: &Camera, backend: &B) -> Result<(Image, FragmentStats)> {
    render_with_diagnostics(scene, cam, backend).map(|(img, stats, _)| (img, stats))
}

pub fn render_with_diagnostics<B: AlphaBackend>(
    scene: &Scene,
    cam: &Camera,
    backend: &B,
) -> Result<(Image, FragmentStats, ProjectionDiagnostics)> {
    cam.validate()?;
    let t0 = Instant::now();
    let (projected, diag) = project_scene(scene, cam);
    let preprocess = t0.elapsed().as_secs_f64() * 1e3;
    let (image, mut stats) = render_splats(&projected, cam, backend);
    stats.stage_ms.preprocess = preprocess;
    Ok((image, stats, diag))
}

/// `C = k_blend f_blend + (k_cull + k_alpha)(f_blend + f_cull)`.
pub fn computation_model(counts: &FragmentCounts, k_alpha: f64, k_cull: f64, k_blend: f64) -> Result<f64> {
    for (name, k) in [("k_alpha", k_alpha), ("k_cull", k_cull), ("k_blend", k_blend)] {
        if !(k >= 0.0) || !k.is_finite() {
            return Err(Error::Validation(format!("{name} must be a finite non-negative number, got {k}")));
        }
    }
    let fb = counts.f_blend as f64;
    let fc = counts.f_cull as f64;
    Ok(k_blend * fb + (k_cull + k_alpha) * (fb + fc))
}
