//! Matrix formulation of the alpha exponent.
//!
//! For a pixel `p` and a projected Gaussian, `beta = ln o - 1/2 (mu' - p)^T
//! Sigma'^-1 (mu' - p)` factors as `u^T v`, where `u` depends only on the
//! pixel and `v` only on the Gaussian. A tile of 256 pixels against a batch
//! of `n` Gaussians is then one `256 x n` product. Coordinates may be taken
//! relative to the tile center to keep `u` small.

use serde::{Deserialize, Serialize};

use crate::precision::{mma_dot_prerounded, round_input, HalfFormat};
use crate::projection::ProjectedGaussian;
use crate::raster::{tile_pixel_coords, AlphaBackend, FragmentAlpha, TileAlphaSource, TileInput};
use crate::tiling::{tile_center, TILE_PIXELS, TILE_SIZE};
use crate::{Error, Result};

pub const VECTOR_LEN: usize = 6;
/// Length after repeating the constant term three times.
pub const PADDED_LEN: usize = 8;
/// `ln 255`; fragments with `beta < -LN_255` have `alpha < 1/255`.
pub const LN_255: f64 = 5.541_263_545_158_426;
pub const DEFAULT_BATCH_WIDTH: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum CoordMode {
    /// Screen coordinates.
    Global,
    /// Coordinates relative to the tile center.
    Local,
}

/// Reference point subtracted from pixel and Gaussian positions.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Origin {
    Global,
    TileCenter { tx: u32, ty: u32 },
}

impl Origin {
    pub fn for_tile(mode: CoordMode, tx: u32, ty: u32) -> Self {
        match mode {
            CoordMode::Global => Origin::Global,
            CoordMode::Local => Origin::TileCenter { tx, ty },
        }
    }

    pub fn point(&self) -> [f64; 2] {
        match *self {
            Origin::Global => [0.0, 0.0],
            Origin::TileCenter { tx, ty } => tile_center(tx, ty),
        }
    }
}

/// Arithmetic used for the `u^T v` dot products.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Arithmetic {
    /// Left-to-right `f64` accumulation over the padded vectors.
    Exact,
    /// Inputs rounded to the given format, FP32 products and accumulation.
    Mma(HalfFormat),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PixelVector {
    /// `(1, x, y, x^2, x y, y^2)` with `(x, y) = p - origin`.
    pub u: [f64; VECTOR_LEN],
    pub origin: [f64; 2],
}

impl PixelVector {
    pub fn new(p: [f64; 2], origin: [f64; 2]) -> Self {
        let x = p[0] - origin[0];
        let y = p[1] - origin[1];
        PixelVector { u: [1.0, x, y, x * x, x * y, y * y], origin }
    }

    pub fn padded(&self) -> [f64; PADDED_LEN] {
        let u = &self.u;
        [1.0, 1.0, 1.0, u[1], u[2], u[3], u[4], u[5]]
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GaussianVector {
    pub v: [f64; VECTOR_LEN],
    pub origin: [f64; 2],
}

impl GaussianVector {
    pub fn from_params(mean: [f64; 2], inv_cov: [f64; 3], opacity: f64, origin: [f64; 2]) -> Self {
        let [s11, s12, s22] = inv_cov;
        let x = mean[0] - origin[0];
        let y = mean[1] - origin[1];
        let q = s11 * x * x + 2.0 * s12 * x * y + s22 * y * y;
        let v = [
            opacity.ln() - 0.5 * q,
            s11 * x + s12 * y,
            s12 * x + s22 * y,
            -0.5 * s11,
            -s12,
            -0.5 * s22,
        ];
        GaussianVector { v, origin }
    }

    /// `(v0/3, v0/3, v0/3, v1, .., v5)`.
    pub fn padded(&self) -> [f64; PADDED_LEN] {
        let v = &self.v;
        let third = v[0] / 3.0;
        [third, third, third, v[1], v[2], v[3], v[4], v[5]]
    }
}

/// Pixel vector of `p`. With a tile-center origin, `p` must lie in that tile.
pub fn pixel_vector(p: [f64; 2], origin: Origin) -> Result<PixelVector> {
    if let Origin::TileCenter { tx, ty } = origin {
        let ts = TILE_SIZE as f64;
        let (x0, y0) = (tx as f64 * ts, ty as f64 * ts);
        if !(p[0] >= x0 && p[0] < x0 + ts && p[1] >= y0 && p[1] < y0 + ts) {
            return Err(Error::Contract(format!(
                "pixel ({}, {}) is outside tile ({tx}, {ty})",
                p[0], p[1]
            )));
        }
    }
    Ok(PixelVector::new(p, origin.point()))
}

pub fn gaussian_vector(g: &ProjectedGaussian, origin: Origin) -> GaussianVector {
    GaussianVector::from_params(g.mean2d, g.inv_cov, g.opacity, origin.point())
}

fn prepare(x: [f64; PADDED_LEN], arith: Arithmetic) -> [f64; PADDED_LEN] {
    match arith {
        Arithmetic::Exact => x,
        Arithmetic::Mma(fmt) => x.map(|c| round_input(c, fmt)),
    }
}

#[inline]
fn dot_prepared(u: &[f64; PADDED_LEN], v: &[f64; PADDED_LEN], arith: Arithmetic) -> f64 {
    match arith {
        Arithmetic::Exact => {
            let mut acc = u[0] * v[0];
            for i in 1..PADDED_LEN {
                acc += u[i] * v[i];
            }
            acc
        }
        Arithmetic::Mma(_) => mma_dot_prerounded(u, v),
    }
}

/// `beta = u^T v` over the padded vectors.
pub fn exponent(u: &PixelVector, v: &GaussianVector, arith: Arithmetic) -> f64 {
    dot_prepared(&prepare(u.padded(), arith), &prepare(v.padded(), arith), arith)
}

/// True when the fragment can be dropped before exponentiation. Non-finite
/// exponents other than `+inf` are culled.
#[inline]
pub fn early_cull(beta: f64) -> bool {
    !(beta >= -LN_255)
}

/// Exponents of the 256 pixels of a tile against a batch of Gaussians,
/// row-major by pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct ExponentBlock {
    pub m: usize,
    pub n: usize,
    pub beta: Vec<f64>,
    pub culled: Vec<bool>,
}

impl ExponentBlock {
    pub fn get(&self, pixel: usize, gaussian: usize) -> f64 {
        self.beta[pixel * self.n + gaussian]
    }
}

/// `B = U^T V` for tile `(tx, ty)`. Every vector of `batch` must have been
/// built with `origin`.
pub fn exponent_block(
    tx: u32,
    ty: u32,
    batch: &[GaussianVector],
    origin: Origin,
    arith: Arithmetic,
) -> Result<ExponentBlock> {
    let o = origin.point();
    if let Some(bad) = batch.iter().position(|v| v.origin != o) {
        return Err(Error::Contract(format!("batch vector {bad} was built for a different origin")));
    }
    let vs: Vec<_> = batch.iter().map(|v| prepare(v.padded(), arith)).collect();
    let n = batch.len();
    let mut beta = Vec::with_capacity(TILE_PIXELS * n);
    for i in 0..TILE_PIXELS {
        let u = prepare(pixel_vector(tile_pixel_coords(tx, ty, i), origin)?.padded(), arith);
        beta.extend(vs.iter().map(|v| dot_prepared(&u, v, arith)));
    }
    let culled = beta.iter().map(|&b| early_cull(b)).collect();
    Ok(ExponentBlock { m: TILE_PIXELS, n, beta, culled })
}

/// Alpha backend evaluating exponents batch by batch as matrix products.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Frag2MatBackend {
    pub mode: CoordMode,
    pub arith: Arithmetic,
    pub batch_width: usize,
    /// Cull on the exponent before calling `exp`.
    pub early_cull: bool,
}

impl Frag2MatBackend {
    pub fn new(mode: CoordMode, arith: Arithmetic) -> Self {
        Frag2MatBackend { mode, arith, batch_width: DEFAULT_BATCH_WIDTH, early_cull: true }
    }

    pub fn with_batch_width(mut self, n: usize) -> Self {
        self.batch_width = n.max(1);
        self
    }

    pub fn with_early_cull(mut self, on: bool) -> Self {
        self.early_cull = on;
        self
    }
}

pub struct Frag2MatSource<'a> {
    backend: &'a Frag2MatBackend,
    tile: &'a TileInput<'a>,
    origin: Origin,
    u: Vec<[f64; PADDED_LEN]>,
    v: Vec<[f64; PADDED_LEN]>,
    beta: Vec<f64>,
    start: usize,
    n: usize,
}

impl AlphaBackend for Frag2MatBackend {
    type Source<'a> = Frag2MatSource<'a>;

    fn batch_width(&self) -> usize {
        self.batch_width
    }

    fn tile_source<'a>(&'a self, tile: &'a TileInput<'a>) -> Frag2MatSource<'a> {
        let origin = Origin::for_tile(self.mode, tile.tx, tile.ty);
        let o = origin.point();
        let u = (0..TILE_PIXELS)
            .map(|i| prepare(PixelVector::new(tile_pixel_coords(tile.tx, tile.ty, i), o).padded(), self.arith))
            .collect();
        Frag2MatSource {
            backend: self,
            tile,
            origin,
            u,
            v: Vec::with_capacity(self.batch_width),
            beta: Vec::with_capacity(TILE_PIXELS * self.batch_width),
            start: 0,
            n: 0,
        }
    }
}

impl TileAlphaSource for Frag2MatSource<'_> {
    fn load_batch(&mut self, start: usize, end: usize) {
        let arith = self.backend.arith;
        self.v.clear();
        self.v.extend(
            self.tile.splats[start..end]
                .iter()
                .map(|g| prepare(gaussian_vector(g, self.origin).padded(), arith)),
        );
        self.start = start;
        self.n = end - start;
        self.beta.clear();
        for u in &self.u {
            for v in &self.v {
                self.beta.push(dot_prepared(u, v, arith));
            }
        }
    }

    #[inline]
    fn alpha(&mut self, pixel: usize, splat: usize) -> FragmentAlpha {
        let beta = self.beta[pixel * self.n + (splat - self.start)];
        let overflow = !beta.is_finite();
        if self.backend.early_cull && early_cull(beta) {
            return FragmentAlpha { alpha: None, overflow };
        }
        FragmentAlpha { alpha: Some(beta.exp()), overflow }
    }
}
