//! Image comparison metrics.

use serde::{Serialize, Serializer};

use crate::raster::{FragmentCounts, Image};
use crate::{Error, Result};

fn check_dims(a: &Image, b: &Image) -> Result<()> {
    if (a.width, a.height) != (b.width, b.height) {
        return Err(Error::Validation(format!(
            "image dimensions differ: {}x{} vs {}x{}",
            a.width, a.height, b.width, b.height
        )));
    }
    Ok(())
}

/// Mean squared error over all RGB channels.
pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    check_dims(a, b)?;
    let n = a.rgb.len() * 3;
    if n == 0 {
        return Ok(0.0);
    }
    let sum: f64 = a
        .rgb
        .iter()
        .zip(&b.rgb)
        .flat_map(|(x, y)| (0..3).map(move |c| (x[c] - y[c]) * (x[c] - y[c])))
        .sum();
    Ok(sum / n as f64)
}

/// `10 log10(1 / MSE)` for images in `[0, 1]`; `+inf` for identical images.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    let m = mse(a, b)?;
    Ok(if m == 0.0 { f64::INFINITY } else { -10.0 * m.log10() })
}

pub fn max_abs_diff(a: &Image, b: &Image) -> Result<f64> {
    check_dims(a, b)?;
    Ok(a.rgb
        .iter()
        .zip(&b.rgb)
        .flat_map(|(x, y)| (0..3).map(move |c| (x[c] - y[c]).abs()))
        .fold(0.0, f64::max))
}

/// Writes non-finite values as the strings `"inf"`, `"-inf"` or `"nan"`.
pub fn serialize_float<S: Serializer>(x: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if x.is_finite() {
        s.serialize_f64(*x)
    } else if x.is_nan() {
        s.serialize_str("nan")
    } else if *x > 0.0 {
        s.serialize_str("inf")
    } else {
        s.serialize_str("-inf")
    }
}

/// Signed difference `b - a` of each fragment counter.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct CountDelta {
    pub f_blend: i64,
    pub f_cull: i64,
    pub f_skip: i64,
    pub exp_calls: i64,
    #[serde(rename = "N")]
    pub n_splats: i64,
    pub overflow: i64,
}

impl CountDelta {
    pub fn between(a: &FragmentCounts, b: &FragmentCounts) -> Self {
        let d = |x: u64, y: u64| y as i64 - x as i64;
        CountDelta {
            f_blend: d(a.f_blend, b.f_blend),
            f_cull: d(a.f_cull, b.f_cull),
            f_skip: d(a.f_skip, b.f_skip),
            exp_calls: d(a.exp_calls, b.exp_calls),
            n_splats: d(a.n_splats, b.n_splats),
            overflow: d(a.overflow, b.overflow),
        }
    }

    pub fn is_zero(&self) -> bool {
        *self == CountDelta::default()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Comparison {
    #[serde(serialize_with = "serialize_float")]
    pub psnr: f64,
    pub max_abs_diff: f64,
    pub stats_delta: CountDelta,
}

pub fn compare(a: &Image, b: &Image, sa: &FragmentCounts, sb: &FragmentCounts) -> Result<Comparison> {
    Ok(Comparison {
        psnr: psnr(a, b)?,
        max_abs_diff: max_abs_diff(a, b)?,
        stats_delta: CountDelta::between(sa, sb),
    })
}
