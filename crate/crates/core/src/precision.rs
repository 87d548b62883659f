//! Emulation of mixed-precision matrix-multiply-accumulate arithmetic.
//!
//! Inputs are rounded to a narrow format (FP16 or TF32), multiplied, the
//! products rounded to FP32 and accumulated left to right in FP32. Every
//! rounding is round-to-nearest-even with gradual underflow and overflow to
//! infinity, computed exactly from `f64` values.
//!
//! The module also carries the rounding-error bounds for such dot products and
//! the coordinate error sweep that measures how the exponent error grows with
//! image size in global versus tile-local coordinates.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::tensor::{CoordMode, GaussianVector, PixelVector, PADDED_LEN};
use crate::{Error, Result};

/// Named binary floating-point formats used by the emulator.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FormatName {
    Fp16,
    Tf32,
    Fp32,
}

/// Parametric binary floating-point format.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct HalfFormat {
    pub name: FormatName,
    pub significand_bits: u32,
    pub exponent_bits: u32,
}

impl HalfFormat {
    pub const FP16: HalfFormat = HalfFormat {
        name: FormatName::Fp16,
        significand_bits: 10,
        exponent_bits: 5,
    };
    pub const TF32: HalfFormat = HalfFormat {
        name: FormatName::Tf32,
        significand_bits: 10,
        exponent_bits: 8,
    };
    pub const FP32: HalfFormat = HalfFormat {
        name: FormatName::Fp32,
        significand_bits: 23,
        exponent_bits: 8,
    };

    pub fn from_name(name: FormatName) -> Self {
        match name {
            FormatName::Fp16 => Self::FP16,
            FormatName::Tf32 => Self::TF32,
            FormatName::Fp32 => Self::FP32,
        }
    }

    /// `2^-m` for `m` significand bits.
    pub fn machine_epsilon(&self) -> f64 {
        pow2(-(self.significand_bits as i32))
    }

    fn bias(&self) -> i32 {
        (1 << (self.exponent_bits - 1)) - 1
    }

    /// Smallest normal exponent.
    pub fn min_exponent(&self) -> i32 {
        1 - self.bias()
    }

    /// Largest finite exponent.
    pub fn max_exponent(&self) -> i32 {
        self.bias()
    }

    pub fn max_finite(&self) -> f64 {
        let m = self.significand_bits as i32;
        (2.0 - pow2(-m)) * pow2(self.max_exponent())
    }

    pub fn min_normal(&self) -> f64 {
        pow2(self.min_exponent())
    }

    /// Spacing of the subnormal range, which is also the smallest subnormal.
    pub fn subnormal_spacing(&self) -> f64 {
        pow2(self.min_exponent() - self.significand_bits as i32)
    }

    /// Worst-case absolute error of rounding `x` into this format, assuming no
    /// overflow: zero for zero, half the subnormal spacing below the normal
    /// range, and `eps * |x|` otherwise.
    pub fn rounding_error_bound(&self, x: f64) -> f64 {
        let ax = x.abs();
        if ax == 0.0 {
            0.0
        } else if ax < self.min_normal() {
            0.5 * self.subnormal_spacing()
        } else {
            self.machine_epsilon() * ax
        }
    }
}

fn pow2(k: i32) -> f64 {
    debug_assert!((-1022..=1023).contains(&k));
    f64::from_bits(((k + 1023) as u64) << 52)
}

/// Unbiased binary exponent of a finite non-zero normal `f64`. Subnormal
/// `f64` inputs report -1023, which lies below every emulated format.
fn binary_exponent(x: f64) -> i32 {
    ((x.to_bits() >> 52) & 0x7ff) as i32 - 1023
}

/// Round `x` to the nearest value representable in `fmt`, ties to even.
///
/// Subnormals of the target format are produced, and magnitudes that round
/// beyond the largest finite value become signed infinity. Non-finite input
/// passes through.
pub fn round_to(x: f64, fmt: HalfFormat) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    let m = fmt.significand_bits as i32;
    let e = binary_exponent(x).max(fmt.min_exponent());
    let quantum = pow2(e - m);
    // Scaling by a power of two is exact, and so is the integer rounding.
    let r = (x / quantum).round_ties_even() * quantum;
    if r.abs() > fmt.max_finite() {
        f64::INFINITY.copysign(x)
    } else {
        r
    }
}

/// Fast path for hot loops: native `f32` conversion is round-to-nearest-even
/// with gradual underflow, identical to `round_to(x, FP32)`.
#[inline]
pub(crate) fn round_fp32(x: f64) -> f64 {
    x as f32 as f64
}

#[inline]
pub(crate) fn round_input(x: f64, fmt: HalfFormat) -> f64 {
    if fmt == HalfFormat::FP32 {
        round_fp32(x)
    } else {
        round_to(x, fmt)
    }
}

/// Record of every intermediate in one emulated dot product.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MmaTrace {
    pub format: FormatName,
    pub rounded_u: [f64; PADDED_LEN],
    pub rounded_v: [f64; PADDED_LEN],
    /// `R_F(R_H(u_i) * R_H(v_i))`.
    pub products: [f64; PADDED_LEN],
    /// Running sums `s_i`, with `s_1 = a_1`.
    pub partial_sums: [f64; PADDED_LEN],
    pub result: f64,
    /// Set when any rounded input, product or partial sum is non-finite.
    pub overflow: bool,
}

/// Emulated length-8 MMA dot product: inputs rounded to `input`, products
/// rounded to FP32, accumulated left to right in FP32.
pub fn emulated_mma(
    u: &[f64; PADDED_LEN],
    v: &[f64; PADDED_LEN],
    input: HalfFormat,
) -> (f64, MmaTrace) {
    let mut trace = MmaTrace {
        format: input.name,
        rounded_u: [0.0; PADDED_LEN],
        rounded_v: [0.0; PADDED_LEN],
        products: [0.0; PADDED_LEN],
        partial_sums: [0.0; PADDED_LEN],
        result: 0.0,
        overflow: false,
    };
    let mut overflow = false;
    let mut acc = 0.0;
    for i in 0..PADDED_LEN {
        let ru = round_to(u[i], input);
        let rv = round_to(v[i], input);
        let a = round_to(ru * rv, HalfFormat::FP32);
        acc = if i == 0 {
            a
        } else {
            round_to(acc + a, HalfFormat::FP32)
        };
        overflow |= !ru.is_finite() || !rv.is_finite() || !a.is_finite() || !acc.is_finite();
        trace.rounded_u[i] = ru;
        trace.rounded_v[i] = rv;
        trace.products[i] = a;
        trace.partial_sums[i] = acc;
    }
    trace.result = acc;
    trace.overflow = overflow;
    (acc, trace)
}

/// The accumulation half of [`emulated_mma`] on operands already rounded to
/// the input format. Sum of two FP32 values computed in `f64` and rounded
/// once is correctly rounded, so native `f32` conversion suffices.
#[inline]
pub fn mma_dot_prerounded(ru: &[f64; PADDED_LEN], rv: &[f64; PADDED_LEN]) -> f64 {
    let mut acc = round_fp32(ru[0] * rv[0]);
    for i in 1..PADDED_LEN {
        acc = round_fp32(acc + round_fp32(ru[i] * rv[i]));
    }
    acc
}

/// Dot product evaluated with error-free transformations (FMA two-product
/// and Neumaier summation). Accurate to a few units of `f64` roundoff in the
/// result plus `~1e-32 * sum |u_i v_i|`; used as the exact reference.
pub fn compensated_dot(u: &[f64], v: &[f64]) -> f64 {
    assert_eq!(u.len(), v.len());
    let mut sum = 0.0_f64;
    let mut comp = 0.0_f64;
    let mut add = |x: f64| {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            comp += (sum - t) + x;
        } else {
            comp += (x - t) + sum;
        }
        sum = t;
    };
    for (&a, &b) in u.iter().zip(v) {
        let p = a * b;
        let e = a.mul_add(b, -p);
        add(p);
        add(e);
    }
    sum + comp
}

/// Absolute error bounds for an emulated dot product.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ErrorBound {
    /// `sum |u_i v_i|`.
    pub abs_sum: f64,
    /// First-order bound `2 eps_H S`.
    pub leading_order: f64,
    /// Bound valid at every order, including subnormal inputs.
    pub rigorous: f64,
}

/// Bound the error of [`emulated_mma`] against the exact dot product.
///
/// Per term, with `e_u`, `e_v` the input rounding bounds,
/// `|R(u)R(v) - uv| <= e_u (|v| + e_v) + |u| e_v`, and the FP32 rounding of
/// the product adds `eps_F` times its magnitude (or half a subnormal
/// spacing). Recursive summation of `n` terms adds
/// `((1 + eps_F)^(n-1) - 1) * sum |a_i|`. The total is inflated by `2^-40`
/// to cover the `f64` evaluation of the bound itself. Returns an infinite
/// rigorous bound if any input overflows the format.
pub fn error_bound(u: &[f64; PADDED_LEN], v: &[f64; PADDED_LEN], input: HalfFormat) -> ErrorBound {
    let acc = HalfFormat::FP32;
    let eps_f = acc.machine_epsilon();
    let mut abs_sum = 0.0;
    let mut term_err = 0.0;
    let mut abs_a = 0.0;
    let mut overflow = false;
    for i in 0..PADDED_LEN {
        let (ui, vi) = (u[i], v[i]);
        let exact = (ui * vi).abs();
        abs_sum += exact;
        if ui == 0.0 || vi == 0.0 {
            continue;
        }
        if round_to(ui, input).is_infinite() || round_to(vi, input).is_infinite() {
            overflow = true;
        }
        let eu = input.rounding_error_bound(ui);
        let ev = input.rounding_error_bound(vi);
        let prod_err = eu * (vi.abs() + ev) + ui.abs() * ev;
        let prod_mag = exact + prod_err;
        let round_err = (eps_f * prod_mag).max(0.5 * acc.subnormal_spacing());
        term_err += prod_err + round_err;
        abs_a += prod_mag + round_err;
    }
    let growth = (1.0 + eps_f).powi(PADDED_LEN as i32 - 1) - 1.0;
    let rigorous = if overflow {
        f64::INFINITY
    } else {
        (term_err + growth * abs_a) * (1.0 + pow2(-40))
    };
    ErrorBound {
        abs_sum,
        leading_order: 2.0 * input.machine_epsilon() * abs_sum,
        rigorous,
    }
}

/// Outcome of checking a projected Gaussian's inverse covariance against the
/// parameter box assumed by the error analysis.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum RangeVerdict {
    Pass,
    Sigma11OutOfRange,
    Sigma12OutOfRange,
    Sigma22OutOfRange,
    TraceOutOfRange,
    DeterminantOutOfRange,
}

/// Checks `0 < s11 < 4`, `|s12| <= 2`, `0 < s22 < 4`, `0 < s11 + s22 <= 4`
/// and `0 < s11 s22 - s12^2 <= 4`.
pub fn parameter_range_check(inv_cov: [f64; 3]) -> RangeVerdict {
    let [s11, s12, s22] = inv_cov;
    let trace = s11 + s22;
    let det = s11 * s22 - s12 * s12;
    if !(s11 > 0.0 && s11 < 4.0) {
        RangeVerdict::Sigma11OutOfRange
    } else if !(s12.abs() <= 2.0) {
        RangeVerdict::Sigma12OutOfRange
    } else if !(s22 > 0.0 && s22 < 4.0) {
        RangeVerdict::Sigma22OutOfRange
    } else if !(trace > 0.0 && trace <= 4.0) {
        RangeVerdict::TraceOutOfRange
    } else if !(det > 0.0 && det <= 4.0) {
        RangeVerdict::DeterminantOutOfRange
    } else {
        RangeVerdict::Pass
    }
}

/// Report of a coordinate error sweep. Errors are `|beta_hat - beta|` over
/// trials that did not overflow.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepReport {
    pub mode: CoordMode,
    pub format: FormatName,
    pub seed: u64,
    pub trials: usize,
    pub widths: Vec<u32>,
    pub heights: Vec<u32>,
    pub max_err: Vec<f64>,
    pub mean_err: Vec<f64>,
    /// Max of the rigorous bound over the same trials.
    pub max_bound: Vec<f64>,
    /// Least-squares slope of `log(max_err)` against `log(width)`; `None`
    /// with fewer than two usable widths.
    pub slope: Option<f64>,
    pub overflow_count: u64,
    pub overflow_per_width: Vec<u64>,
    /// Trials whose error exceeded the rigorous bound. Zero unless the
    /// emulator or the bound is wrong.
    pub bound_violations: u64,
}

/// One sampled fragment of a sweep.
#[derive(Clone, Copy, Debug)]
pub struct SweepSample {
    pub pixel: [f64; 2],
    pub mean: [f64; 2],
    pub inv_cov: [f64; 3],
    pub opacity: f64,
    pub origin: [f64; 2],
}

#[derive(Clone, Copy, Debug, Default)]
struct TrialOutcome {
    err: f64,
    bound: f64,
    overflow: bool,
    violation: bool,
}

const LN_255: f64 = 5.541_263_545_158_426;

/// Inverse covariance from the box: eigenvalues of `Sigma'^-1` in `(0, 2]`
/// (projected semi-axes at least 0.5) at a random orientation.
fn sample_inv_cov(rng: &mut ChaCha8Rng) -> [f64; 3] {
    let l1 = 2.0 * (1.0 - rng.gen::<f64>());
    let l2 = 2.0 * (1.0 - rng.gen::<f64>());
    let theta = rng.gen::<f64>() * std::f64::consts::PI;
    let (s, c) = theta.sin_cos();
    [
        l1 * c * c + l2 * s * s,
        (l1 - l2) * c * s,
        l1 * s * s + l2 * c * c,
    ]
}

fn sample_opacity(rng: &mut ChaCha8Rng) -> f64 {
    let lo = 1.0 / 255.0;
    lo + (1.0 - lo) * rng.gen::<f64>()
}

/// Draw one sweep fragment for a `width x height` screen.
///
/// Global mode: pixel and mean uniform over the screen, no visibility
/// condition. Local mode: the fragment is conditioned on not being culled,
/// `beta >= -ln 255`; the mean is drawn uniformly from the visible ellipse
/// around the pixel clipped to the screen.
pub fn sample_fragment(rng: &mut ChaCha8Rng, width: u32, height: u32, mode: CoordMode) -> SweepSample {
    let (w, h) = (width as f64, height as f64);
    loop {
        let inv_cov = sample_inv_cov(rng);
        let opacity = sample_opacity(rng);
        let px = rng.gen_range(0..width) as f64;
        let py = rng.gen_range(0..height) as f64;
        let origin = match mode {
            CoordMode::Global => [0.0, 0.0],
            CoordMode::Local => crate::tiling::tile_center_of_pixel(px as u32, py as u32),
        };
        if mode == CoordMode::Global {
            let mean = [rng.gen::<f64>() * w, rng.gen::<f64>() * h];
            return SweepSample { pixel: [px, py], mean, inv_cov, opacity, origin };
        }
        // Visible set: (m - p)^T S^-1 (m - p) <= 2 (ln o + ln 255).
        let budget = 2.0 * (opacity.ln() + LN_255);
        if budget <= 0.0 {
            continue;
        }
        let [a, b, c] = inv_cov;
        let det = a * c - b * b;
        let half_x = (budget * c / det).sqrt();
        let half_y = (budget * a / det).sqrt();
        let (x0, x1) = ((px - half_x).max(0.0), (px + half_x).min(w));
        let (y0, y1) = ((py - half_y).max(0.0), (py + half_y).min(h));
        for _ in 0..256 {
            let mx = x0 + (x1 - x0) * rng.gen::<f64>();
            let my = y0 + (y1 - y0) * rng.gen::<f64>();
            let (dx, dy) = (mx - px, my - py);
            if a * dx * dx + 2.0 * b * dx * dy + c * dy * dy <= budget {
                return SweepSample { pixel: [px, py], mean: [mx, my], inv_cov, opacity, origin };
            }
        }
    }
}

impl SweepSample {
    pub fn vectors(&self) -> (PixelVector, GaussianVector) {
        let u = PixelVector::new(self.pixel, self.origin);
        let v = GaussianVector::from_params(self.mean, self.inv_cov, self.opacity, self.origin);
        (u, v)
    }
}

fn run_trial(sample: &SweepSample, fmt: HalfFormat, require_visible: bool) -> Option<TrialOutcome> {
    let (u, v) = sample.vectors();
    let (u8, v8) = (u.padded(), v.padded());
    let exact = compensated_dot(&u8, &v8);
    if require_visible && !(exact >= -LN_255 && exact < 0.0) {
        return None;
    }
    let (beta_hat, trace) = emulated_mma(&u8, &v8, fmt);
    if trace.overflow || !beta_hat.is_finite() {
        return Some(TrialOutcome { overflow: true, ..Default::default() });
    }
    let err = (beta_hat - exact).abs();
    let bound = error_bound(&u8, &v8, fmt).rigorous;
    Some(TrialOutcome { err, bound, overflow: false, violation: err > bound })
}

fn trial_rng(seed: u64, width_index: usize, trial: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((width_index as u64) << 40) | trial as u64);
    rng
}

/// Measure `|beta_hat - beta|` of emulated exponents over random fragments for
/// each width (height `9w/16`).
pub fn coordinate_error_sweep(
    widths: &[u32],
    mode: CoordMode,
    format: HalfFormat,
    trials: usize,
    seed: u64,
) -> Result<SweepReport> {
    if widths.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Validation("sweep widths must be strictly ascending".into()));
    }
    if widths.iter().any(|&w| w < 16) {
        return Err(Error::Validation("sweep widths must be at least one tile".into()));
    }
    let mut report = SweepReport {
        mode,
        format: format.name,
        seed,
        trials,
        widths: widths.to_vec(),
        heights: widths.iter().map(|&w| sweep_height(w)).collect(),
        max_err: Vec::new(),
        mean_err: Vec::new(),
        max_bound: Vec::new(),
        slope: None,
        overflow_count: 0,
        overflow_per_width: Vec::new(),
        bound_violations: 0,
    };
    if trials == 0 {
        report.widths.clear();
        report.heights.clear();
        return Ok(report);
    }
    for (wi, &width) in widths.iter().enumerate() {
        let height = sweep_height(width);
        let outcomes: Vec<TrialOutcome> = (0..trials)
            .into_par_iter()
            .map(|t| {
                let mut rng = trial_rng(seed, wi, t);
                loop {
                    let s = sample_fragment(&mut rng, width, height, mode);
                    if let Some(o) = run_trial(&s, format, mode == CoordMode::Local) {
                        return o;
                    }
                }
            })
            .collect();
        let mut max_err = 0.0_f64;
        let mut max_bound = 0.0_f64;
        let mut sum = 0.0;
        let mut ok = 0usize;
        let mut overflow = 0u64;
        for o in &outcomes {
            if o.overflow {
                overflow += 1;
                continue;
            }
            ok += 1;
            sum += o.err;
            max_err = max_err.max(o.err);
            max_bound = max_bound.max(o.bound);
            report.bound_violations += o.violation as u64;
        }
        report.max_err.push(max_err);
        report.mean_err.push(if ok > 0 { sum / ok as f64 } else { f64::NAN });
        report.max_bound.push(max_bound);
        report.overflow_per_width.push(overflow);
        report.overflow_count += overflow;
    }
    report.slope = loglog_slope(&report.widths, &report.max_err);
    Ok(report)
}

pub fn sweep_height(width: u32) -> u32 {
    width * 9 / 16
}

/// Least-squares slope of `ln y` on `ln x`, skipping non-positive or
/// non-finite `y`.
pub fn loglog_slope(xs: &[u32], ys: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = xs
        .iter()
        .zip(ys)
        .filter(|(_, &y)| y.is_finite() && y > 0.0)
        .map(|(&x, &y)| ((x as f64).ln(), y.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    Some(sxy / sxx)
}
