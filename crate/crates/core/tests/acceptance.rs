//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use tcsplat::harness::{cmd_profile, RunConfig};
use tcsplat::metrics::{max_abs_diff, psnr};
use tcsplat::output::to_rgb8;
use tcsplat::precision::{
    compensated_dot, coordinate_error_sweep, emulated_mma, error_bound, round_to, sample_fragment, HalfFormat,
};
use tcsplat::projection::{project_scene, ProjectedGaussian};
use tcsplat::raster::{
    alpha_reference, blend_tile, render, BlendObserver, FragmentCounts, FragmentEvent, Image, ReferenceBackend,
    TileInput, CULL_ALPHA, TERMINATE_T,
};
use tcsplat::synthetic::{default_camera, random_scene, SceneParams};
use tcsplat::tensor::{exponent, Arithmetic, CoordMode, Frag2MatBackend, GaussianVector, PixelVector};
use tcsplat::tiling::{build_tiles, square_overlaps_tile, tile_center, TILE_PIXELS, TILE_SIZE};
use tcsplat::{Camera, Scene};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn render_frag2mat(scene: &Scene, cam: &Camera, mode: CoordMode, arith: Arithmetic, early_cull: bool) -> (Image, FragmentCounts) {
    let b = Frag2MatBackend::new(mode, arith).with_early_cull(early_cull);
    let (img, stats) = render(scene, cam, &b).expect("render");
    (img, stats.counts)
}

fn same_partition(a: &FragmentCounts, b: &FragmentCounts) -> bool {
    (a.f_blend, a.f_cull, a.f_skip, a.n_splats) == (b.f_blend, b.f_cull, b.f_skip, b.n_splats)
}

/// 1. Double-precision matrix path against the reference blend.
fn backend_equivalence() -> Outcome {
    let cases = [(10, 256), (100, 384), (300, 512), (600, 768), (1000, 1024)];
    let mut worst_psnr = f64::INFINITY;
    let mut worst_diff = 0.0_f64;
    let mut failures = Vec::new();
    for (k, &(count, size)) in cases.iter().enumerate() {
        let cam = default_camera(size, size);
        let scene = random_scene(&SceneParams { count, ..Default::default() }, &cam, 100 + k as u64).unwrap();
        let (ref_img, ref_stats) = render(&scene, &cam, &ReferenceBackend).unwrap();
        for mode in [CoordMode::Global, CoordMode::Local] {
            for early_cull in [false, true] {
                let (img, counts) = render_frag2mat(&scene, &cam, mode, Arithmetic::Exact, early_cull);
                let p = psnr(&ref_img, &img).unwrap();
                let d = max_abs_diff(&ref_img, &img).unwrap();
                worst_psnr = worst_psnr.min(p);
                worst_diff = worst_diff.max(d);
                // Without early culling every counter, exp calls included,
                // must agree; with it, exp calls drop by design.
                let counts_ok = if early_cull { same_partition(&counts, &ref_stats.counts) } else { counts == ref_stats.counts };
                if !(p >= 90.0 && d <= 1e-5 && counts_ok) {
                    failures.push(format!("{count}g/{size}px/{mode:?}/cull={early_cull}"));
                }
            }
        }
    }
    outcome(
        failures.is_empty(),
        format!("5 scenes x 2 coord modes x cull on/off; min PSNR {worst_psnr:.1} dB, max diff {worst_diff:.2e}, failing {failures:?}"),
    )
}

/// 2. exp-call accounting with and without early culling.
fn cull_accounting() -> Outcome {
    let mut failures = Vec::new();
    let mut culled = 0;
    for seed in 0..4u64 {
        let cam = default_camera(320, 240);
        let scene = random_scene(&SceneParams { count: 250, ..Default::default() }, &cam, 200 + seed).unwrap();
        for mode in [CoordMode::Global, CoordMode::Local] {
            let (img_on, on) = render_frag2mat(&scene, &cam, mode, Arithmetic::Exact, true);
            let (img_off, off) = render_frag2mat(&scene, &cam, mode, Arithmetic::Exact, false);
            culled += on.f_cull;
            let ok = on.exp_calls == on.f_blend
                && off.exp_calls == off.f_blend + off.f_cull
                && on.exp_calls < off.exp_calls
                && to_rgb8(&img_on) == to_rgb8(&img_off)
                && img_on == img_off;
            if !ok {
                failures.push(format!("seed {seed} {mode:?}: on {on:?} off {off:?}"));
            }
        }
    }
    outcome(failures.is_empty(), format!("8 renders, {culled} culled fragments; failing {failures:?}"))
}

/// Random finite double in the normal range of `fmt`.
fn random_normal(rng: &mut ChaCha8Rng, fmt: HalfFormat) -> f64 {
    let e = rng.gen_range(fmt.min_exponent()..=fmt.max_exponent());
    let m = 1.0 + rng.gen::<f64>();
    let x = m * 2f64.powi(e);
    let x = if x > fmt.max_finite() { fmt.max_finite() } else { x };
    if rng.gen() {
        -x
    } else {
        x
    }
}

/// 3. Relative rounding error of `round_to` never exceeds `2^-m`.
fn rounding_error_bound() -> Outcome {
    const SAMPLES: u64 = 1_000_000;
    let mut details = Vec::new();
    let mut pass = true;
    for fmt in [HalfFormat::FP16, HalfFormat::TF32, HalfFormat::FP32] {
        let eps = fmt.machine_epsilon();
        let (violations, half_mismatch) = (0..SAMPLES)
            .into_par_iter()
            .map(|i| {
                let mut rng = ChaCha8Rng::seed_from_u64(3);
                rng.set_stream(i);
                let x = random_normal(&mut rng, fmt);
                let r = round_to(x, fmt);
                let bad = !((r - x).abs() <= eps * x.abs());
                // `half` converts from f64 through f32, so compare on
                // f32-representable inputs where that path rounds once.
                let x32 = x as f32;
                let mismatch =
                    fmt == HalfFormat::FP16 && half::f16::from_f32(x32).to_f64() != round_to(x32 as f64, fmt);
                (bad as u64, mismatch as u64)
            })
            .reduce(|| (0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
        pass &= violations == 0 && half_mismatch == 0;
        details.push(format!("{:?}: {violations} violations", fmt.name));
        if fmt == HalfFormat::FP16 {
            details.push(format!("FP16 vs half crate: {half_mismatch} mismatches"));
        }
    }
    outcome(pass, format!("{SAMPLES} samples per format; {}", details.join(", ")))
}

/// 4. Emulated MMA error never exceeds the rigorous bound.
fn mma_error_bound() -> Outcome {
    const PAIRS: u64 = 1_000_000;
    let mut pass = true;
    let mut details = Vec::new();
    for fmt in [HalfFormat::FP16, HalfFormat::TF32] {
        let (violations, overflow, worst_ratio) = (0..PAIRS)
            .into_par_iter()
            .map(|i| {
                let mut rng = ChaCha8Rng::seed_from_u64(4);
                rng.set_stream(i);
                // Half the pairs in tile-local coordinates on a 1080p screen,
                // half in global coordinates on a 256-wide screen.
                let s = if i % 2 == 0 {
                    sample_fragment(&mut rng, 1920, 1080, CoordMode::Local)
                } else {
                    sample_fragment(&mut rng, 256, 144, CoordMode::Global)
                };
                let (u, v) = s.vectors();
                let (u8, v8) = (u.padded(), v.padded());
                let (beta, trace) = emulated_mma(&u8, &v8, fmt);
                if trace.overflow {
                    return (0u64, 1u64, 0.0);
                }
                let err = (beta - compensated_dot(&u8, &v8)).abs();
                let bound = error_bound(&u8, &v8, fmt).rigorous;
                let ratio = if bound > 0.0 { err / bound } else if err == 0.0 { 0.0 } else { f64::INFINITY };
                ((err > bound) as u64, 0, ratio)
            })
            .reduce(|| (0, 0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1, a.2.max(b.2)));
        pass &= violations == 0 && overflow == 0;
        details.push(format!(
            "{:?}: {violations} violations, {overflow} overflows, max err/bound {worst_ratio:.3}",
            fmt.name
        ));
    }
    outcome(pass, format!("{PAIRS} pairs per format; {}", details.join(", ")))
}

/// 5. Error growth of FP16 exponents with screen width, per coordinate mode.
fn error_growth_law() -> Outcome {
    let widths = [256, 512, 1024, 2048];
    let trials = 10_000;
    let global = coordinate_error_sweep(&widths, CoordMode::Global, HalfFormat::FP16, trials, 5).unwrap();
    let local = coordinate_error_sweep(&widths, CoordMode::Local, HalfFormat::FP16, trials, 5).unwrap();
    let tf32 = coordinate_error_sweep(&widths, CoordMode::Global, HalfFormat::TF32, trials, 5).unwrap();
    let in_band = |s: Option<f64>, target: f64| s.is_some_and(|s| (s - target).abs() <= 0.35);
    let checks = [
        ("global slope 2.0+-0.35", in_band(global.slope, 2.0)),
        ("local slope 1.0+-0.35", in_band(local.slope, 1.0)),
        ("global overflow at 2048 > 0", global.overflow_per_width[3] > 0),
        ("local overflow = 0", local.overflow_count == 0),
        ("bounds hold", global.bound_violations + local.bound_violations == 0),
    ];
    let failed: Vec<_> = checks.iter().filter(|c| !c.1).map(|c| c.0).collect();
    let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.3e}")).collect::<Vec<_>>().join(",");
    outcome(
        failed.is_empty(),
        format!(
            "global fp16 slope {:?} max_err [{}] overflow {:?}; local fp16 slope {:?} max_err [{}] overflow {}; \
             global tf32 slope {:?} (context); failing {failed:?}",
            global.slope.map(|s| (s * 1000.0).round() / 1000.0),
            fmt(&global.max_err),
            global.overflow_per_width,
            local.slope.map(|s| (s * 1000.0).round() / 1000.0),
            fmt(&local.max_err),
            local.overflow_count,
            tf32.slope.map(|s| (s * 1000.0).round() / 1000.0),
        ),
    )
}

/// 6. FP16 quality with global versus tile-local coordinates at 1080p.
fn fp16_quality_ablation() -> Outcome {
    let cam = default_camera(1920, 1080);
    let params = SceneParams { count: 4000, sigma_px: [1.0, 24.0], ..Default::default() };
    let scene = random_scene(&params, &cam, 6).unwrap();
    let (reference, _) = render(&scene, &cam, &ReferenceBackend).unwrap();
    let fp16 = Arithmetic::Mma(HalfFormat::FP16);
    let (global, gc) = render_frag2mat(&scene, &cam, CoordMode::Global, fp16, true);
    let (local, lc) = render_frag2mat(&scene, &cam, CoordMode::Local, fp16, true);
    let pg = psnr(&reference, &global).unwrap();
    let pl = psnr(&reference, &local).unwrap();
    outcome(
        pl - pg >= 20.0 && pl >= 40.0,
        format!(
            "PSNR fp16-global {pg:.2} dB (overflowed fragments {}), fp16-local {pl:.2} dB (overflowed {}), gap {:.2} dB",
            gc.overflow,
            lc.overflow,
            pl - pg
        ),
    )
}

/// Records per-pixel fragment events of one tile.
struct Recorder {
    events: Vec<Vec<(FragmentEvent, f64, f64)>>,
}

impl BlendObserver for Recorder {
    fn fragment(&mut self, pixel: usize, _splat: usize, event: FragmentEvent, t_before: f64, t_after: f64) {
        self.events[pixel].push((event, t_before, t_after));
    }
}

/// Straightforward per-pixel blend over all splats covering the pixel's tile.
fn brute_force_pixel(projected: &[ProjectedGaussian], x: u32, y: u32) -> ([f64; 3], FragmentCounts) {
    let (tx, ty) = (x / TILE_SIZE, y / TILE_SIZE);
    let mut list: Vec<&ProjectedGaussian> =
        projected.iter().filter(|g| square_overlaps_tile(g.mean2d, g.radius, tx, ty)).collect();
    list.sort_by(|a, b| a.depth.total_cmp(&b.depth).then(a.source.cmp(&b.source)));
    let mut c = [0.0; 3];
    let mut t = 1.0;
    let mut counts = FragmentCounts::default();
    let mut done = false;
    for g in list {
        if done {
            counts.f_skip += 1;
            continue;
        }
        let a = alpha_reference(g, [x as f64, y as f64]);
        counts.exp_calls += 1;
        if a < CULL_ALPHA {
            counts.f_cull += 1;
            continue;
        }
        counts.f_blend += 1;
        if t - a * t < TERMINATE_T {
            done = true;
            continue;
        }
        let w = a * t;
        for k in 0..3 {
            c[k] += g.color[k] * w;
        }
        t -= a * t;
    }
    (c, counts)
}

/// 7. Transmittance, termination and fragment accounting on random scenes.
fn blend_semantics() -> Outcome {
    let scenes = 300u64;
    let results: Vec<Vec<String>> = (0..scenes)
        .into_par_iter()
        .map(|seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(700 + seed);
            let (w, h) = (rng.gen_range(20..70u32), rng.gen_range(20..60u32));
            let cam = default_camera(w, h);
            let params = SceneParams {
                count: rng.gen_range(1..=100),
                sigma_px: [0.5, 8.0],
                opacity: [0.02, 1.0],
                ..Default::default()
            };
            let scene = random_scene(&params, &cam, seed).unwrap();
            let (projected, _) = project_scene(&scene, &cam);
            let grid = build_tiles(&projected, &cam);
            let mut errs = Vec::new();
            let mut total = FragmentCounts::default();
            let mut exposure = 0u64;
            let matrix = Frag2MatBackend::new(CoordMode::Local, Arithmetic::Exact);
            for ty in 0..grid.tiles_y {
                for tx in 0..grid.tiles_x {
                    let tile = TileInput {
                        tx,
                        ty,
                        splats: grid.list(tx, ty).iter().map(|&i| &projected[i as usize]).collect(),
                    };
                    let mut rec = Recorder { events: vec![Vec::new(); TILE_PIXELS] };
                    let out = blend_tile(&tile, &ReferenceBackend, w, h, &mut rec);
                    let out_m = blend_tile(&tile, &matrix, w, h, &mut tcsplat::raster::NoObserver);
                    if out_m.counts.f_blend != out.counts.f_blend || out_m.counts.f_skip != out.counts.f_skip {
                        errs.push(format!("seed {seed} tile ({tx},{ty}): matrix path partition differs"));
                    }
                    total.merge(&out.counts);
                    for (i, ev) in rec.events.iter().enumerate() {
                        let (x, y) = (tx * TILE_SIZE + i as u32 % TILE_SIZE, ty * TILE_SIZE + i as u32 / TILE_SIZE);
                        if x >= w || y >= h {
                            if !ev.is_empty() {
                                errs.push(format!("seed {seed}: masked pixel ({x},{y}) produced fragments"));
                            }
                            continue;
                        }
                        let mut t_prev = 1.0;
                        let mut terminated = false;
                        for &(e, t0, t1) in ev {
                            if !(t1 <= t0 && t0 <= t_prev && (0.0..=1.0).contains(&t1)) {
                                errs.push(format!("seed {seed} ({x},{y}): transmittance {t0} -> {t1}"));
                            }
                            if terminated && (e != FragmentEvent::Skipped || t1 != t_prev) {
                                errs.push(format!("seed {seed} ({x},{y}): {e:?} after termination"));
                            }
                            terminated |= e == FragmentEvent::Terminated;
                            t_prev = t1;
                        }
                        let (c, counts) = brute_force_pixel(&projected, x, y);
                        exposure += counts.f_blend + counts.f_cull + counts.f_skip;
                        if out.color[i] != c {
                            errs.push(format!("seed {seed} ({x},{y}): color {:?} vs brute force {c:?}", out.color[i]));
                        }
                    }
                }
            }
            if total.total_fragments() != exposure {
                errs.push(format!("seed {seed}: {} fragments vs exposure {exposure}", total.total_fragments()));
            }
            errs
        })
        .collect();
    let errs: Vec<String> = results.into_iter().flatten().collect();
    outcome(
        errs.is_empty(),
        format!("{scenes} random scenes (1-100 Gaussians); {} violations {:?}", errs.len(), errs.iter().take(3).collect::<Vec<_>>()),
    )
}

/// 8. Tile-local coordinates preserve relative positions and exponents.
fn g2l_identity() -> Outcome {
    const TRIPLES: u64 = 100_000;
    let (w, h) = (1024u32, 1024u32);
    let (identity_failures, max_beta_diff, max_rel) = (0..TRIPLES)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(8);
            rng.set_stream(i);
            let (tx, ty) = (rng.gen_range(0..w / TILE_SIZE), rng.gen_range(0..h / TILE_SIZE));
            let p = [
                (tx * TILE_SIZE + rng.gen_range(0..TILE_SIZE)) as f64,
                (ty * TILE_SIZE + rng.gen_range(0..TILE_SIZE)) as f64,
            ];
            // Means on a 1/256-pixel lattice.
            let mean = [rng.gen_range(0..w * 256) as f64 / 256.0, rng.gen_range(0..h * 256) as f64 / 256.0];
            let c = tile_center(tx, ty);
            let ok = (0..2).all(|k| (mean[k] - c[k]) - (p[k] - c[k]) == mean[k] - p[k]);
            let l1 = 2.0 * (1.0 - rng.gen::<f64>());
            let l2 = 2.0 * (1.0 - rng.gen::<f64>());
            let th = rng.gen::<f64>() * std::f64::consts::PI;
            let (s, co) = th.sin_cos();
            let inv = [l1 * co * co + l2 * s * s, (l1 - l2) * co * s, l1 * s * s + l2 * co * co];
            let o = 1.0 / 255.0 + (1.0 - 1.0 / 255.0) * rng.gen::<f64>();
            let bg = exponent(
                &PixelVector::new(p, [0.0, 0.0]),
                &GaussianVector::from_params(mean, inv, o, [0.0, 0.0]),
                Arithmetic::Exact,
            );
            let bl = exponent(&PixelVector::new(p, c), &GaussianVector::from_params(mean, inv, o, c), Arithmetic::Exact);
            let d = (bg - bl).abs();
            (!ok as u64, d, d / bl.abs().max(1.0))
        })
        .reduce(|| (0, 0.0, 0.0), |a, b| (a.0 + b.0, a.1.max(b.1), a.2.max(b.2)));
    outcome(
        identity_failures == 0 && max_beta_diff <= 1e-9,
        format!(
            "{TRIPLES} triples on {w}x{h}: {identity_failures} identity failures, max |beta_global - beta_local| {max_beta_diff:.3e} (relative {max_rel:.3e})"
        ),
    )
}

/// 9. Culled and skipped fragments dominate on the shipped dense scene.
fn profiler_direction() -> Outcome {
    let root = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenes");
    let cfg = RunConfig::new(root.join("dense.json"), root.join("dense_camera.json"));
    match cmd_profile(&cfg) {
        Ok(r) => {
            let share = r.fractions.cull + r.fractions.skip;
            outcome(
                share > 0.5,
                format!(
                    "(f_cull + f_skip) / total = {share:.3} over {} fragments; exp calls {} with early cull vs {} without",
                    r.total_fragments, r.exp_calls_with_early_cull, r.exp_calls_without_early_cull
                ),
            )
        }
        Err(e) => outcome(false, format!("profile failed: {e}")),
    }
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("backend equivalence (exact arithmetic)", backend_equivalence),
        ("cull / exp-call accounting", cull_accounting),
        ("input rounding error <= 2^-m |x|", rounding_error_bound),
        ("emulated MMA error <= rigorous bound", mma_error_bound),
        ("coordinate error-growth law", error_growth_law),
        ("fp16 global vs local image quality", fp16_quality_ablation),
        ("blend semantics property suite", blend_semantics),
        ("tile-local coordinate identity", g2l_identity),
        ("profiler: culled + skipped fragments dominate", profiler_direction),
    ];
    let filter: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let n = i + 1;
        if !filter.is_empty() && !filter.contains(&n) {
            continue;
        }
        let t0 = Instant::now();
        let o = run();
        failed += !o.pass as usize;
        println!(
            "criterion {n} [{name}]: {} ({:.1}s) {}",
            if o.pass { "PASS" } else { "FAIL" },
            t0.elapsed().as_secs_f64(),
            o.detail
        );
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        ExitCode::FAILURE
    } else {
        println!("all acceptance criteria passed");
        ExitCode::SUCCESS
    }
}
