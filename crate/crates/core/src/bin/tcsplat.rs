use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use tcsplat::harness::{
    cmd_compare, cmd_error_sweep, cmd_profile, cmd_render, save_scene, BackendKind, RunConfig, SweepArgs,
    SweepFormat,
};
use tcsplat::synthetic::{default_camera, random_scene, SceneParams};
use tcsplat::CoordMode;

#[derive(Parser)]
#[command(name = "tcsplat", version, about = "Tile-based Gaussian splat renderer with a matrix-multiply alpha path")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a scene and write the image and fragment statistics.
    Render {
        #[command(flatten)]
        run: RunArgs,
        /// Image output (.ppm or .png).
        #[arg(long, default_value = "render.ppm")]
        out: PathBuf,
        /// Fragment statistics JSON output.
        #[arg(long, default_value = "stats.json")]
        stats: PathBuf,
    },
    /// Render two backend configurations and report PSNR and stat deltas.
    Compare {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_enum, default_value = "frag2mat")]
        backend_b: BackendKind,
        #[arg(long, value_enum)]
        coords_b: Option<CoordMode>,
        /// Report JSON output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fragment breakdown with and without early culling.
    Profile {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value_t = 1.0)]
        k_alpha: f64,
        #[arg(long, default_value_t = 1.0)]
        k_cull: f64,
        #[arg(long, default_value_t = 1.0)]
        k_blend: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Exponent error of emulated MMA arithmetic versus screen width.
    ErrorSweep {
        #[arg(long, value_enum, default_value = "local")]
        mode: CoordMode,
        #[arg(long, value_enum, default_value = "fp16")]
        format: SweepFormat,
        #[arg(long, value_delimiter = ',', default_value = "256,512,1024,2048")]
        widths: Vec<u32>,
        #[arg(long, default_value_t = 10_000)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a random scene and a matching camera.
    Synth {
        #[arg(long, default_value_t = 200)]
        count: usize,
        #[arg(long, default_value_t = 512)]
        width: u32,
        #[arg(long, default_value_t = 512)]
        height: u32,
        /// Large overlapping Gaussians instead of the default size mix.
        #[arg(long)]
        dense: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Scene output (.json or .ply).
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        camera: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Scene file (.json or .ply).
    #[arg(long)]
    scene: PathBuf,
    /// Camera JSON.
    #[arg(long)]
    camera: PathBuf,
    #[arg(long, value_enum, default_value = "reference")]
    backend: BackendKind,
    #[arg(long, value_enum, default_value = "local")]
    coords: CoordMode,
    #[arg(long, default_value_t = 16)]
    batch_width: usize,
    /// Evaluate `exp` for every fragment instead of culling on the exponent.
    #[arg(long)]
    no_early_cull: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl RunArgs {
    fn config(&self) -> RunConfig {
        RunConfig {
            backend: self.backend,
            coords: self.coords,
            batch_width: self.batch_width,
            early_cull: !self.no_early_cull,
            seed: self.seed,
            ..RunConfig::new(&self.scene, &self.camera)
        }
    }
}

fn print_json<T: serde::Serialize>(v: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Render { run, out, stats } => {
            let cfg = RunConfig { out_image: Some(out), out_report: Some(stats), ..run.config() };
            let (_, report) = cmd_render(&cfg).context("render failed")?;
            print_json(&report)
        }
        Command::Compare { run, backend_b, coords_b, out } => {
            let a = RunConfig { out_report: out, ..run.config() };
            let b = RunConfig {
                backend: backend_b,
                coords: coords_b.unwrap_or(a.coords),
                out_report: None,
                ..a.clone()
            };
            print_json(&cmd_compare(&a, &b).context("compare failed")?)
        }
        Command::Profile { run, k_alpha, k_cull, k_blend, out } => {
            let cfg = RunConfig { k_alpha, k_cull, k_blend, out_report: out, ..run.config() };
            print_json(&cmd_profile(&cfg).context("profile failed")?)
        }
        Command::ErrorSweep { mode, format, widths, trials, seed, out } => {
            let args = SweepArgs { mode, format, widths, trials, seed, out };
            print_json(&cmd_error_sweep(&args).context("error sweep failed")?)
        }
        Command::Synth { count, width, height, dense, seed, scene, camera } => {
            let cam = default_camera(width, height);
            let params = if dense { SceneParams::dense(count) } else { SceneParams { count, ..Default::default() } };
            let s = random_scene(&params, &cam, seed)?;
            save_scene(&s, &scene).with_context(|| format!("writing {}", scene.display()))?;
            cam.save(&camera).with_context(|| format!("writing {}", camera.display()))?;
            Ok(())
        }
    }
}
