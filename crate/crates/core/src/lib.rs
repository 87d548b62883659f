//! Tile-based forward renderer for 3D Gaussian splats with two alpha paths:
//! the per-fragment reference blend and a matrix-multiply formulation in which
//! the exponent of every fragment in a tile batch is one entry of `U^T V`.
//!
//! The matrix path can run in double precision or through a bit-exact
//! emulation of half-precision multiply / single-precision accumulate
//! hardware, in global screen coordinates or in coordinates local to each
//! tile's center.
//!
//! Pipeline: [`scene`] → [`projection`] → [`tiling`] → [`raster`], with
//! [`tensor`] supplying the alternative alpha backend and [`precision`] the
//! arithmetic emulator and its error bounds.

pub mod harness;
pub mod metrics;
pub mod output;
pub mod precision;
pub mod projection;
pub mod raster;
pub mod scene;
pub mod synthetic;
pub mod tensor;
pub mod tiling;

use std::path::PathBuf;

pub use precision::{emulated_mma, error_bound, round_to, HalfFormat};
pub use projection::{project, ProjectedGaussian};
pub use raster::{render, FragmentStats, Image};
pub use scene::{Camera, Gaussian3D, Scene};
pub use tensor::{Arithmetic, CoordMode, Frag2MatBackend};

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("{0}: scene contains no Gaussians")]
    EmptyScene(String),
    #[error("Gaussian {index}: {reason}")]
    InvalidGaussian { index: usize, reason: String },
    #[error("{0}")]
    Validation(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
