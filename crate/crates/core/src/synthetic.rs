//! Seeded random scenes for tests, demos and benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::scene::{Camera, Gaussian3D, Scene};
use crate::{Error, Result};

/// Camera at the origin looking down `+z` with focal length `0.8 w`.
pub fn default_camera(width: u32, height: u32) -> Camera {
    Camera::looking_down_z(width, height, 0.8 * width as f64)
}

/// Distribution of a random scene. Sizes are screen-space standard
/// deviations in pixels at the Gaussian's depth.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneParams {
    pub count: usize,
    pub sigma_px: [f64; 2],
    pub opacity: [f64; 2],
    pub depth: [f64; 2],
    /// Fraction of the screen margin Gaussians may extend past each border.
    pub overscan: f64,
}

impl Default for SceneParams {
    fn default() -> Self {
        SceneParams { count: 200, sigma_px: [1.0, 12.0], opacity: [0.05, 1.0], depth: [2.0, 10.0], overscan: 0.1 }
    }
}

impl SceneParams {
    /// Many large, mostly opaque Gaussians overlapping across the screen.
    pub fn dense(count: usize) -> Self {
        SceneParams { count, sigma_px: [6.0, 40.0], opacity: [0.6, 1.0], depth: [2.0, 10.0], overscan: 0.05 }
    }

    fn validate(&self) -> Result<()> {
        let ok = self.sigma_px[0] > 0.0
            && self.sigma_px[0] <= self.sigma_px[1]
            && self.opacity[0] > 0.0
            && self.opacity[0] <= self.opacity[1]
            && self.opacity[1] <= 1.0
            && self.depth[0] > 0.0
            && self.depth[0] <= self.depth[1]
            && self.overscan >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Validation(format!("invalid synthetic scene parameters {self:?}")))
        }
    }
}

fn uniform(rng: &mut ChaCha8Rng, [lo, hi]: [f64; 2]) -> f64 {
    lo + (hi - lo) * rng.gen::<f64>()
}

fn random_rotation(rng: &mut ChaCha8Rng) -> [f64; 4] {
    loop {
        let q: [f64; 4] = std::array::from_fn(|_| rng.gen_range(-1.0..=1.0));
        let n2: f64 = q.iter().map(|x| x * x).sum();
        if n2 > 1e-4 && n2 <= 1.0 {
            let n = n2.sqrt();
            return q.map(|x| x / n);
        }
    }
}

/// Random Gaussians whose means project inside the (overscanned) screen of
/// `cam`, which must look down `+z` from the origin.
pub fn random_scene(params: &SceneParams, cam: &Camera, seed: u64) -> Result<Scene> {
    params.validate()?;
    cam.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (cam.width as f64, cam.height as f64);
    let m = params.overscan;
    let gaussians = (0..params.count)
        .map(|_| {
            let z = uniform(&mut rng, params.depth);
            let sx = uniform(&mut rng, [-m * w, (1.0 + m) * w]);
            let sy = uniform(&mut rng, [-m * h, (1.0 + m) * h]);
            let sigma = uniform(&mut rng, params.sigma_px);
            let scale: [f64; 3] =
                std::array::from_fn(|_| sigma * uniform(&mut rng, [0.3, 1.0]) * z / cam.fx);
            Gaussian3D {
                mean: [(sx - cam.cx) * z / cam.fx, (sy - cam.cy) * z / cam.fy, z],
                scale,
                rotation: random_rotation(&mut rng),
                opacity: uniform(&mut rng, params.opacity),
                color: std::array::from_fn(|_| rng.gen::<f64>()),
            }
        })
        .collect();
    Scene::new(gaussians, format!("synthetic:seed={seed}"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::projection::project_scene;

    #[test]
    fn deterministic_and_valid() {
        let cam = default_camera(256, 256);
        let a = random_scene(&SceneParams::default(), &cam, 7).unwrap();
        let b = random_scene(&SceneParams::default(), &cam, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 200);
        let (p, diag) = project_scene(&a, &cam);
        assert_eq!(diag.projected, 200);
        assert!(p.iter().all(|g| g.mean2d[0] > -30.0 && g.mean2d[0] < 290.0));
    }

    #[test]
    fn rejects_bad_params() {
        let mut p = SceneParams::default();
        p.opacity = [0.5, 1.5];
        assert!(random_scene(&p, &default_camera(64, 64), 0).is_err());
    }
}
