//! Assignment of projected Gaussians to 16x16 tiles and per-tile depth sort.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::Serialize;

use crate::projection::ProjectedGaussian;
use crate::scene::Camera;

pub const TILE_SIZE: u32 = 16;
pub const TILE_PIXELS: usize = (TILE_SIZE * TILE_SIZE) as usize;
/// Per-key cost coefficient of a GPU radix sort, reported in the census.
pub const SORT_RADIX_COEFF: u64 = 64;

/// Per-tile splat lists. Entries index the projected-Gaussian slice the grid
/// was built from.
#[derive(Clone, Debug, PartialEq)]
pub struct TileGrid {
    pub tiles_x: u32,
    pub tiles_y: u32,
    pub lists: Vec<Vec<u32>>,
}

impl TileGrid {
    pub fn tile_count(&self) -> usize {
        self.lists.len()
    }

    pub fn list(&self, tx: u32, ty: u32) -> &[u32] {
        &self.lists[(ty * self.tiles_x + tx) as usize]
    }

    pub fn total_splats(&self) -> u64 {
        self.lists.iter().map(|l| l.len() as u64).sum()
    }
}

pub fn tiles_for(cam: &Camera) -> (u32, u32) {
    (cam.width.div_ceil(TILE_SIZE), cam.height.div_ceil(TILE_SIZE))
}

/// Center `p(T)` of tile `(tx, ty)` in pixel units.
pub fn tile_center(tx: u32, ty: u32) -> [f64; 2] {
    [(tx * TILE_SIZE + TILE_SIZE / 2) as f64, (ty * TILE_SIZE + TILE_SIZE / 2) as f64]
}

pub fn tile_center_of_pixel(px: u32, py: u32) -> [f64; 2] {
    tile_center(px / TILE_SIZE, py / TILE_SIZE)
}

/// Whether the closed square `[mu - r, mu + r]^2` meets the tile's half-open
/// pixel rectangle `[16 tx, 16 tx + 16) x [16 ty, 16 ty + 16)`.
pub fn square_overlaps_tile(mean: [f64; 2], radius: f64, tx: u32, ty: u32) -> bool {
    let ts = TILE_SIZE as f64;
    let (x0, y0) = (tx as f64 * ts, ty as f64 * ts);
    mean[0] - radius < x0 + ts && mean[0] + radius >= x0 && mean[1] - radius < y0 + ts && mean[1] + radius >= y0
}

fn tile_range(lo: f64, hi: f64, count: u32) -> Option<(u32, u32)> {
    let ts = TILE_SIZE as f64;
    let first = (lo / ts).floor().max(0.0);
    let last = (hi / ts).floor().min(count as f64 - 1.0);
    if !(first <= last) {
        return None;
    }
    Some((first as u32, last as u32))
}

/// Bin each Gaussian into the tiles its coverage square overlaps and sort
/// every list by depth, ties by scene index.
pub fn build_tiles(projected: &[ProjectedGaussian], cam: &Camera) -> TileGrid {
    let (tiles_x, tiles_y) = tiles_for(cam);
    let mut lists = vec![Vec::new(); (tiles_x * tiles_y) as usize];
    for (i, g) in projected.iter().enumerate() {
        let [mx, my] = g.mean2d;
        let r = g.radius;
        let (Some((x0, x1)), Some((y0, y1))) =
            (tile_range(mx - r, mx + r, tiles_x), tile_range(my - r, my + r, tiles_y))
        else {
            continue;
        };
        for ty in y0..=y1 {
            for tx in x0..=x1 {
                lists[(ty * tiles_x + tx) as usize].push(i as u32);
            }
        }
    }
    lists.par_iter_mut().for_each(|list| {
        list.sort_by(|&a, &b| {
            let (ga, gb) = (&projected[a as usize], &projected[b as usize]);
            ga.depth.total_cmp(&gb.depth).then(ga.source.cmp(&gb.source))
        })
    });
    TileGrid { tiles_x, tiles_y, lists }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SplatCensus {
    #[serde(rename = "N")]
    pub n_splats: u64,
    /// Number of tiles holding each non-zero list length.
    pub histogram: BTreeMap<usize, usize>,
    pub sort_coefficient: u64,
    pub modeled_sort_cost: u64,
}

pub fn splat_census(grid: &TileGrid) -> SplatCensus {
    let mut histogram = BTreeMap::new();
    for l in grid.lists.iter().filter(|l| !l.is_empty()) {
        *histogram.entry(l.len()).or_insert(0) += 1;
    }
    let n = grid.total_splats();
    SplatCensus {
        n_splats: n,
        histogram,
        sort_coefficient: SORT_RADIX_COEFF,
        modeled_sort_cost: SORT_RADIX_COEFF * n,
    }
}
