//! Tile-binned front-to-back alpha compositing.

use std::cmp::Ordering;

use nalgebra::Vector3;
use rayon::prelude::*;

use super::{Projected2D, RenderSettings};
use crate::image::Image;

/// Rendered image plus per-pixel diagnostics.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderOutput {
    pub image: Image,
    /// Transmittance left after the last blended Gaussian.
    pub transmittance: Vec<f64>,
    /// Number of Gaussians actually blended into each pixel.
    pub blended: Vec<u32>,
}

/// What the backward pass needs from the forward pass.
#[derive(Clone, Debug, Default)]
pub struct ForwardState {
    pub tiles_x: usize,
    pub tiles_y: usize,
    /// Per tile: indices into the projected list, front to back.
    pub tile_lists: Vec<Vec<u32>>,
    /// Per pixel: one past the position (in its tile list) of the last
    /// blended Gaussian.
    pub last_contributor: Vec<u32>,
    pub final_transmittance: Vec<f64>,
}

pub(crate) fn depth_order(a: &Projected2D, b: &Projected2D) -> Ordering {
    a.depth
        .total_cmp(&b.depth)
        .then(a.key.x.total_cmp(&b.key.x))
        .then(a.key.y.total_cmp(&b.key.y))
        .then(a.key.z.total_cmp(&b.key.z))
        .then(a.source.cmp(&b.source))
}

/// Indices of `projected` sorted front to back.
pub fn sort_by_depth(projected: &[Projected2D]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..projected.len()).collect();
    order.sort_by(|&a, &b| depth_order(&projected[a], &projected[b]));
    order
}

/// Alpha of a projected Gaussian at pixel center `(px, py)` and the raw
/// `σ·G` before clamping.
#[inline]
pub(crate) fn alpha_at(g: &Projected2D, px: f64, py: f64, alpha_max: f64) -> (f64, f64, f64, f64, f64) {
    let dx = px - g.mean.x;
    let dy = py - g.mean.y;
    let [a, b, c] = g.conic;
    let power = -0.5 * (a * dx * dx + c * dy * dy) - b * dx * dy;
    let gauss = power.exp();
    let raw = g.opacity * gauss;
    (raw.min(alpha_max), raw, gauss, dx, dy)
}

/// Contiguous per-tile copy of what compositing reads, plus a bound on the
/// exponent below which alpha is certainly under `alpha_min`, so the
/// exponential can be skipped. The margin keeps the test conservative;
/// borderline cases go through the exact comparison.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Packed {
    mx: f64,
    my: f64,
    conic: [f64; 3],
    cutoff: f64,
    pub opacity: f64,
    pub color: [f64; 3],
}

pub(crate) fn pack_tile(projected: &[Projected2D], list: &[u32], alpha_min: f64) -> Vec<Packed> {
    list.iter()
        .map(|&gi| {
            let g = &projected[gi as usize];
            Packed {
                mx: g.mean.x,
                my: g.mean.y,
                conic: g.conic,
                cutoff: if alpha_min > 0.0 { (alpha_min / g.opacity).ln() - 1e-9 } else { f64::NEG_INFINITY },
                opacity: g.opacity,
                color: g.color,
            }
        })
        .collect()
}

impl Packed {
    pub fn conic(&self) -> [f64; 3] {
        self.conic
    }

    /// Same as [`alpha_at`] for contributions at or above `alpha_min`.
    #[inline]
    pub fn visible_alpha(&self, px: f64, py: f64, settings: &RenderSettings) -> Option<(f64, f64, f64, f64, f64)> {
        let dx = px - self.mx;
        let dy = py - self.my;
        let [a, b, c] = self.conic;
        let power = -0.5 * (a * dx * dx + c * dy * dy) - b * dx * dy;
        if power < self.cutoff {
            return None;
        }
        let gauss = power.exp();
        let raw = self.opacity * gauss;
        let alpha = raw.min(settings.alpha_max);
        (alpha >= settings.alpha_min).then_some((alpha, raw, gauss, dx, dy))
    }
}

pub(crate) fn bin_tiles(
    projected: &[Projected2D],
    order: &[usize],
    width: usize,
    height: usize,
    tile: usize,
) -> (usize, usize, Vec<Vec<u32>>) {
    let tiles_x = width.div_ceil(tile);
    let tiles_y = height.div_ceil(tile);
    let mut lists = vec![Vec::new(); tiles_x * tiles_y];
    for &i in order {
        let g = &projected[i];
        if !(g.radius > 0.0) {
            continue;
        }
        let (x0, x1) = (g.mean.x - g.radius, g.mean.x + g.radius);
        let (y0, y1) = (g.mean.y - g.radius, g.mean.y + g.radius);
        if x1 < 0.0 || y1 < 0.0 || x0 > width as f64 || y0 > height as f64 {
            continue;
        }
        let tx0 = ((x0 / tile as f64).floor().max(0.0)) as usize;
        let ty0 = ((y0 / tile as f64).floor().max(0.0)) as usize;
        let tx1 = ((x1 / tile as f64).floor() as usize).min(tiles_x - 1);
        let ty1 = ((y1 / tile as f64).floor() as usize).min(tiles_y - 1);
        for ty in ty0..=ty1 {
            for tx in tx0..=tx1 {
                lists[ty * tiles_x + tx].push(i as u32);
            }
        }
    }
    (tiles_x, tiles_y, lists)
}

struct TileResult {
    color: Vec<[f64; 3]>,
    transmittance: Vec<f64>,
    last: Vec<u32>,
    blended: Vec<u32>,
}

/// Tiled forward compositing over an already projected set.
pub fn rasterize(
    projected: &[Projected2D],
    width: usize,
    height: usize,
    background: &Vector3<f64>,
    settings: &RenderSettings,
) -> (RenderOutput, ForwardState) {
    let order = sort_by_depth(projected);
    let tile = settings.tile_size;
    let (tiles_x, tiles_y, tile_lists) = bin_tiles(projected, &order, width, height, tile);

    let results: Vec<TileResult> = (0..tiles_x * tiles_y)
        .into_par_iter()
        .map(|t| {
            let (tx, ty) = (t % tiles_x, t / tiles_x);
            let list = pack_tile(projected, &tile_lists[t], settings.alpha_min);
            let n = tile * tile;
            let mut res = TileResult {
                color: vec![[0.0; 3]; n],
                transmittance: vec![1.0; n],
                last: vec![0; n],
                blended: vec![0; n],
            };
            for ly in 0..tile {
                let py = ty * tile + ly;
                if py >= height {
                    break;
                }
                for lx in 0..tile {
                    let px = tx * tile + lx;
                    if px >= width {
                        break;
                    }
                    let (cx, cy) = (px as f64 + 0.5, py as f64 + 0.5);
                    let mut trans = 1.0;
                    let mut rgb = [0.0; 3];
                    let mut last = 0;
                    let mut count = 0;
                    for (j, g) in list.iter().enumerate() {
                        let Some((alpha, ..)) = g.visible_alpha(cx, cy, settings) else {
                            continue;
                        };
                        for c in 0..3 {
                            rgb[c] += g.color[c] * alpha * trans;
                        }
                        trans *= 1.0 - alpha;
                        last = j as u32 + 1;
                        count += 1;
                        if trans < settings.min_transmittance {
                            break;
                        }
                    }
                    let k = ly * tile + lx;
                    res.color[k] = rgb;
                    res.transmittance[k] = trans;
                    res.last[k] = last;
                    res.blended[k] = count;
                }
            }
            res
        })
        .collect();

    let mut image = Image::new(width, height);
    let mut transmittance = vec![1.0; width * height];
    let mut last_contributor = vec![0; width * height];
    let mut blended = vec![0; width * height];
    for (t, res) in results.iter().enumerate() {
        let (tx, ty) = (t % tiles_x, t / tiles_x);
        for ly in 0..tile {
            let py = ty * tile + ly;
            if py >= height {
                break;
            }
            for lx in 0..tile {
                let px = tx * tile + lx;
                if px >= width {
                    break;
                }
                let k = ly * tile + lx;
                let p = py * width + px;
                let tr = res.transmittance[k];
                let c = res.color[k];
                image.set_pixel(
                    px,
                    py,
                    [c[0] + tr * background.x, c[1] + tr * background.y, c[2] + tr * background.z],
                );
                transmittance[p] = tr;
                last_contributor[p] = res.last[k];
                blended[p] = res.blended[k];
            }
        }
    }
    let state = ForwardState {
        tiles_x,
        tiles_y,
        tile_lists,
        last_contributor,
        final_transmittance: transmittance.clone(),
    };
    (RenderOutput { image, transmittance, blended }, state)
}
