//! Brute-force O(P·H·W) compositor used to validate the tiled path.

use nalgebra::Vector3;

use super::forward::{alpha_at, sort_by_depth, RenderOutput};
use super::{Projected2D, RenderSettings};
use crate::image::Image;

/// Every Gaussian is evaluated at every pixel: no tiles, no radius cutoff,
/// no alpha floor and no early termination. Only the alpha ceiling from
/// `settings` is honored.
pub fn rasterize_reference(
    projected: &[Projected2D],
    width: usize,
    height: usize,
    background: &Vector3<f64>,
    settings: &RenderSettings,
) -> RenderOutput {
    let order = sort_by_depth(projected);
    let mut image = Image::new(width, height);
    let mut transmittance = vec![1.0; width * height];
    let mut blended = vec![0; width * height];
    for py in 0..height {
        for px in 0..width {
            let (cx, cy) = (px as f64 + 0.5, py as f64 + 0.5);
            let mut trans = 1.0;
            let mut rgb = [0.0; 3];
            let mut count = 0;
            for &i in &order {
                let g = &projected[i];
                let (alpha, ..) = alpha_at(g, cx, cy, settings.alpha_max);
                for c in 0..3 {
                    rgb[c] += g.color[c] * alpha * trans;
                }
                trans *= 1.0 - alpha;
                count += 1;
            }
            image.set_pixel(
                px,
                py,
                [rgb[0] + trans * background.x, rgb[1] + trans * background.y, rgb[2] + trans * background.z],
            );
            transmittance[py * width + px] = trans;
            blended[py * width + px] = count;
        }
    }
    RenderOutput { image, transmittance, blended }
}
