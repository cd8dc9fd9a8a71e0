//! Image losses and quality metrics: L1, SSIM / D-SSIM with analytic
//! gradients, PSNR.

use crate::error::{Error, Result};
use crate::image::Image;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;

fn check_shapes(a: &Image, b: &Image) -> Result<()> {
    if !a.same_shape(b) {
        return Err(Error::ShapeMismatch(format!(
            "{}x{} vs {}x{}",
            a.width, a.height, b.width, b.height
        )));
    }
    Ok(())
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Mean absolute difference over all pixels and channels.
pub fn l1_loss(a: &Image, b: &Image) -> Result<f64> {
    check_shapes(a, b)?;
    Ok(a.data.iter().zip(&b.data).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.data.len() as f64)
}

fn l1_grad(a: &Image, b: &Image) -> Vec<f64> {
    let n = a.data.len() as f64;
    a.data.iter().zip(&b.data).map(|(x, y)| sign(x - y) / n).collect()
}

/// Normalized 1D Gaussian window.
pub fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size / 2) as f64;
    let w: Vec<f64> = (0..size).map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Separable "same" filtering with zero padding of one `w×h` plane.
fn blur(src: &[f64], w: usize, h: usize, k: &[f64]) -> Vec<f64> {
    let r = k.len() / 2;
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        for x in 0..w {
            let mut s = 0.0;
            for (j, kv) in k.iter().enumerate() {
                let xx = x as isize + j as isize - r as isize;
                if xx >= 0 && (xx as usize) < w {
                    s += kv * row[xx as usize];
                }
            }
            tmp[y * w + x] = s;
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut s = 0.0;
            for (j, kv) in k.iter().enumerate() {
                let yy = y as isize + j as isize - r as isize;
                if yy >= 0 && (yy as usize) < h {
                    s += kv * tmp[yy as usize * w + x];
                }
            }
            out[y * w + x] = s;
        }
    }
    out
}

/// Mean SSIM over pixels and channels, and optionally its gradient with
/// respect to `a` (interleaved RGB layout).
fn ssim_impl(a: &Image, b: &Image, want_grad: bool) -> Result<(f64, Option<Vec<f64>>)> {
    check_shapes(a, b)?;
    let (w, h) = (a.width, a.height);
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::ImageTooSmall { width: w, height: h });
    }
    let k = gaussian_window(SSIM_WINDOW, SSIM_SIGMA);
    let n = (w * h) as f64;
    let mut total = 0.0;
    let mut grad = want_grad.then(|| vec![0.0; w * h * 3]);
    for c in 0..3 {
        let x = a.channel(c);
        let y = b.channel(c);
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p * q).collect();
        let mx = blur(&x, w, h, &k);
        let my = blur(&y, w, h, &k);
        let mxx = blur(&xx, w, h, &k);
        let myy = blur(&yy, w, h, &k);
        let mxy = blur(&xy, w, h, &k);
        let mut d_mx = vec![0.0; w * h];
        let mut d_mxx = vec![0.0; w * h];
        let mut d_mxy = vec![0.0; w * h];
        for p in 0..w * h {
            let a1 = 2.0 * mx[p] * my[p] + C1;
            let a2 = 2.0 * (mxy[p] - mx[p] * my[p]) + C2;
            let b1 = mx[p] * mx[p] + my[p] * my[p] + C1;
            let b2 = (mxx[p] - mx[p] * mx[p]) + (myy[p] - my[p] * my[p]) + C2;
            let s = a1 * a2 / (b1 * b2);
            total += s;
            if want_grad {
                d_mx[p] = s * (2.0 * my[p] / a1 - 2.0 * my[p] / a2 - 2.0 * mx[p] / b1 + 2.0 * mx[p] / b2);
                d_mxx[p] = -s / b2;
                d_mxy[p] = 2.0 * s / a2;
            }
        }
        if let Some(g) = grad.as_mut() {
            // the zero-padded symmetric filter is self-adjoint
            let g_mx = blur(&d_mx, w, h, &k);
            let g_mxx = blur(&d_mxx, w, h, &k);
            let g_mxy = blur(&d_mxy, w, h, &k);
            let scale = 1.0 / (3.0 * n);
            for p in 0..w * h {
                g[3 * p + c] = scale * (g_mx[p] + 2.0 * x[p] * g_mxx[p] + y[p] * g_mxy[p]);
            }
        }
    }
    Ok((total / (3.0 * n), grad))
}

/// Mean SSIM (11×11 Gaussian window, σ = 1.5, zero padding).
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    Ok(ssim_impl(a, b, false)?.0)
}

/// `(1 − SSIM) / 2`.
pub fn dssim_loss(a: &Image, b: &Image) -> Result<f64> {
    Ok((1.0 - ssim(a, b)?) / 2.0)
}

/// Peak signal-to-noise ratio for unit dynamic range.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    check_shapes(a, b)?;
    let mse = a.data.iter().zip(&b.data).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.data.len() as f64;
    Ok(-10.0 * mse.log10())
}

/// `(1 − λ)·L1 + λ·D-SSIM` and its gradient with respect to `render`.
pub fn image_loss(render: &Image, gt: &Image, lambda_dssim: f64) -> Result<(f64, Vec<f64>)> {
    let l1 = l1_loss(render, gt)?;
    let mut grad: Vec<f64> = l1_grad(render, gt).into_iter().map(|g| (1.0 - lambda_dssim) * g).collect();
    if lambda_dssim == 0.0 {
        return Ok((l1, grad));
    }
    let (s, sg) = ssim_impl(render, gt, true)?;
    for (g, d) in grad.iter_mut().zip(sg.unwrap()) {
        *g -= 0.5 * lambda_dssim * d;
    }
    Ok(((1.0 - lambda_dssim) * l1 + lambda_dssim * (1.0 - s) / 2.0, grad))
}
