//! 8-bit PNG images.

use std::path::Path;

use nalgebra::Vector3;

use crate::error::Result;
use crate::image::Image;

/// Byte for a sample: `round(v·255)` after clamping to `[0, 1]`.
pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn to_rgb8(img: &Image) -> image::RgbImage {
    let bytes = img.data.iter().map(|&v| quantize(v)).collect();
    image::RgbImage::from_raw(img.width as u32, img.height as u32, bytes).expect("buffer matches dimensions")
}

pub fn save_image(img: &Image, path: &Path) -> Result<()> {
    to_rgb8(img).save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}

/// Load a PNG; an alpha channel is composited over `background`.
pub fn load_image_over(path: &Path, background: &Vector3<f64>) -> Result<Image> {
    let decoded = image::open(path)?.into_rgba8();
    let (w, h) = decoded.dimensions();
    let mut data = Vec::with_capacity(w as usize * h as usize * 3);
    for px in decoded.pixels() {
        let a = px[3] as f64 / 255.0;
        for c in 0..3 {
            let v = px[c] as f64 / 255.0;
            data.push(if px[3] == 255 { v } else { v * a + background[c] * (1.0 - a) });
        }
    }
    Ok(Image::from_data(w as usize, h as usize, data))
}

pub fn load_image(path: &Path) -> Result<Image> {
    load_image_over(path, &Vector3::zeros())
}
