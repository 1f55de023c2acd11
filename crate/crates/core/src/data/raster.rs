//! Conversions between 8-bit RGB rasters and `[H, W, 3]` tensors, PNG IO,
//! and bilinear head cropping.

use std::path::Path;

use image::RgbImage;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// `[H, W, 3]` in `[0, 1]`.
pub fn rgb_to_tensor(img: &RgbImage) -> Tensor<f32> {
    let (w, h) = img.dimensions();
    let data = img.as_raw().iter().map(|&v| v as f32 / 255.0).collect();
    Tensor::new(vec![h as usize, w as usize, 3], data).expect("raster length matches its dimensions")
}

/// Rounds each channel to the nearest 8-bit level.
pub fn tensor_to_rgb(t: &Tensor<f32>) -> Result<RgbImage> {
    let s = t.shape();
    if s.len() != 3 || s[2] != 3 {
        return Err(Error::Contract(format!("expected an [H, W, 3] image, got {s:?}")));
    }
    let data = t.data().iter().map(|v| quantize(*v)).collect();
    Ok(RgbImage::from_raw(s[1] as u32, s[0] as u32, data).expect("buffer sized from shape"))
}

pub fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn load_png(path: &Path) -> Result<RgbImage> {
    let img = image::open(path).map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        e => Error::Image(e),
    })?;
    Ok(img.to_rgb8())
}

pub fn save_png(img: &RgbImage, path: &Path) -> Result<()> {
    img.save_with_format(path, image::ImageFormat::Png).map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        e => Error::Image(e),
    })
}

/// Crops the normalized box out of `image` (`[H, W, C]`) and resamples it to
/// `size × size` with half-pixel bilinear interpolation, clamping at the border.
pub fn crop_head(image: &Tensor<f32>, bbox: [f32; 4], size: usize) -> Result<Tensor<f32>> {
    let s = image.shape();
    if s.len() != 3 {
        return Err(Error::Contract(format!("expected an [H, W, C] image, got {s:?}")));
    }
    crate::person::validate_bbox(&bbox)?;
    if bbox[2] <= bbox[0] || bbox[3] <= bbox[1] {
        return Err(Error::Contract(format!("head box {bbox:?} has zero area")));
    }
    if size == 0 {
        return Err(Error::Contract("crop size must be positive".into()));
    }
    let (h, w, c) = (s[0], s[1], s[2]);
    let taps = |lo: f32, hi: f32, n: usize| -> Vec<(usize, usize, f32)> {
        let (lo, span) = (lo as f64 * n as f64, (hi - lo) as f64 * n as f64);
        (0..size)
            .map(|i| {
                let x = (lo + (i as f64 + 0.5) * span / size as f64 - 0.5).clamp(0.0, (n - 1) as f64);
                let i0 = x.floor() as usize;
                let i1 = (i0 + 1).min(n - 1);
                (i0, i1, (x - i0 as f64) as f32)
            })
            .collect()
    };
    let rows = taps(bbox[1], bbox[3], h);
    let cols = taps(bbox[0], bbox[2], w);
    let src = image.data();
    let px = |r: usize, q: usize, ch: usize| src[(r * w + q) * c + ch];
    let mut out = Vec::with_capacity(size * size * c);
    for &(r0, r1, fr) in &rows {
        for &(c0, c1, fc) in &cols {
            for ch in 0..c {
                let top = px(r0, c0, ch) * (1.0 - fc) + px(r0, c1, ch) * fc;
                let bot = px(r1, c0, ch) * (1.0 - fc) + px(r1, c1, ch) * fc;
                out.push(top * (1.0 - fr) + bot * fr);
            }
        }
    }
    Tensor::new(vec![size, size, c], out)
}
