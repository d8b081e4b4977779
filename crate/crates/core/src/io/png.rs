use std::path::Path;

use image::{Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::types::RgbProjection;

/// Writes an 8-bit RGB rendering of a projection.
pub fn save_png(projection: &RgbProjection, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let px = projection.pixels();
    let (_, h, w) = px.dim();
    let to_u8 = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    let img = RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let (x, y) = (x as usize, y as usize);
        Rgb([to_u8(px[[0, y, x]]), to_u8(px[[1, y, x]]), to_u8(px[[2, y, x]])])
    });
    img.save(path).map_err(|e| Error::format(path, e.to_string()))
}
