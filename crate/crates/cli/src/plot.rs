use std::path::Path;

use image::{Rgb, RgbImage};

const CELL: u32 = 4;

/// Diverging blue-white-red heatmap of a square matrix, symmetric around 0.
pub fn write_heatmap(values: &[f64], side: usize, path: &Path) -> Result<(), image::ImageError> {
    let scale = values.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    let px = side as u32 * CELL;
    let img = RgbImage::from_fn(px, px, |x, y| {
        let v = values[(y / CELL) as usize * side + (x / CELL) as usize] / scale;
        let fade = |t: f64| (255.0 * (1.0 - t.clamp(0.0, 1.0))) as u8;
        if v >= 0.0 {
            Rgb([255, fade(v), fade(v)])
        } else {
            Rgb([fade(-v), fade(-v), 255])
        }
    });
    img.save(path)
}
