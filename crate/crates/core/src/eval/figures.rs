//! Qualitative sample grids: original | translated | segmentation overlay.

use std::path::Path;

use image::{Rgb, RgbImage};

use super::metrics::segment;
use crate::error::{Error, Result};
use crate::phantom::{Image, Mask};

/// One exemplar row.
pub struct Exemplar<'a> {
    pub original: &'a Image,
    pub translated: &'a Image,
    pub gt: &'a Mask,
    pub t_low: f64,
    pub t_high: f64,
}

const GAP: u32 = 2;
const TRUE_POSITIVE: [u8; 3] = [40, 200, 60];
const FALSE_POSITIVE: [u8; 3] = [220, 40, 40];
const FALSE_NEGATIVE: [u8; 3] = [50, 90, 230];

fn gray(v: f32) -> [u8; 3] {
    let g = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    [g, g, g]
}

fn blend(base: [u8; 3], tint: [u8; 3]) -> [u8; 3] {
    [0, 1, 2].map(|i| ((base[i] as u16 + tint[i] as u16) / 2) as u8)
}

/// Panels per row: the input, its translation, and the translation with
/// the optimal band segmentation drawn over it (green: agrees with the
/// muscle mask, red: spurious, blue: missed).
pub fn sample_grid(rows: &[Exemplar], levels: usize) -> Result<RgbImage> {
    let first = rows
        .first()
        .ok_or_else(|| Error::Empty("sample grid without exemplars".into()))?;
    let (h, w) = (first.original.height as u32, first.original.width as u32);
    let width = 3 * w + 2 * GAP;
    let height = rows.len() as u32 * h + (rows.len() as u32 - 1) * GAP;
    let mut out = RgbImage::from_pixel(width, height, Rgb([255, 255, 255]));
    for (r, ex) in rows.iter().enumerate() {
        if ex.original.height as u32 != h || ex.original.width as u32 != w || !ex.original.same_shape(ex.translated) {
            return Err(Error::Shape("exemplars must share one image size".into()));
        }
        let seg = segment(ex.translated, ex.t_low, ex.t_high, levels);
        let y0 = r as u32 * (h + GAP);
        for row in 0..h as usize {
            for col in 0..w as usize {
                let o = gray(*ex.original.get(row, col));
                let t = gray(*ex.translated.get(row, col));
                let s = *seg.get(row, col);
                let g = *ex.gt.get(row, col);
                let overlay = match (s, g) {
                    (true, true) => blend(t, TRUE_POSITIVE),
                    (true, false) => blend(t, FALSE_POSITIVE),
                    (false, true) => blend(t, FALSE_NEGATIVE),
                    (false, false) => t,
                };
                let (x, y) = (col as u32, y0 + row as u32);
                out.put_pixel(x, y, Rgb(o));
                out.put_pixel(w + GAP + x, y, Rgb(t));
                out.put_pixel(2 * (w + GAP) + x, y, Rgb(overlay));
            }
        }
    }
    Ok(out)
}

pub fn save_png(img: &RgbImage, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    img.save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}
