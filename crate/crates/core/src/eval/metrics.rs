//! Overlap scores, the two-threshold segmentation oracle and the
//! fat-fraction marker.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::phantom::{Image, Mask};

/// Dice coefficient `2|A∩B| / (|A|+|B|)`; 1.0 when both masks are empty.
pub fn dsc(a: &Mask, b: &Mask) -> Result<f64> {
    if !a.same_shape(b) {
        return Err(Error::Shape(format!(
            "dsc: {}x{} vs {}x{}",
            a.height, a.width, b.height, b.width
        )));
    }
    let (mut na, mut nb, mut both) = (0usize, 0usize, 0usize);
    for (&p, &q) in a.data.iter().zip(&b.data) {
        na += p as usize;
        nb += q as usize;
        both += (p && q) as usize;
    }
    Ok(dice_from_counts(both, na, nb))
}

fn dice_from_counts(intersection: usize, a: usize, b: usize) -> f64 {
    if a + b == 0 {
        1.0
    } else {
        2.0 * intersection as f64 / (a + b) as f64
    }
}

/// Quantization level of an intensity in `[0, 1]`.
pub fn quantize(v: f32, levels: usize) -> usize {
    let top = (levels - 1) as f64;
    ((v as f64).clamp(0.0, 1.0) * top).round() as usize
}

pub fn level_value(q: usize, levels: usize) -> f64 {
    q as f64 / (levels - 1) as f64
}

/// Pixels whose quantized intensity lies in `[t_low, t_high]`.
pub fn segment(image: &Image, t_low: f64, t_high: f64, levels: usize) -> Mask {
    let lo = (t_low * (levels - 1) as f64).round() as usize;
    let hi = (t_high * (levels - 1) as f64).round() as usize;
    Mask {
        height: image.height,
        width: image.width,
        data: image
            .data
            .iter()
            .map(|&v| {
                let q = quantize(v, levels);
                lo <= q && q <= hi
            })
            .collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub t_low: f64,
    pub t_high: f64,
    pub dsc: f64,
}

/// Exhaustive search over all quantized pairs `t_low <= t_high` for the
/// pair whose band segmentation best overlaps `gt`. Ties go to the smallest
/// `t_low`, then the smallest `t_high`. Uses per-level cumulative counts, so
/// each candidate costs O(1).
pub fn optimal_two_threshold(image: &Image, gt: &Mask, levels: usize) -> Result<Thresholds> {
    if image.is_empty() {
        return Err(Error::Empty("optimal_two_threshold: empty image".into()));
    }
    if levels < 2 {
        return Err(Error::Config(format!("levels = {levels}, need >= 2")));
    }
    if !image.same_shape(gt) {
        return Err(Error::Shape(
            "optimal_two_threshold: image and mask differ in shape".into(),
        ));
    }
    let mut all = vec![0usize; levels + 1];
    let mut inside = vec![0usize; levels + 1];
    for (&v, &m) in image.data.iter().zip(&gt.data) {
        let q = quantize(v, levels);
        all[q + 1] += 1;
        inside[q + 1] += m as usize;
    }
    for q in 0..levels {
        all[q + 1] += all[q];
        inside[q + 1] += inside[q];
    }
    let gt_count = inside[levels];
    let mut best = (f64::NEG_INFINITY, 0, 0);
    for lo in 0..levels {
        for hi in lo..levels {
            let s = all[hi + 1] - all[lo];
            let i = inside[hi + 1] - inside[lo];
            let d = dice_from_counts(i, s, gt_count);
            if d > best.0 {
                best = (d, lo, hi);
            }
        }
    }
    Ok(Thresholds {
        t_low: level_value(best.1, levels),
        t_high: level_value(best.2, levels),
        dsc: best.0,
    })
}

/// Mean over the whole image of `max(x - fx, 0)`: intensity removed by the
/// translation.
pub fn fat_fraction_marker(x: &Image, fx: &Image) -> Result<f64> {
    if !x.same_shape(fx) {
        return Err(Error::Shape("fat_fraction_marker: shapes differ".into()));
    }
    if x.is_empty() {
        return Err(Error::Empty("fat_fraction_marker: empty image".into()));
    }
    let s: f64 = x
        .data
        .iter()
        .zip(&fx.data)
        .map(|(&a, &b)| (a as f64 - b as f64).max(0.0))
        .sum();
    Ok(s / x.len() as f64)
}
