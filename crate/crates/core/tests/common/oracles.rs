//! Slow reference implementations the fast code is checked against.

use asymcycle::eval::quantize;
use asymcycle::phantom::{Image, Mask};

/// Dice from explicit set counting.
pub fn dice(a: &[bool], b: &[bool]) -> f64 {
    let na = a.iter().filter(|v| **v).count();
    let nb = b.iter().filter(|v| **v).count();
    let both = a.iter().zip(b).filter(|(p, q)| **p && **q).count();
    if na + nb == 0 {
        1.0
    } else {
        2.0 * both as f64 / (na + nb) as f64
    }
}

/// Every band `lo <= hi` of quantized levels, segmented pixel by pixel.
/// Returns `(lo, hi, dsc)` of the first best band in (lo, hi) order.
pub fn brute_force_band(image: &Image, gt: &Mask, levels: usize) -> (usize, usize, f64) {
    let q: Vec<usize> = image.data.iter().map(|&v| quantize(v, levels)).collect();
    let mut best = (0, 0, -1.0);
    for lo in 0..levels {
        for hi in lo..levels {
            let seg: Vec<bool> = q.iter().map(|&l| lo <= l && l <= hi).collect();
            let d = dice(&seg, &gt.data);
            if d > best.2 {
                best = (lo, hi, d);
            }
        }
    }
    best
}

/// Signed-rank test by listing all 2^n sign patterns of the non-zero
/// differences `a - b`. Returns `(p_greater, p_less, p_two_sided)`.
pub fn wilcoxon_enumerated(a: &[f64], b: &[f64]) -> (f64, f64, f64) {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).filter(|v| *v != 0.0).collect();
    let n = d.len();
    if n == 0 {
        return (1.0, 1.0, 1.0);
    }
    // midrank: 1 + #smaller + (#equal - 1) / 2
    let rank: Vec<f64> = d
        .iter()
        .map(|v| {
            let smaller = d.iter().filter(|w| w.abs() < v.abs()).count() as f64;
            let equal = d.iter().filter(|w| w.abs() == v.abs()).count() as f64;
            1.0 + smaller + (equal - 1.0) / 2.0
        })
        .collect();
    let observed: f64 = d.iter().zip(&rank).filter(|(v, _)| **v > 0.0).map(|(_, r)| r).sum();
    let (mut ge, mut le) = (0u64, 0u64);
    for pattern in 0u64..(1 << n) {
        let w: f64 = (0..n).filter(|i| pattern >> i & 1 == 1).map(|i| rank[i]).sum();
        ge += (w >= observed) as u64;
        le += (w <= observed) as u64;
    }
    let total = (1u64 << n) as f64;
    let (pg, pl) = (ge as f64 / total, le as f64 / total);
    (pg, pl, (2.0 * pg.min(pl)).min(1.0))
}
