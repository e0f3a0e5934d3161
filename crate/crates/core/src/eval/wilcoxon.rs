//! Paired Wilcoxon signed-rank test.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Largest sample (after dropping zero differences) that gets the exact
/// null distribution.
pub const EXACT_MAX_N: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    /// Non-zero differences used.
    pub n: usize,
    /// Sum of (average) ranks of positive differences `a - b`.
    pub w_plus: f64,
    pub p_two_sided: f64,
    /// Alternative: `a` tends to exceed `b`.
    pub p_greater: f64,
    /// Alternative: `a` tends to fall below `b`.
    pub p_less: f64,
    pub exact: bool,
    /// Every difference was zero; all p-values are 1.
    pub degenerate: bool,
}

/// Ranks of `|d|` with ties averaged, returned doubled so they stay integral.
fn doubled_ranks(abs: &[f64]) -> Vec<u64> {
    let mut order: Vec<usize> = (0..abs.len()).collect();
    order.sort_by(|&i, &j| abs[i].total_cmp(&abs[j]));
    let mut ranks = vec![0u64; abs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && abs[order[j + 1]] == abs[order[i]] {
            j += 1;
        }
        // positions i..=j hold ranks i+1..=j+1; their mean doubled is i+j+2
        for &k in &order[i..=j] {
            ranks[k] = (i + j + 2) as u64;
        }
        i = j + 1;
    }
    ranks
}

/// Tests whether paired samples differ. Zero differences are dropped before
/// ranking. Up to [`EXACT_MAX_N`] pairs the null distribution of the
/// positive rank sum is computed exactly over all sign assignments; beyond
/// that a normal approximation with tie-corrected variance is used. The
/// two-sided p-value is twice the smaller tail, capped at 1.
pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64]) -> Result<WilcoxonResult> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("wilcoxon: {} vs {} samples", a.len(), b.len())));
    }
    if a.is_empty() {
        return Err(Error::Empty("wilcoxon: no pairs".into()));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).filter(|v| *v != 0.0).collect();
    if d.iter().any(|v| !v.is_finite()) {
        return Err(Error::Config("wilcoxon: non-finite difference".into()));
    }
    let n = d.len();
    if n == 0 {
        return Ok(WilcoxonResult {
            n: 0,
            w_plus: 0.0,
            p_two_sided: 1.0,
            p_greater: 1.0,
            p_less: 1.0,
            exact: true,
            degenerate: true,
        });
    }
    let abs: Vec<f64> = d.iter().map(|v| v.abs()).collect();
    let ranks = doubled_ranks(&abs);
    let w2: u64 = ranks.iter().zip(&d).filter(|(_, v)| **v > 0.0).map(|(r, _)| r).sum();
    let (p_greater, p_less, exact) = if n <= EXACT_MAX_N {
        // counts[s] = number of sign assignments with doubled positive sum s
        let total: u64 = ranks.iter().sum();
        let mut counts = vec![0u64; total as usize + 1];
        counts[0] = 1;
        let mut reach = 0usize;
        for &r in &ranks {
            let r = r as usize;
            for s in (0..=reach).rev() {
                if counts[s] != 0 {
                    counts[s + r] += counts[s];
                }
            }
            reach += r;
        }
        let all = (1u64 << n) as f64;
        let w = w2 as usize;
        let ge: u64 = counts[w..].iter().sum();
        let le: u64 = counts[..=w].iter().sum();
        (ge as f64 / all, le as f64 / all, true)
    } else {
        let nf = n as f64;
        let mean = nf * (nf + 1.0) / 4.0;
        let mut tie = 0.0;
        let mut sorted = abs.clone();
        sorted.sort_by(f64::total_cmp);
        let mut i = 0;
        while i < n {
            let mut j = i;
            while j + 1 < n && sorted[j + 1] == sorted[i] {
                j += 1;
            }
            let t = (j - i + 1) as f64;
            tie += t * t * t - t;
            i = j + 1;
        }
        let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie / 48.0;
        let z = (w2 as f64 / 2.0 - mean) / var.sqrt();
        let normal = Normal::new(0.0, 1.0).expect("standard normal");
        (normal.cdf(-z), normal.cdf(z), false)
    };
    Ok(WilcoxonResult {
        n,
        w_plus: w2 as f64 / 2.0,
        p_two_sided: (2.0 * p_greater.min(p_less)).min(1.0),
        p_greater,
        p_less,
        exact,
        degenerate: false,
    })
}
