//! Unpaired sampling of the two training domains.
//!
//! An epoch walks one random permutation of the larger domain. The smaller
//! domain is drawn independently from back-to-back fresh permutations cut
//! to the same length, so within an epoch its visit counts differ by at most
//! one. Every sample gets its own augmentation draw when augmentation is on.

use rand::seq::SliceRandom;
use rand::Rng;

use serde::{Deserialize, Serialize};

use crate::phantom::AugmentOp;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Draw {
    pub x: usize,
    pub x_op: AugmentOp,
    pub y: usize,
    pub y_op: AugmentOp,
}

fn permutation<R: Rng>(n: usize, rng: &mut R) -> Vec<usize> {
    let mut v: Vec<usize> = (0..n).collect();
    v.shuffle(rng);
    v
}

fn resampled<R: Rng>(n: usize, len: usize, rng: &mut R) -> Vec<usize> {
    let mut v = Vec::with_capacity(len + n);
    while v.len() < len {
        v.extend(permutation(n, rng));
    }
    v.truncate(len);
    v
}

pub fn iterations_per_epoch(n_x: usize, n_y: usize, batch_size: usize) -> usize {
    n_x.max(n_y).div_ceil(batch_size)
}

/// Sample order for one epoch; `n_x` and `n_y` must be positive.
pub fn epoch_plan<R: Rng>(n_x: usize, n_y: usize, augmentation: bool, rng: &mut R) -> Vec<Draw> {
    let len = n_x.max(n_y);
    let (xs, ys) = if n_x >= n_y {
        let xs = permutation(n_x, rng);
        (xs, resampled(n_y, len, rng))
    } else {
        let ys = permutation(n_y, rng);
        (resampled(n_x, len, rng), ys)
    };
    let op = |rng: &mut R| {
        if augmentation {
            AugmentOp::ALL[rng.gen_range(0..AugmentOp::ALL.len())]
        } else {
            AugmentOp::Identity
        }
    };
    xs.into_iter()
        .zip(ys)
        .map(|(x, y)| {
            let x_op = op(rng);
            let y_op = op(rng);
            Draw { x, x_op, y, y_op }
        })
        .collect()
}
