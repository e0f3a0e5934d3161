//! Exact grid permutations used for data augmentation.

use serde::{Deserialize, Serialize};

use super::grid::Grid;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum AugmentOp {
    Identity,
    /// Quarter turn counter-clockwise.
    Rot90,
    Rot180,
    Rot270,
    /// Mirror left/right.
    FlipH,
    /// Mirror top/bottom.
    FlipV,
}

impl AugmentOp {
    pub const ALL: [AugmentOp; 6] = [
        AugmentOp::Identity,
        AugmentOp::Rot90,
        AugmentOp::Rot180,
        AugmentOp::Rot270,
        AugmentOp::FlipH,
        AugmentOp::FlipV,
    ];

    /// Source coordinate that lands on `(row, col)` of an `n x n` output.
    #[inline]
    fn source(self, n: usize, row: usize, col: usize) -> (usize, usize) {
        let last = n - 1;
        match self {
            AugmentOp::Identity => (row, col),
            AugmentOp::Rot90 => (col, last - row),
            AugmentOp::Rot180 => (last - row, last - col),
            AugmentOp::Rot270 => (last - col, row),
            AugmentOp::FlipH => (row, last - col),
            AugmentOp::FlipV => (last - row, col),
        }
    }
}

pub fn augment<T: Clone>(grid: &Grid<T>, op: AugmentOp) -> Result<Grid<T>> {
    if !grid.is_square() {
        return Err(Error::Shape(format!(
            "augmentation needs a square grid, got {}x{}",
            grid.height, grid.width
        )));
    }
    let n = grid.height;
    let mut data = Vec::with_capacity(grid.len());
    for row in 0..n {
        for col in 0..n {
            let (r, c) = op.source(n, row, col);
            data.push(grid.get(r, c).clone());
        }
    }
    Ok(Grid {
        height: n,
        width: n,
        data,
    })
}
