//! Exhaustive search over segmentation parameters.
//!
//! Candidates are ranked by object Dice, then F-score, then lower object
//! Hausdorff (an undefined distance ranks last), then by the parameters
//! themselves in ascending `(alpha, area_thr, filter_size)` order.

use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::error::{invalid, Result};
use crate::segmentation::SegParams;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SearchGrid {
    pub alphas: Vec<f64>,
    pub area_thrs: Vec<usize>,
    pub filter_sizes: Vec<usize>,
}

impl Default for SearchGrid {
    fn default() -> Self {
        Self {
            alphas: alloc::vec![0.05, 0.10, 0.15, 0.20, 0.25],
            area_thrs: alloc::vec![250, 500, 750, 1000],
            filter_sizes: alloc::vec![5, 9, 15, 19],
        }
    }
}

impl SearchGrid {
    pub fn len(&self) -> usize {
        self.alphas.len() * self.area_thrs.len() * self.filter_sizes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Every combination, in nested list order (alpha outermost).
    pub fn combinations(&self) -> Result<Vec<SegParams>> {
        if self.is_empty() {
            return Err(invalid!("search grid has no combinations"));
        }
        let mut out = Vec::with_capacity(self.len());
        for &alpha in &self.alphas {
            for &area_thr in &self.area_thrs {
                for &filter_size in &self.filter_sizes {
                    let p = SegParams::new(alpha, area_thr, filter_size);
                    p.validate()?;
                    out.push(p);
                }
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Score {
    pub object_dice: f64,
    pub fscore: f64,
    pub object_hausdorff: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GridEntry {
    pub params: SegParams,
    pub score: Score,
}

fn param_order(a: &SegParams, b: &SegParams) -> Ordering {
    a.alpha
        .total_cmp(&b.alpha)
        .then(a.area_thr.cmp(&b.area_thr))
        .then(a.filter_size.cmp(&b.filter_size))
}

/// `Less` when `a` is the better entry.
pub fn rank(a: &GridEntry, b: &GridEntry) -> Ordering {
    let hd = |e: &GridEntry| e.score.object_hausdorff.unwrap_or(f64::INFINITY);
    b.score
        .object_dice
        .total_cmp(&a.score.object_dice)
        .then(b.score.fscore.total_cmp(&a.score.fscore))
        .then(hd(a).total_cmp(&hd(b)))
        .then_with(|| param_order(&a.params, &b.params))
}

/// Index of the best entry, `None` for an empty table.
pub fn select_best(table: &[GridEntry]) -> Option<usize> {
    (0..table.len()).min_by(|&i, &j| rank(&table[i], &table[j]))
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SearchOutcome {
    pub best: SegParams,
    pub table: Vec<GridEntry>,
}

/// Scores every combination with `scorer` and picks the best.
pub fn search(grid: &SearchGrid, mut scorer: impl FnMut(&SegParams) -> Result<Score>) -> Result<SearchOutcome> {
    let table = grid
        .combinations()?
        .into_iter()
        .map(|params| Ok(GridEntry { params, score: scorer(&params)? }))
        .collect::<Result<Vec<_>>>()?;
    outcome(table)
}

/// Wraps an already scored table.
pub fn outcome(table: Vec<GridEntry>) -> Result<SearchOutcome> {
    let best = select_best(&table).ok_or_else(|| invalid!("search grid has no combinations"))?;
    Ok(SearchOutcome {
        best: table[best].params,
        table,
    })
}
