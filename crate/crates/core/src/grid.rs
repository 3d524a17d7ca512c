//! Row-major 2-D maps: posteriors, contribution weights, label maps.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Grid<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

/// Per-pixel foreground posterior in [0, 1].
pub type ProbabilityMap = Grid<f64>;
/// Per-pixel nonnegative loss weight.
pub type ContributionMap = Grid<f64>;
/// Per-pixel multiplicative contribution update.
pub type BetaMap = Grid<f64>;
/// Binary ground truth, 0 or 1.
pub type BinaryMap = Grid<u8>;
/// 0 is background, k >= 1 is object k.
pub type InstanceLabelMap = Grid<u32>;

impl<T: Clone> Grid<T> {
    pub fn filled(width: usize, height: usize, value: T) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }
}

impl<T> Grid<T> {
    pub fn from_vec(width: usize, height: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != width * height {
            return Err(invalid!(
                "grid data length {} does not match {}x{}",
                data.len(),
                width,
                height
            ));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> &T {
        &self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: T) {
        self.data[y * self.width + x] = value;
    }

    pub fn same_shape<U>(&self, other: &Grid<U>) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn map<U>(&self, f: impl FnMut(&T) -> U) -> Grid<U> {
        Grid {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(f).collect(),
        }
    }

    /// Calls `f` with the flat index of every in-bounds 4-neighbour of `idx`.
    #[inline]
    pub fn for_each_neighbor4(&self, idx: usize, mut f: impl FnMut(usize)) {
        let (x, y) = (idx % self.width, idx / self.width);
        if y > 0 {
            f(idx - self.width);
        }
        if x > 0 {
            f(idx - 1);
        }
        if x + 1 < self.width {
            f(idx + 1);
        }
        if y + 1 < self.height {
            f(idx + self.width);
        }
    }
}

impl Grid<f64> {
    /// Views the map as a `[1, H, W]` tensor.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_vec(&[1, self.height, self.width], self.data.clone())
            .expect("grid shape is consistent")
    }

    /// Reads a single-channel `[1, H, W]` (or `[H, W]`) tensor back into a map.
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let (h, w) = match t.shape() {
            [1, h, w] | [h, w] => (*h, *w),
            s => return Err(invalid!("expected a single-channel map, got shape {:?}", s)),
        };
        Self::from_vec(w, h, t.data().to_vec())
    }
}
