//! Uniform random pixel corruption.
//!
//! A mask at level `p` marks exactly `floor(p * H * W)` spatial sites, drawn
//! without replacement by a partial Fisher-Yates shuffle of all `H * W`
//! indices. The shuffle consumes the same random draws for its first `k`
//! positions whatever `p` is, so masks from one seed are nested: a higher
//! level marks a superset of the sites of a lower one.

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{Scalar, Tensor};

/// Fill value of corrupted pixels in normalized `[-1, 1]` space (black).
pub const DEFAULT_FILL: f64 = -1.0;

/// Number of sites corrupted at level `p` on an `h x w` grid.
///
/// A small tolerance keeps decimal levels such as 0.29 from losing a site to
/// binary rounding (`0.29 * 100` is `28.999999999999996` in f64).
pub fn corrupted_count(h: usize, w: usize, p: f64) -> Result<usize> {
    check_level(p)?;
    let n = h * w;
    let exact = p * n as f64;
    let count = (exact + 1e-9 * exact.max(1.0)).floor() as usize;
    Ok(count.min(n))
}

pub fn check_level(p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Range(format!("corruption level {p} outside [0, 1]")));
    }
    Ok(())
}

/// Seed of the fixed evaluation mask for one image.
pub fn eval_seed(seed: u64, image_id: u64) -> u64 {
    seed ^ image_id
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorruptionMask {
    pub height: usize,
    pub width: usize,
    pub level: f64,
    /// Seed the mask was drawn from, when it came from its own stream.
    pub seed: Option<u64>,
    /// Row-major, `true` = corrupted.
    pub mask: Vec<bool>,
}

impl CorruptionMask {
    /// Draws a mask from `rng`.
    pub fn make(height: usize, width: usize, level: f64, rng: &mut Rng) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidShape(format!("mask extents {height}x{width}")));
        }
        let k = corrupted_count(height, width, level)?;
        let n = height * width;
        let mut order: Vec<usize> = (0..n).collect();
        for i in 0..k {
            let j = i + rng.below((n - i) as u64) as usize;
            order.swap(i, j);
        }
        let mut mask = vec![false; n];
        for &idx in &order[..k] {
            mask[idx] = true;
        }
        Ok(CorruptionMask {
            height,
            width,
            level,
            seed: None,
            mask,
        })
    }

    /// The mask drawn from a fresh stream seeded with `seed`.
    pub fn from_seed(height: usize, width: usize, level: f64, seed: u64) -> Result<Self> {
        let mut m = Self::make(height, width, level, &mut Rng::new(seed))?;
        m.seed = Some(seed);
        Ok(m)
    }

    pub fn empty(height: usize, width: usize) -> Result<Self> {
        Self::make(height, width, 0.0, &mut Rng::new(0))
    }

    pub fn count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn is_set(&self, y: usize, x: usize) -> bool {
        self.mask[y * self.width + x]
    }

    pub fn set(&mut self, y: usize, x: usize, value: bool) {
        self.mask[y * self.width + x] = value;
    }

    /// Sets every channel of the marked sites of a `(C, H, W)` image to
    /// `fill`. Other values are copied unchanged.
    pub fn apply<T: Scalar>(&self, img: &Tensor<T>, fill: T) -> Result<Tensor<T>> {
        let mut out = img.clone();
        self.apply_in_place(&mut out, fill)?;
        Ok(out)
    }

    pub fn apply_in_place<T: Scalar>(&self, img: &mut Tensor<T>, fill: T) -> Result<()> {
        let [_, h, w] = *img.shape() else {
            return Err(Error::ShapeMismatch(format!(
                "mask applies to CHW images, got {:?}",
                img.shape()
            )));
        };
        if (h, w) != (self.height, self.width) {
            return Err(Error::ShapeMismatch(format!(
                "mask is {}x{}, image is {h}x{w}",
                self.height, self.width
            )));
        }
        for plane in img.data_mut().chunks_mut(h * w) {
            for (v, &m) in plane.iter_mut().zip(&self.mask) {
                if m {
                    *v = fill;
                }
            }
        }
        Ok(())
    }
}

/// Applies one mask per image of an `(N, C, H, W)` batch.
pub fn apply_masks<T: Scalar>(
    batch: &Tensor<T>,
    masks: &[CorruptionMask],
    fill: T,
) -> Result<Tensor<T>> {
    let (n, _, _, _) = batch.dims4()?;
    if masks.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "{} masks for a batch of {n}",
            masks.len()
        )));
    }
    let items = masks
        .iter()
        .enumerate()
        .map(|(i, m)| m.apply(&batch.index_axis0(i)?, fill))
        .collect::<Result<Vec<_>>>()?;
    Tensor::stack(&items)
}

/// Corrupts every image of a batch with a fresh mask drawn from `rng`.
pub fn corrupt_batch<T: Scalar>(
    batch: &Tensor<T>,
    level: f64,
    fill: T,
    rng: &mut Rng,
) -> Result<(Tensor<T>, Vec<CorruptionMask>)> {
    let (n, _, h, w) = batch.dims4()?;
    let masks = (0..n)
        .map(|_| CorruptionMask::make(h, w, level, rng))
        .collect::<Result<Vec<_>>>()?;
    Ok((apply_masks(batch, &masks, fill)?, masks))
}
