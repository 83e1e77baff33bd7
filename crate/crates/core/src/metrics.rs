//! Normalized mean squared error, `|h - h_hat|^2 / |h|^2`, averaged per
//! image over a dataset.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// NMSE of one image pair. Sums run in f64.
pub fn nmse<T: Scalar>(h: &Tensor<T>, h_hat: &Tensor<T>) -> Result<f64> {
    h.expect_same_shape(h_hat)?;
    let mut num = 0.0f64;
    let mut den = 0.0f64;
    for (&a, &b) in h.data().iter().zip(h_hat.data()) {
        let (a, b) = (a.to_f64(), b.to_f64());
        num += (a - b) * (a - b);
        den += a * a;
    }
    if den == 0.0 {
        return Err(Error::UndefinedReference);
    }
    Ok(num / den)
}

#[derive(Debug, Clone, PartialEq)]
pub struct NmseResult {
    pub per_image: Vec<f64>,
    pub mean: f64,
    pub count: usize,
}

impl NmseResult {
    pub fn from_values(per_image: Vec<f64>) -> Result<Self> {
        if per_image.is_empty() {
            return Err(Error::EmptyInput("NMSE over zero images".into()));
        }
        let count = per_image.len();
        let mean = per_image.iter().sum::<f64>() / count as f64;
        Ok(NmseResult {
            per_image,
            mean,
            count,
        })
    }
}

/// Mean of per-image ratios over `(h, h_hat)` pairs.
pub fn nmse_dataset<'a, T: Scalar + 'a>(
    pairs: impl IntoIterator<Item = (&'a Tensor<T>, &'a Tensor<T>)>,
) -> Result<NmseResult> {
    let values = pairs
        .into_iter()
        .map(|(h, h_hat)| nmse(h, h_hat))
        .collect::<Result<Vec<_>>>()?;
    NmseResult::from_values(values)
}
