use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Norms below this cannot be projected onto the unit sphere.
pub const MIN_NORM: f64 = 1e-12;

pub fn l2_normalize_slice(x: &[f64]) -> Result<Vec<f64>> {
    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(norm >= MIN_NORM) {
        return Err(Error::Normalization(norm));
    }
    Ok(x.iter().map(|v| v / norm).collect())
}

/// `dL/dx = (g - y (y . g)) / |x|` with `y = x / |x|`.
pub fn l2_normalize_slice_backward(x: &[f64], grad: &[f64]) -> Result<Vec<f64>> {
    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(norm >= MIN_NORM) {
        return Err(Error::Normalization(norm));
    }
    let proj: f64 = x.iter().zip(grad).map(|(a, g)| a * g).sum::<f64>() / norm;
    Ok(x
        .iter()
        .zip(grad)
        .map(|(a, g)| (g - a / norm * proj) / norm)
        .collect())
}

/// Projects a tensor (treated as one flat vector) onto the unit sphere.
pub fn l2_normalize(input: &Tensor) -> Result<Tensor> {
    Tensor::new(input.shape().to_vec(), l2_normalize_slice(input.data())?)
}

pub fn l2_normalize_backward(input: &Tensor, grad: &Tensor) -> Result<Tensor> {
    input.check_same_shape(grad, "l2_normalize_backward")?;
    Tensor::new(
        input.shape().to_vec(),
        l2_normalize_slice_backward(input.data(), grad.data())?,
    )
}
