use crate::error::Result;
use crate::tensor::Tensor;

pub fn relu(input: &Tensor) -> Tensor {
    input.map(|v| v.max(0.0))
}

/// Passes `grad` through where `input > 0`, zero elsewhere.
pub fn relu_backward(input: &Tensor, grad: &Tensor) -> Result<Tensor> {
    input.check_same_shape(grad, "relu_backward")?;
    let data = input
        .data()
        .iter()
        .zip(grad.data())
        .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::new(input.shape().to_vec(), data)
}
