use crate::error::{shape_err, Result};
use crate::tensor::Tensor;

fn check_even(input: &Tensor) -> Result<(usize, usize, usize)> {
    let (c, h, w) = input.chw()?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(shape_err(
            "max_pool2d",
            format!("2x2/2 pooling needs even extents, got {h}x{w}"),
        ));
    }
    Ok((c, h, w))
}

/// Row-major index (within the plane) of the first maximum of the 2x2 window.
fn window_argmax(plane: &[f64], w: usize, oy: usize, ox: usize) -> usize {
    let mut best = (2 * oy) * w + 2 * ox;
    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
        let idx = (2 * oy + dy) * w + 2 * ox + dx;
        if plane[idx] > plane[best] {
            best = idx;
        }
    }
    best
}

/// 2x2 max pooling with stride 2.
pub fn max_pool2d(input: &Tensor) -> Result<Tensor> {
    let (c, h, w) = check_even(input)?;
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(c * oh * ow);
    for ci in 0..c {
        let plane = &input.data()[ci * h * w..(ci + 1) * h * w];
        for oy in 0..oh {
            for ox in 0..ow {
                out.push(plane[window_argmax(plane, w, oy, ox)]);
            }
        }
    }
    Tensor::new(vec![c, oh, ow], out)
}

/// Routes each output gradient to the first maximum of its window.
pub fn max_pool2d_backward(input: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    let (c, h, w) = check_even(input)?;
    let (oh, ow) = (h / 2, w / 2);
    if grad_out.shape() != [c, oh, ow] {
        return Err(shape_err(
            "max_pool2d_backward",
            format!("grad_out {:?}, expected {:?}", grad_out.shape(), [c, oh, ow]),
        ));
    }
    let mut grad = vec![0.0; input.len()];
    for ci in 0..c {
        let plane = &input.data()[ci * h * w..(ci + 1) * h * w];
        for oy in 0..oh {
            for ox in 0..ow {
                let idx = window_argmax(plane, w, oy, ox);
                grad[ci * h * w + idx] += grad_out.data()[(ci * oh + oy) * ow + ox];
            }
        }
    }
    Tensor::new(input.shape().to_vec(), grad)
}
