//! 2-D convolution via im2col and a single GEMM per call.

use super::linalg::gemm;
use super::params::{LayerParams, ParamGrads};
use crate::error::{shape_err, Error, Result};
use crate::tensor::Tensor;

/// Output extent along one axis: `floor((in + 2 pad - k) / stride) + 1`.
pub fn conv_output_extent(input: usize, kernel: usize, stride: usize, pad: usize) -> Result<usize> {
    if stride == 0 {
        return Err(Error::Config("convolution stride must be positive".into()));
    }
    let padded = input + 2 * pad;
    if kernel > padded {
        return Err(shape_err(
            "conv2d",
            format!("kernel {kernel} exceeds padded input extent {padded}"),
        ));
    }
    Ok((padded - kernel) / stride + 1)
}

struct Geometry {
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    oh: usize,
    ow: usize,
}

fn geometry(input: &Tensor, params: &LayerParams, stride: usize, pad: usize) -> Result<Geometry> {
    let (c, h, w) = input.chw()?;
    let k = params.kernel();
    if params.weights.shape()[3] != k {
        return Err(shape_err("conv2d", "only square kernels are supported"));
    }
    if params.in_channels() != c {
        return Err(shape_err(
            "conv2d",
            format!(
                "input channels: layer expects {}, input has {c}",
                params.in_channels()
            ),
        ));
    }
    let oh = conv_output_extent(h, k, stride, pad)
        .map_err(|e| annotate(e, "height"))?;
    let ow = conv_output_extent(w, k, stride, pad).map_err(|e| annotate(e, "width"))?;
    Ok(Geometry { c, h, w, k, oh, ow })
}

fn annotate(e: Error, dim: &str) -> Error {
    match e {
        Error::Shape { op, detail } => Error::Shape {
            op,
            detail: format!("{dim}: {detail}"),
        },
        other => other,
    }
}

/// Writes the im2col expansion of `input` into columns `[col_off, col_off + oh*ow)`
/// of a row-major matrix with `ncols` columns.
fn im2col(input: &[f64], g: &Geometry, stride: usize, pad: usize, col: &mut [f64], ncols: usize, col_off: usize) {
    let Geometry { c, h, w, k, oh, ow } = *g;
    for ci in 0..c {
        let plane = &input[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let dst = &mut col[row * ncols + col_off..row * ncols + col_off + oh * ow];
                for oy in 0..oh {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    let out_row = &mut dst[oy * ow..(oy + 1) * ow];
                    if iy < 0 || iy >= h as isize {
                        out_row.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, o) in out_row.iter_mut().enumerate() {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        *o = if ix < 0 || ix >= w as isize { 0.0 } else { src[ix as usize] };
                    }
                }
            }
        }
    }
}

fn col2im(col: &[f64], g: &Geometry, stride: usize, pad: usize, ncols: usize, col_off: usize, out: &mut [f64]) {
    let Geometry { c, h, w, k, oh, ow } = *g;
    for ci in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let src = &col[row * ncols + col_off..row * ncols + col_off + oh * ow];
                for oy in 0..oh {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let base = ci * h * w + iy as usize * w;
                    for ox in 0..ow {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix >= 0 && ix < w as isize {
                            out[base + ix as usize] += src[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
}

fn batch_geometry(inputs: &[&Tensor], params: &LayerParams, stride: usize, pad: usize) -> Result<Geometry> {
    let first = inputs
        .first()
        .ok_or_else(|| shape_err("conv2d", "empty batch"))?;
    let g = geometry(first, params, stride, pad)?;
    for t in &inputs[1..] {
        if t.shape() != first.shape() {
            return Err(shape_err(
                "conv2d",
                format!("batch members differ: {:?} vs {:?}", t.shape(), first.shape()),
            ));
        }
    }
    Ok(g)
}

/// Lowers the whole batch into one `(c*k*k) x (n*oh*ow)` matrix.
fn lower(inputs: &[&Tensor], g: &Geometry, stride: usize, pad: usize) -> (Vec<f64>, usize) {
    let per = g.oh * g.ow;
    let ncols = per * inputs.len();
    let rows = g.c * g.k * g.k;
    // 1x1 stride-1 unpadded kernels need no expansion for a single input.
    if g.k == 1 && stride == 1 && pad == 0 && inputs.len() == 1 {
        return (inputs[0].data().to_vec(), ncols);
    }
    let mut col = vec![0.0; rows * ncols];
    for (i, t) in inputs.iter().enumerate() {
        im2col(t.data(), g, stride, pad, &mut col, ncols, i * per);
    }
    (col, ncols)
}

/// Convolves a CHW input with `params`. Output is `[out, oh, ow]`.
pub fn conv2d(input: &Tensor, params: &LayerParams, stride: usize, pad: usize) -> Result<Tensor> {
    Ok(conv2d_batch(&[input], params, stride, pad)?.remove(0))
}

/// Convolves every member of a same-shaped batch with one GEMM.
pub fn conv2d_batch(inputs: &[&Tensor], params: &LayerParams, stride: usize, pad: usize) -> Result<Vec<Tensor>> {
    let g = batch_geometry(inputs, params, stride, pad)?;
    let (col, ncols) = lower(inputs, &g, stride, pad);
    let out_ch = params.out_channels();
    let rows = g.c * g.k * g.k;
    let mut out = vec![0.0; out_ch * ncols];
    for (o, &b) in params.bias.data().iter().enumerate() {
        out[o * ncols..(o + 1) * ncols].fill(b);
    }
    gemm(
        out_ch,
        rows,
        ncols,
        1.0,
        params.weights.data(),
        (rows, 1),
        &col,
        (ncols, 1),
        1.0,
        &mut out,
        (ncols, 1),
    );
    let per = g.oh * g.ow;
    inputs
        .iter()
        .enumerate()
        .map(|(i, _)| {
            let mut data = Vec::with_capacity(out_ch * per);
            for o in 0..out_ch {
                data.extend_from_slice(&out[o * ncols + i * per..o * ncols + (i + 1) * per]);
            }
            Tensor::new(vec![out_ch, g.oh, g.ow], data)
        })
        .collect()
}

/// Backward pass of [`conv2d`].
///
/// Returns the input gradient (when `need_input` is set) and the parameter
/// gradients.
pub fn conv2d_backward(
    input: &Tensor,
    params: &LayerParams,
    stride: usize,
    pad: usize,
    grad_out: &Tensor,
    need_input: bool,
) -> Result<(Option<Tensor>, ParamGrads)> {
    let (mut gin, gp) = conv2d_batch_backward(&[input], params, stride, pad, &[grad_out], need_input)?;
    Ok((gin.pop(), gp))
}

/// Backward pass of [`conv2d_batch`]; parameter gradients are summed over the batch.
pub fn conv2d_batch_backward(
    inputs: &[&Tensor],
    params: &LayerParams,
    stride: usize,
    pad: usize,
    grad_outs: &[&Tensor],
    need_input: bool,
) -> Result<(Vec<Tensor>, ParamGrads)> {
    let g = batch_geometry(inputs, params, stride, pad)?;
    if grad_outs.len() != inputs.len() {
        return Err(shape_err("conv2d_backward", "gradient batch size differs from input batch"));
    }
    let out_ch = params.out_channels();
    let per = g.oh * g.ow;
    let ncols = per * inputs.len();
    let rows = g.c * g.k * g.k;
    let want = [out_ch, g.oh, g.ow];
    let mut gmat = vec![0.0; out_ch * ncols];
    for (i, go) in grad_outs.iter().enumerate() {
        if go.shape() != want {
            return Err(shape_err(
                "conv2d_backward",
                format!("grad_out {:?}, expected {want:?}", go.shape()),
            ));
        }
        for o in 0..out_ch {
            gmat[o * ncols + i * per..o * ncols + (i + 1) * per]
                .copy_from_slice(&go.data()[o * per..(o + 1) * per]);
        }
    }

    let (col, _) = lower(inputs, &g, stride, pad);
    let mut gw = vec![0.0; out_ch * rows];
    // dW = G * col^T
    gemm(out_ch, ncols, rows, 1.0, &gmat, (ncols, 1), &col, (1, ncols), 0.0, &mut gw, (rows, 1));
    let gb: Vec<f64> = (0..out_ch)
        .map(|o| gmat[o * ncols..(o + 1) * ncols].iter().sum())
        .collect();
    let grads = ParamGrads {
        weights: Tensor::new(params.weights.shape().to_vec(), gw)?,
        bias: Tensor::new(vec![out_ch], gb)?,
    };

    let mut input_grads = Vec::new();
    if need_input {
        // dcol = W^T * G
        let mut gcol = vec![0.0; rows * ncols];
        gemm(rows, out_ch, ncols, 1.0, params.weights.data(), (1, rows), &gmat, (ncols, 1), 0.0, &mut gcol, (ncols, 1));
        for (i, t) in inputs.iter().enumerate() {
            let mut gi = vec![0.0; t.len()];
            col2im(&gcol, &g, stride, pad, ncols, i * per, &mut gi);
            input_grads.push(Tensor::new(t.shape().to_vec(), gi)?);
        }
    }
    Ok((input_grads, grads))
}
