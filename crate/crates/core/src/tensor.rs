//! Dense row-major `f64` tensor.
//!
//! Three-dimensional tensors follow the CHW convention throughout the crate.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{shape_err, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.iter().any(|&d| d == 0) {
            return Err(shape_err("Tensor::new", format!("zero extent in {shape:?}")));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(shape_err(
                "Tensor::new",
                format!("shape {shape:?} needs {n} values, got {}", data.len()),
            ));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    /// One-dimensional tensor holding `data`.
    pub fn from_vec(data: Vec<f64>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f64) -> Self {
        let n: usize = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: (0..n).map(&mut f).collect(),
        }
    }

    /// Zero-mean Gaussian entries with standard deviation `std`.
    pub fn randn<R: Rng + ?Sized>(shape: &[usize], std: f64, rng: &mut R) -> Self {
        Self::from_fn(shape, |_| {
            let z: f64 = rng.sample(StandardNormal);
            z * std
        })
    }

    /// Uniform entries in `[lo, hi)`.
    pub fn uniform<R: Rng + ?Sized>(shape: &[usize], lo: f64, hi: f64, rng: &mut R) -> Self {
        Self::from_fn(shape, |_| rng.gen_range(lo..hi))
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// `(channels, height, width)` of a rank-3 tensor.
    pub fn chw(&self) -> Result<(usize, usize, usize)> {
        match self.shape[..] {
            [c, h, w] => Ok((c, h, w)),
            _ => Err(shape_err(
                "Tensor::chw",
                format!("expected a CHW tensor, got shape {:?}", self.shape),
            )),
        }
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(shape_err(
                "Tensor::reshape",
                format!("cannot view {:?} as {:?}", self.shape, shape),
            ));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn get3(&self, c: usize, y: usize, x: usize) -> f64 {
        let (h, w) = (self.shape[1], self.shape[2]);
        self.data[(c * h + y) * w + x]
    }

    pub fn set3(&mut self, c: usize, y: usize, x: usize, v: f64) {
        let (h, w) = (self.shape[1], self.shape[2]);
        self.data[(c * h + y) * w + x] = v;
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&mut self, k: f64) {
        self.data.iter_mut().for_each(|v| *v *= k);
    }

    pub fn add_assign(&mut self, other: &Tensor) -> Result<()> {
        self.check_same_shape(other, "Tensor::add_assign")?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn mul_assign(&mut self, other: &Tensor) -> Result<()> {
        self.check_same_shape(other, "Tensor::mul_assign")?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a *= b;
        }
        Ok(())
    }

    pub fn dot(&self, other: &Tensor) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub(crate) fn check_same_shape(&self, other: &Tensor, op: &'static str) -> Result<()> {
        if self.shape != other.shape {
            return Err(shape_err(
                op,
                format!("{:?} vs {:?}", self.shape, other.shape),
            ));
        }
        Ok(())
    }

    /// Concatenates CHW tensors of equal channel count and height along width.
    pub fn concat_width(parts: &[&Tensor]) -> Result<Tensor> {
        let (c, h, _) = parts
            .first()
            .ok_or_else(|| shape_err("Tensor::concat_width", "no inputs"))?
            .chw()?;
        let mut total_w = 0;
        for p in parts {
            let (pc, ph, pw) = p.chw()?;
            if pc != c || ph != h {
                return Err(shape_err(
                    "Tensor::concat_width",
                    format!("part {:?} does not match {c}x{h}", p.shape),
                ));
            }
            total_w += pw;
        }
        let mut out = Tensor::zeros(&[c, h, total_w]);
        for ch in 0..c {
            for y in 0..h {
                let mut off = 0;
                for p in parts {
                    let pw = p.shape[2];
                    let src = &p.data[(ch * h + y) * pw..(ch * h + y + 1) * pw];
                    let dst_start = (ch * h + y) * total_w + off;
                    out.data[dst_start..dst_start + pw].copy_from_slice(src);
                    off += pw;
                }
            }
        }
        Ok(out)
    }

    /// Splits a CHW tensor along width into pieces of the given widths.
    pub fn split_width(&self, widths: &[usize]) -> Result<Vec<Tensor>> {
        let (c, h, w) = self.chw()?;
        if widths.iter().sum::<usize>() != w {
            return Err(shape_err(
                "Tensor::split_width",
                format!("widths {widths:?} do not sum to {w}"),
            ));
        }
        let mut out: Vec<Tensor> = widths.iter().map(|&pw| Tensor::zeros(&[c, h, pw])).collect();
        for ch in 0..c {
            for y in 0..h {
                let mut off = 0;
                for (p, &pw) in out.iter_mut().zip(widths) {
                    let src = (ch * h + y) * w + off;
                    p.data[(ch * h + y) * pw..(ch * h + y + 1) * pw]
                        .copy_from_slice(&self.data[src..src + pw]);
                    off += pw;
                }
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_rejects_bad_length() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::new(vec![2, 0], vec![]).is_err());
        assert!(Tensor::new(vec![2, 3], vec![0.0; 6]).is_ok());
    }

    #[test]
    fn concat_then_split_restores_parts() {
        let a = Tensor::from_fn(&[2, 3, 2], |i| i as f64);
        let b = Tensor::from_fn(&[2, 3, 4], |i| 100.0 + i as f64);
        let cat = Tensor::concat_width(&[&a, &b]).unwrap();
        assert_eq!(cat.shape(), &[2, 3, 6]);
        assert_eq!(cat.get3(1, 2, 1), a.get3(1, 2, 1));
        assert_eq!(cat.get3(1, 2, 3), b.get3(1, 2, 1));
        let parts = cat.split_width(&[2, 4]).unwrap();
        assert_eq!(parts[0], a);
        assert_eq!(parts[1], b);
    }
}
