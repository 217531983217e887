//! Dense row-major `f64` tensors and the plain (non-differentiable) kernels
//! shared with the autodiff graph.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::Dimension(format!(
                "shape {shape:?} has a zero-sized dimension"
            )));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Dimension(format!(
                "shape {shape:?} needs {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: vec![],
            data: vec![value],
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::filled(shape, 0.0)
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    /// Column vector `n × 1`.
    pub fn column(values: Vec<f64>) -> Result<Self> {
        let n = values.len();
        Tensor::new(vec![n, 1], values)
    }

    /// Matrix from equal-length rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let d = rows.first().map(Vec::len).unwrap_or(0);
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::Dimension("rows have unequal lengths".into()));
        }
        Tensor::new(vec![n, d], rows.concat())
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

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.data.len() == 1 {
            Ok(self.data[0])
        } else {
            Err(Error::Contract(format!(
                "expected a single value, tensor has shape {:?}",
                self.shape
            )))
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn reshape(&self, shape: Vec<usize>) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        if n != self.numel() {
            return Err(Error::Dimension(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            )));
        }
        Tensor::new(shape, self.data.clone())
    }

    /// Size of the leading axis.
    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(1)
    }

    /// Number of values per leading-axis entry.
    pub fn row_len(&self) -> usize {
        self.shape.iter().skip(1).product()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let w = self.row_len();
        &self.data[i * w..(i + 1) * w]
    }

    /// Gather leading-axis entries in the given order.
    pub fn select_rows(&self, idx: &[usize]) -> Result<Tensor> {
        let w = self.row_len();
        let mut data = Vec::with_capacity(idx.len() * w);
        for &i in idx {
            if i >= self.rows() {
                return Err(Error::Dimension(format!(
                    "row {i} out of range for shape {:?}",
                    self.shape
                )));
            }
            data.extend_from_slice(self.row(i));
        }
        let mut shape = self.shape.clone();
        shape[0] = idx.len();
        Tensor::new(shape, data)
    }

    fn matrix_dims(&self, what: &str) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            [m, n] => Ok((*m, *n)),
            s => Err(Error::Dimension(format!("{what} must be a matrix, got shape {s:?}"))),
        }
    }

    pub fn transpose(&self) -> Result<Tensor> {
        let (m, n) = self.matrix_dims("transpose operand")?;
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = self.data[i * n + j];
            }
        }
        Tensor::new(vec![n, m], out)
    }
}

/// `a (m×k) · b (k×n)`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = a.matrix_dims("matmul lhs")?;
    let (k2, n) = b.matrix_dims("matmul rhs")?;
    if k != k2 {
        return Err(Error::Dimension(format!(
            "matmul inner dimensions differ: {:?} · {:?}",
            a.shape, b.shape
        )));
    }
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let arow = &a.data[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (l, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let brow = &b.data[l * n..(l + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    Tensor::new(vec![m, n], out)
}

/// Geometry of a batched multi-channel valid convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub batch: usize,
    pub in_ch: usize,
    pub height: usize,
    pub width: usize,
    pub out_ch: usize,
    pub k: usize,
}

impl ConvGeom {
    pub fn out_h(&self) -> usize {
        self.height - self.k + 1
    }
    pub fn out_w(&self) -> usize {
        self.width - self.k + 1
    }
}

pub(crate) fn conv_forward(g: ConvGeom, input: &[f64], kernels: &[f64]) -> Vec<f64> {
    let (oh, ow, k) = (g.out_h(), g.out_w(), g.k);
    let mut out = vec![0.0; g.batch * g.out_ch * oh * ow];
    for n in 0..g.batch {
        for co in 0..g.out_ch {
            let obase = (n * g.out_ch + co) * oh * ow;
            for ci in 0..g.in_ch {
                let ibase = (n * g.in_ch + ci) * g.height * g.width;
                let kbase = (co * g.in_ch + ci) * k * k;
                for i in 0..oh {
                    for j in 0..ow {
                        let mut acc = 0.0;
                        for u in 0..k {
                            let irow = ibase + (i + u) * g.width + j;
                            let krow = kbase + u * k;
                            for v in 0..k {
                                acc += input[irow + v] * kernels[krow + v];
                            }
                        }
                        out[obase + i * ow + j] += acc;
                    }
                }
            }
        }
    }
    out
}

/// Returns (d_input, d_kernels) for an upstream gradient on the conv output.
pub(crate) fn conv_backward(
    g: ConvGeom,
    input: &[f64],
    kernels: &[f64],
    upstream: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let (oh, ow, k) = (g.out_h(), g.out_w(), g.k);
    let mut d_in = vec![0.0; input.len()];
    let mut d_k = vec![0.0; kernels.len()];
    for n in 0..g.batch {
        for co in 0..g.out_ch {
            let obase = (n * g.out_ch + co) * oh * ow;
            for ci in 0..g.in_ch {
                let ibase = (n * g.in_ch + ci) * g.height * g.width;
                let kbase = (co * g.in_ch + ci) * k * k;
                for i in 0..oh {
                    for j in 0..ow {
                        let up = upstream[obase + i * ow + j];
                        if up == 0.0 {
                            continue;
                        }
                        for u in 0..k {
                            let irow = ibase + (i + u) * g.width + j;
                            let krow = kbase + u * k;
                            for v in 0..k {
                                d_in[irow + v] += up * kernels[krow + v];
                                d_k[krow + v] += up * input[irow + v];
                            }
                        }
                    }
                }
            }
        }
    }
    (d_in, d_k)
}

/// Single-channel valid cross-correlation `H×W ⋆ k×k → (H−k+1)×(W−k+1)`.
pub fn conv2d_valid(input: &Tensor, kernel: &Tensor) -> Result<Tensor> {
    let geom = conv2d_geom(input.shape(), kernel.shape())?;
    let out = conv_forward(geom, input.data(), kernel.data());
    Tensor::new(vec![geom.out_h(), geom.out_w()], out)
}

pub(crate) fn conv2d_geom(input: &[usize], kernel: &[usize]) -> Result<ConvGeom> {
    let (h, w) = match input {
        [h, w] => (*h, *w),
        s => return Err(Error::Dimension(format!("conv input must be H×W, got {s:?}"))),
    };
    let k = match kernel {
        [a, b] if a == b => *a,
        s => return Err(Error::Dimension(format!("conv kernel must be k×k, got {s:?}"))),
    };
    if k > h || k > w {
        return Err(Error::Dimension(format!(
            "kernel {kernel:?} larger than input {input:?}"
        )));
    }
    Ok(ConvGeom {
        batch: 1,
        in_ch: 1,
        height: h,
        width: w,
        out_ch: 1,
        k,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_identity_and_dot() {
        let i2 = Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let m = Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(matmul(&i2, &m).unwrap(), m);
        let a = Tensor::new(vec![1, 2], vec![1.0, 2.0]).unwrap();
        let b = Tensor::new(vec![2, 1], vec![3.0, 4.0]).unwrap();
        assert_eq!(matmul(&a, &b).unwrap().data(), &[11.0]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[2, 3]);
        let msg = matmul(&a, &b).unwrap_err().to_string();
        assert!(msg.contains("[2, 3] · [2, 3]"), "{msg}");
    }

    #[test]
    fn conv_window_sums() {
        let x = Tensor::new(vec![3, 3], (1..=9).map(f64::from).collect()).unwrap();
        let k = Tensor::filled(&[2, 2], 1.0);
        let y = conv2d_valid(&x, &k).unwrap();
        assert_eq!(y.shape(), &[2, 2]);
        assert_eq!(y.data(), &[12.0, 16.0, 24.0, 28.0]);
        let id = Tensor::filled(&[1, 1], 1.0);
        assert_eq!(conv2d_valid(&x, &id).unwrap(), x);
    }

    #[test]
    fn conv_kernel_too_large() {
        let x = Tensor::zeros(&[2, 2]);
        let k = Tensor::zeros(&[3, 3]);
        assert!(matches!(conv2d_valid(&x, &k), Err(Error::Dimension(_))));
    }

    #[test]
    fn new_rejects_bad_length() {
        assert!(Tensor::new(vec![2, 2], vec![1.0]).is_err());
    }
}
