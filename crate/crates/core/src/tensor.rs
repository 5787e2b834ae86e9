//! Dense row-major 2-D tensors with paired gradient storage.
//!
//! `Tensor2` is the unit of all network math in this crate. Every tensor
//! carries a gradient buffer of the same shape so layers and the optimizer
//! can accumulate into it without a separate bookkeeping structure.

use rayon::prelude::*;

/// Below this many multiply-accumulates a matrix product stays sequential;
/// rayon task overhead dominates for tiny shapes.
const PAR_MAC_THRESHOLD: usize = 1 << 16;

/// Dense 2-D real tensor (row-major) with a same-shape gradient buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor2 {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
    grad: Vec<f64>,
}

impl Tensor2 {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
            grad: vec![0.0; rows * cols],
        }
    }

    /// Builds a tensor from row-major data. Panics if `data` has the wrong length.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(
            data.len(),
            rows * cols,
            "tensor data length {} does not match shape {}x{}",
            data.len(),
            rows,
            cols
        );
        let grad = vec![0.0; data.len()];
        Self {
            rows,
            cols,
            data,
            grad,
        }
    }

    /// Convenience constructor for tests and small literals.
    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let n = rows.len();
        let m = if n == 0 { 0 } else { rows[0].len() };
        let mut data = Vec::with_capacity(n * m);
        for r in rows {
            assert_eq!(r.len(), m, "ragged rows");
            data.extend_from_slice(r);
        }
        Self::from_vec(n, m, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn grad(&self) -> &[f64] {
        &self.grad
    }

    pub fn grad_mut(&mut self) -> &mut [f64] {
        &mut self.grad
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Elementwise map into a new tensor (gradient buffer zeroed).
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor2 {
        Tensor2::from_vec(self.rows, self.cols, self.data.iter().map(|&v| f(v)).collect())
    }

    /// Elementwise sum with another tensor of the same shape.
    pub fn add(&self, other: &Tensor2) -> Tensor2 {
        assert_eq!(self.shape(), other.shape(), "add shape mismatch");
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + b)
            .collect();
        Tensor2::from_vec(self.rows, self.cols, data)
    }

    /// Elementwise product with another tensor of the same shape.
    pub fn mul(&self, other: &Tensor2) -> Tensor2 {
        assert_eq!(self.shape(), other.shape(), "mul shape mismatch");
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a * b)
            .collect();
        Tensor2::from_vec(self.rows, self.cols, data)
    }
}

/// C = A · Bᵀ for A: [n, k], B: [m, k] → C: [n, m].
///
/// This is the forward-pass product (`x · Wᵀ`) and the shape used for most
/// backward products as well. Rows of C are independent, so the row loop may
/// run in parallel without affecting the result bitwise.
pub fn matmul_nt(a: &Tensor2, b: &Tensor2) -> Tensor2 {
    assert_eq!(a.cols, b.cols, "matmul_nt inner dims: {:?} vs {:?}", a.shape(), b.shape());
    let (n, k, m) = (a.rows, a.cols, b.rows);
    let mut out = vec![0.0; n * m];
    let work = |(i, out_row): (usize, &mut [f64])| {
        let ar = a.row(i);
        for (j, o) in out_row.iter_mut().enumerate() {
            let br = b.row(j);
            let mut acc = 0.0;
            for (x, y) in ar.iter().zip(br) {
                acc += x * y;
            }
            *o = acc;
        }
    };
    if n * m * k >= PAR_MAC_THRESHOLD {
        out.par_chunks_mut(m).enumerate().for_each(work);
    } else {
        out.chunks_mut(m).enumerate().for_each(work);
    }
    Tensor2::from_vec(n, m, out)
}

/// C = A · B for A: [n, k], B: [k, m] → C: [n, m].
pub fn matmul_nn(a: &Tensor2, b: &Tensor2) -> Tensor2 {
    assert_eq!(a.cols, b.rows, "matmul_nn inner dims: {:?} vs {:?}", a.shape(), b.shape());
    let (n, k, m) = (a.rows, a.cols, b.cols);
    let mut out = vec![0.0; n * m];
    let work = |(i, out_row): (usize, &mut [f64])| {
        let ar = a.row(i);
        for (kk, &av) in ar.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let br = b.row(kk);
            for (o, &bv) in out_row.iter_mut().zip(br) {
                *o += av * bv;
            }
        }
    };
    if n * m * k >= PAR_MAC_THRESHOLD {
        out.par_chunks_mut(m).enumerate().for_each(work);
    } else {
        out.chunks_mut(m).enumerate().for_each(work);
    }
    Tensor2::from_vec(n, m, out)
}

/// C = Aᵀ · B for A: [n, k], B: [n, m] → C: [k, m], summing over rows.
///
/// This is the weight-gradient product (`gᵀ · x`). The output row index is
/// the column index of A, so parallel chunks still own disjoint output.
pub fn matmul_tn(a: &Tensor2, b: &Tensor2) -> Tensor2 {
    assert_eq!(a.rows, b.rows, "matmul_tn outer dims: {:?} vs {:?}", a.shape(), b.shape());
    let (n, k, m) = (a.rows, a.cols, b.cols);
    let mut out = vec![0.0; k * m];
    let work = |(kk, out_row): (usize, &mut [f64])| {
        for i in 0..n {
            let av = a.get(i, kk);
            if av == 0.0 {
                continue;
            }
            let br = b.row(i);
            for (o, &bv) in out_row.iter_mut().zip(br) {
                *o += av * bv;
            }
        }
    };
    if n * m * k >= PAR_MAC_THRESHOLD {
        out.par_chunks_mut(m).enumerate().for_each(work);
    } else {
        out.chunks_mut(m).enumerate().for_each(work);
    }
    Tensor2::from_vec(k, m, out)
}
