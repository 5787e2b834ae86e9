//! Affine layer y = xWᵀ + b with accumulating parameter gradients.

use rand::Rng;

use super::{qualify, NnError, TensorVisit};
use crate::tensor::{matmul_nn, matmul_nt, matmul_tn, Tensor2};

/// W is stored [output, input] so a forward pass is one `matmul_nt`.
#[derive(Debug, Clone)]
pub struct LinearLayer {
    w: Tensor2,
    b: Tensor2,
}

impl LinearLayer {
    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            w: Tensor2::zeros(output, input),
            b: Tensor2::zeros(1, output),
        }
    }

    /// Kaiming-uniform fan-in init: bound = sqrt(6 / input). For layers
    /// whose output feeds a ReLU.
    pub fn kaiming(input: usize, output: usize, rng: &mut impl Rng) -> Self {
        let bound = (6.0 / input as f64).sqrt();
        Self::uniform(input, output, bound, rng)
    }

    /// Xavier-uniform init: bound = sqrt(6 / (input + output)). For gate and
    /// output layers.
    pub fn xavier(input: usize, output: usize, rng: &mut impl Rng) -> Self {
        let bound = (6.0 / (input + output) as f64).sqrt();
        Self::uniform(input, output, bound, rng)
    }

    fn uniform(input: usize, output: usize, bound: f64, rng: &mut impl Rng) -> Self {
        let data = (0..output * input)
            .map(|_| rng.random_range(-bound..=bound))
            .collect();
        Self {
            w: Tensor2::from_vec(output, input, data),
            b: Tensor2::zeros(1, output),
        }
    }

    pub fn from_parts(w: Tensor2, b: Tensor2) -> Self {
        assert_eq!(b.shape(), (1, w.rows()), "bias must be [1, output]");
        Self { w, b }
    }

    pub fn input_dim(&self) -> usize {
        self.w.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.w.rows()
    }

    pub fn param_count(&self) -> usize {
        self.w.len() + self.b.len()
    }

    pub fn w(&self) -> &Tensor2 {
        &self.w
    }

    pub fn b(&self) -> &Tensor2 {
        &self.b
    }

    pub fn w_mut(&mut self) -> &mut Tensor2 {
        &mut self.w
    }

    pub fn b_mut(&mut self) -> &mut Tensor2 {
        &mut self.b
    }

    pub fn forward(&self, x: &Tensor2) -> Result<Tensor2, NnError> {
        if x.cols() != self.input_dim() {
            return Err(NnError::Shape {
                op: "linear forward",
                left: x.shape(),
                right: self.w.shape(),
            });
        }
        let mut y = matmul_nt(x, &self.w);
        let b = self.b.row(0);
        for i in 0..y.rows() {
            for (v, bv) in y.row_mut(i).iter_mut().zip(b) {
                *v += bv;
            }
        }
        Ok(y)
    }

    /// Accumulates gradW += gᵀx and gradb += column-sum(g); returns gW.
    /// `x` must be the forward input that produced `g`'s activation.
    pub fn backward(&mut self, x: &Tensor2, g: &Tensor2) -> Result<Tensor2, NnError> {
        if x.cols() != self.input_dim() || g.cols() != self.output_dim() || x.rows() != g.rows() {
            return Err(NnError::Shape {
                op: "linear backward",
                left: x.shape(),
                right: g.shape(),
            });
        }
        let dw = matmul_tn(g, x);
        for (acc, d) in self.w.grad_mut().iter_mut().zip(dw.data()) {
            *acc += d;
        }
        let db = self.b.grad_mut();
        for i in 0..g.rows() {
            for (acc, gv) in db.iter_mut().zip(g.row(i)) {
                *acc += gv;
            }
        }
        Ok(matmul_nn(g, &self.w))
    }
}

impl TensorVisit for LinearLayer {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor2)) {
        f(qualify(prefix, "w"), &mut self.w);
        f(qualify(prefix, "b"), &mut self.b);
    }
}
