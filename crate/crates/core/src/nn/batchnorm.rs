//! Batch normalization with batch-coupled backward.
//!
//! Train mode normalizes by the batch's own biased statistics (divisor n)
//! and folds the same biased variance into the running estimate; inference
//! reads running statistics only, so it is a pure function of the input and
//! never depends on batch composition.

use super::{qualify, Mode, NnError, TensorVisit};
use crate::tensor::Tensor2;

pub const DEFAULT_EPS: f64 = 1e-5;
pub const DEFAULT_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone)]
pub struct BatchNormLayer {
    gamma: Tensor2,
    beta: Tensor2,
    running_mean: Tensor2,
    running_var: Tensor2,
    eps: f64,
    momentum: f64,
    cache: Option<Cache>,
}

/// What backward needs from the last train-mode forward.
#[derive(Debug, Clone)]
struct Cache {
    xhat: Tensor2,
    inv_std: Vec<f64>,
}

impl BatchNormLayer {
    pub fn new(dim: usize) -> Self {
        Self::with_config(dim, DEFAULT_EPS, DEFAULT_MOMENTUM)
    }

    pub fn with_config(dim: usize, eps: f64, momentum: f64) -> Self {
        Self {
            gamma: Tensor2::from_vec(1, dim, vec![1.0; dim]),
            beta: Tensor2::zeros(1, dim),
            running_mean: Tensor2::zeros(1, dim),
            running_var: Tensor2::from_vec(1, dim, vec![1.0; dim]),
            eps,
            momentum,
            cache: None,
        }
    }

    pub fn dim(&self) -> usize {
        self.gamma.cols()
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn gamma_mut(&mut self) -> &mut Tensor2 {
        &mut self.gamma
    }

    pub fn beta_mut(&mut self) -> &mut Tensor2 {
        &mut self.beta
    }

    pub fn running_mean(&self) -> &[f64] {
        self.running_mean.data()
    }

    pub fn running_var(&self) -> &[f64] {
        self.running_var.data()
    }

    pub fn forward(&mut self, x: &Tensor2, mode: Mode) -> Result<Tensor2, NnError> {
        let (n, d) = x.shape();
        if d != self.dim() {
            return Err(NnError::Shape {
                op: "batch norm forward",
                left: x.shape(),
                right: self.gamma.shape(),
            });
        }
        match mode {
            Mode::Train => {
                if n < 2 {
                    return Err(NnError::SmallBatch(n));
                }
                let mut mean = vec![0.0; d];
                for i in 0..n {
                    for (m, v) in mean.iter_mut().zip(x.row(i)) {
                        *m += v;
                    }
                }
                for m in &mut mean {
                    *m /= n as f64;
                }
                let mut var = vec![0.0; d];
                for i in 0..n {
                    for ((s, v), m) in var.iter_mut().zip(x.row(i)).zip(&mean) {
                        let c = v - m;
                        *s += c * c;
                    }
                }
                for s in &mut var {
                    *s /= n as f64;
                }
                let inv_std: Vec<f64> =
                    var.iter().map(|&v| 1.0 / (v + self.eps).sqrt()).collect();

                let mut xhat = Tensor2::zeros(n, d);
                let mut out = Tensor2::zeros(n, d);
                for i in 0..n {
                    for j in 0..d {
                        let h = (x.get(i, j) - mean[j]) * inv_std[j];
                        xhat.set(i, j, h);
                        out.set(i, j, self.gamma.get(0, j) * h + self.beta.get(0, j));
                    }
                }
                for j in 0..d {
                    let rm = self.running_mean.get(0, j);
                    let rv = self.running_var.get(0, j);
                    self.running_mean
                        .set(0, j, (1.0 - self.momentum) * rm + self.momentum * mean[j]);
                    self.running_var
                        .set(0, j, (1.0 - self.momentum) * rv + self.momentum * var[j]);
                }
                self.cache = Some(Cache { xhat, inv_std });
                Ok(out)
            }
            Mode::Inference => {
                // Inference never has a batch-coupled gradient, so drop any
                // stale train cache rather than let a later backward use it.
                self.cache = None;
                let mut out = Tensor2::zeros(n, d);
                for i in 0..n {
                    for j in 0..d {
                        let h = (x.get(i, j) - self.running_mean.get(0, j))
                            / (self.running_var.get(0, j) + self.eps).sqrt();
                        out.set(i, j, self.gamma.get(0, j) * h + self.beta.get(0, j));
                    }
                }
                Ok(out)
            }
        }
    }

    /// Full gradient including the paths through the batch mean and variance:
    /// dx_j = inv_std/n * (n*dxhat - sum(dxhat) - xhat * sum(dxhat*xhat)),
    /// per column, with dxhat = g * gamma.
    pub fn backward(&mut self, g: &Tensor2) -> Result<Tensor2, NnError> {
        let cache = self.cache.as_ref().ok_or(NnError::MissingCache)?;
        let (n, d) = cache.xhat.shape();
        if g.shape() != (n, d) {
            return Err(NnError::Shape {
                op: "batch norm backward",
                left: g.shape(),
                right: (n, d),
            });
        }
        let dgamma = self.gamma.grad_mut();
        for i in 0..n {
            for (j, (&gv, &h)) in g.row(i).iter().zip(cache.xhat.row(i)).enumerate() {
                dgamma[j] += gv * h;
            }
        }
        let dbeta = self.beta.grad_mut();
        for i in 0..n {
            for (acc, &gv) in dbeta.iter_mut().zip(g.row(i)) {
                *acc += gv;
            }
        }

        let mut sum_dxhat = vec![0.0; d];
        let mut sum_dxhat_xhat = vec![0.0; d];
        for i in 0..n {
            for j in 0..d {
                let dxhat = g.get(i, j) * self.gamma.get(0, j);
                sum_dxhat[j] += dxhat;
                sum_dxhat_xhat[j] += dxhat * cache.xhat.get(i, j);
            }
        }
        let mut dx = Tensor2::zeros(n, d);
        let nf = n as f64;
        for i in 0..n {
            for j in 0..d {
                let dxhat = g.get(i, j) * self.gamma.get(0, j);
                let v = cache.inv_std[j] / nf
                    * (nf * dxhat - sum_dxhat[j] - cache.xhat.get(i, j) * sum_dxhat_xhat[j]);
                dx.set(i, j, v);
            }
        }
        Ok(dx)
    }
}

impl TensorVisit for BatchNormLayer {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor2)) {
        f(qualify(prefix, "gamma"), &mut self.gamma);
        f(qualify(prefix, "beta"), &mut self.beta);
    }

    fn visit_state(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor2)) {
        f(qualify(prefix, "running_mean"), &mut self.running_mean);
        f(qualify(prefix, "running_var"), &mut self.running_var);
    }
}

#[cfg(test)]
mod tests {
    use super::super::testutil::{central_diff, max_rel_err, projection, weighted_sum};
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn column(vals: &[f64]) -> Tensor2 {
        Tensor2::from_vec(vals.len(), 1, vals.to_vec())
    }

    #[test]
    fn normalizes_column_to_zero_mean_unit_variance() {
        // [1,2,3] with eps = 0: mean 2, biased var 2/3, xhat = [-sqrt(1.5), 0, sqrt(1.5)].
        let mut bn = BatchNormLayer::with_config(1, 0.0, 0.1);
        let y = bn.forward(&column(&[1.0, 2.0, 3.0]), Mode::Train).unwrap();
        let s = 1.5f64.sqrt();
        for (got, want) in y.data().iter().zip([-s, 0.0, s]) {
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
    }

    #[test]
    fn gamma_beta_shift_and_scale_the_standardized_column() {
        let mut bn = BatchNormLayer::with_config(1, 0.0, 0.1);
        bn.gamma_mut().data_mut()[0] = 3.0;
        bn.beta_mut().data_mut()[0] = 1.0;
        let y = bn.forward(&column(&[1.0, 2.0, 3.0]), Mode::Train).unwrap();
        let mean = y.data().iter().sum::<f64>() / 3.0;
        let var = y.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 3.0;
        assert!((mean - 1.0).abs() < 1e-12);
        assert!((var.sqrt() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn train_batches_need_two_rows() {
        let mut bn = BatchNormLayer::new(4);
        let err = bn.forward(&Tensor2::zeros(1, 4), Mode::Train).unwrap_err();
        assert!(matches!(err, NnError::SmallBatch(1)));
    }

    #[test]
    fn running_stats_blend_old_and_batch() {
        let mut bn = BatchNormLayer::with_config(1, 0.0, 0.1);
        bn.forward(&column(&[1.0, 2.0, 3.0]), Mode::Train).unwrap();
        // mean: 0.9*0 + 0.1*2 = 0.2; var: 0.9*1 + 0.1*(2/3).
        assert!((bn.running_mean()[0] - 0.2).abs() < 1e-15);
        assert!((bn.running_var()[0] - (0.9 + 0.1 * (2.0 / 3.0))).abs() < 1e-15);
    }

    #[test]
    fn inference_depends_only_on_running_stats() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut bn = BatchNormLayer::new(3);
        bn.forward(&projection(16, 3, &mut rng), Mode::Train).unwrap();

        let single = projection(1, 3, &mut rng);
        let alone = bn.forward(&single, Mode::Inference).unwrap();
        // Same row inside a larger batch must map to the same values bitwise.
        let mut padded = Tensor2::zeros(4, 3);
        padded.row_mut(0).copy_from_slice(single.row(0));
        let batched = bn.forward(&padded, Mode::Inference).unwrap();
        assert_eq!(alone.row(0), batched.row(0));
        // And repeated calls agree bitwise: inference is pure.
        let again = bn.forward(&single, Mode::Inference).unwrap();
        assert_eq!(alone, again);
    }

    #[test]
    fn inference_forward_clears_the_train_cache() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut bn = BatchNormLayer::new(2);
        let x = projection(5, 2, &mut rng);
        bn.forward(&x, Mode::Train).unwrap();
        bn.forward(&x, Mode::Inference).unwrap();
        let err = bn.backward(&Tensor2::zeros(5, 2)).unwrap_err();
        assert!(matches!(err, NnError::MissingCache));
    }

    #[test]
    fn backward_matches_finite_differences_through_batch_statistics() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let (n, d) = (6, 3);
        let x = projection(n, d, &mut rng);
        let c = projection(n, d, &mut rng);

        let mut bn = BatchNormLayer::new(d);
        // Non-trivial affine so the gamma path is exercised in dx.
        for j in 0..d {
            bn.gamma_mut().data_mut()[j] = 0.5 + j as f64;
            bn.beta_mut().data_mut()[j] = -0.25 * j as f64;
        }
        bn.forward(&x, Mode::Train).unwrap();
        let dx = bn.backward(&c).unwrap();

        let mut probe = bn.clone();
        let numeric = central_diff(
            |xs| {
                let xt = Tensor2::from_vec(n, d, xs.to_vec());
                weighted_sum(&probe.forward(&xt, Mode::Train).unwrap(), &c)
            },
            x.data(),
            1e-5,
        );
        assert!(max_rel_err(dx.data(), &numeric) < 1e-5);
    }

    #[test]
    fn parameter_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let (n, d) = (5, 2);
        let x = projection(n, d, &mut rng);
        let c = projection(n, d, &mut rng);

        let mut bn = BatchNormLayer::new(d);
        bn.forward(&x, Mode::Train).unwrap();
        bn.backward(&c).unwrap();

        let g0 = bn.gamma_mut().data().to_vec();
        let mut probe = bn.clone();
        let numeric_gamma = central_diff(
            |gs| {
                probe.gamma_mut().data_mut().copy_from_slice(gs);
                weighted_sum(&probe.forward(&x, Mode::Train).unwrap(), &c)
            },
            &g0,
            1e-5,
        );
        assert!(max_rel_err(bn.gamma_mut().grad(), &numeric_gamma) < 1e-5);

        let b0 = bn.beta_mut().data().to_vec();
        let mut probe = bn.clone();
        let numeric_beta = central_diff(
            |bs| {
                probe.beta_mut().data_mut().copy_from_slice(bs);
                weighted_sum(&probe.forward(&x, Mode::Train).unwrap(), &c)
            },
            &b0,
            1e-5,
        );
        assert!(max_rel_err(bn.beta_mut().grad(), &numeric_beta) < 1e-5);
    }
}
