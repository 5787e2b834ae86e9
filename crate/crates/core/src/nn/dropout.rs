//! Inverted dropout: train-time masking with 1/(1-p) rescaling so inference
//! is the identity.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Mode, NnError};
use crate::tensor::Tensor2;

#[derive(Debug, Clone)]
pub struct DropoutLayer {
    p: f64,
    scale: f64,
    rng: ChaCha8Rng,
    /// Entries are 0.0 (dropped) or `scale` (kept); doubles as the backward
    /// multiplier.
    mask: Option<Vec<f64>>,
    frozen: bool,
}

impl DropoutLayer {
    pub fn new(p: f64, seed: u64) -> Result<Self, NnError> {
        if !(0.0..1.0).contains(&p) {
            return Err(NnError::BadDropoutRate(p));
        }
        Ok(Self {
            p,
            scale: 1.0 / (1.0 - p),
            rng: ChaCha8Rng::seed_from_u64(seed),
            mask: None,
            frozen: false,
        })
    }

    pub fn rate(&self) -> f64 {
        self.p
    }

    /// While frozen, train-mode forwards reuse the last sampled mask instead
    /// of drawing a new one. Finite-difference probes need this: the loss
    /// must be a fixed function of the input across probe evaluations.
    pub fn freeze(&mut self, frozen: bool) {
        self.frozen = frozen;
    }

    pub fn forward(&mut self, x: &Tensor2, mode: Mode) -> Tensor2 {
        if mode == Mode::Inference {
            return x.clone();
        }
        let need_fresh = !self.frozen
            || self.mask.as_ref().map(Vec::len) != Some(x.len());
        if need_fresh {
            let mask = (0..x.len())
                .map(|_| {
                    if self.rng.random::<f64>() < self.p {
                        0.0
                    } else {
                        self.scale
                    }
                })
                .collect();
            self.mask = Some(mask);
        }
        let mask = self.mask.as_ref().unwrap();
        let data = x.data().iter().zip(mask).map(|(&v, &m)| v * m).collect();
        Tensor2::from_vec(x.rows(), x.cols(), data)
    }

    pub fn backward(&self, g: &Tensor2) -> Result<Tensor2, NnError> {
        let mask = self.mask.as_ref().ok_or(NnError::MissingCache)?;
        if mask.len() != g.len() {
            return Err(NnError::MissingCache);
        }
        let data = g.data().iter().zip(mask).map(|(&v, &m)| v * m).collect();
        Ok(Tensor2::from_vec(g.rows(), g.cols(), data))
    }
}

#[cfg(test)]
mod tests {
    use super::super::testutil::projection;
    use super::*;

    #[test]
    fn rates_outside_unit_interval_are_rejected() {
        assert!(matches!(
            DropoutLayer::new(1.0, 0).unwrap_err(),
            NnError::BadDropoutRate(_)
        ));
        assert!(DropoutLayer::new(-0.1, 0).is_err());
        assert!(DropoutLayer::new(0.0, 0).is_ok());
    }

    #[test]
    fn inference_is_the_identity_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut drop = DropoutLayer::new(0.5, 1).unwrap();
        let x = projection(7, 3, &mut rng);
        assert_eq!(drop.forward(&x, Mode::Inference), x);
    }

    #[test]
    fn zero_rate_train_is_the_identity_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut drop = DropoutLayer::new(0.0, 1).unwrap();
        let x = projection(4, 4, &mut rng);
        assert_eq!(drop.forward(&x, Mode::Train), x);
    }

    #[test]
    fn survivor_fraction_and_mean_track_the_rate() {
        let (n, d, p) = (1000, 1000, 0.15);
        let mut drop = DropoutLayer::new(p, 99).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let data: Vec<f64> = (0..n * d).map(|_| rng.random_range(0.5..1.5)).collect();
        let x = Tensor2::from_vec(n, d, data);
        let y = drop.forward(&x, Mode::Train);

        let survivors = y.data().iter().filter(|&&v| v != 0.0).count();
        let frac = survivors as f64 / (n * d) as f64;
        assert!((frac - 0.85).abs() < 0.003, "survivor fraction {frac}");

        let mean_in: f64 = x.data().iter().sum::<f64>() / x.len() as f64;
        let mean_out: f64 = y.data().iter().sum::<f64>() / y.len() as f64;
        assert!(
            (mean_out - mean_in).abs() / mean_in.abs() < 0.01,
            "means {mean_in} vs {mean_out}"
        );
    }

    #[test]
    fn backward_applies_the_forward_mask() {
        let mut drop = DropoutLayer::new(0.5, 7).unwrap();
        let x = Tensor2::from_vec(1, 64, vec![1.0; 64]);
        let y = drop.forward(&x, Mode::Train);
        let g = Tensor2::from_vec(1, 64, vec![1.0; 64]);
        let dx = drop.backward(&g).unwrap();
        // Gradient flows exactly through the kept cells, with the same scale.
        assert_eq!(dx, y);
    }

    #[test]
    fn frozen_mask_is_reused_across_forwards() {
        let mut drop = DropoutLayer::new(0.5, 3).unwrap();
        let x = Tensor2::from_vec(2, 32, vec![1.0; 64]);
        drop.freeze(true);
        let a = drop.forward(&x, Mode::Train);
        let b = drop.forward(&x, Mode::Train);
        assert_eq!(a, b);
        drop.freeze(false);
        let c = drop.forward(&x, Mode::Train);
        assert_ne!(a, c, "unfrozen forward should draw a fresh mask");
    }

    #[test]
    fn backward_without_a_mask_is_an_error() {
        let drop = DropoutLayer::new(0.5, 3).unwrap();
        let g = Tensor2::zeros(2, 2);
        assert!(matches!(drop.backward(&g), Err(NnError::MissingCache)));
    }
}
