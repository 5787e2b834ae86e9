//! Multiplicative gate: compress to d/k, expand back, sigmoid, multiply onto
//! the input. The gate lies in (0,1), so the layer only attenuates.

use rand::Rng;

use super::{relu_backward, relu_forward, sigmoid, LinearLayer, Mode, NnError};
use crate::tensor::Tensor2;

#[derive(Debug, Clone)]
pub struct GatedActivationLayer {
    lin_down: LinearLayer,
    lin_up: LinearLayer,
    /// Optional ReLU between the two gate linears. Off by default: the gate
    /// path is linear-linear-sigmoid.
    mid_relu: bool,
    cache: Option<Cache>,
}

#[derive(Debug, Clone)]
struct Cache {
    x: Tensor2,
    /// lin_up input: lin_down output, after the optional mid ReLU.
    mid: Tensor2,
    gate: Tensor2,
}

impl GatedActivationLayer {
    pub fn new(d: usize, k: usize, mid_relu: bool, init_rng: &mut impl Rng) -> Result<Self, NnError> {
        if k == 0 || !d.is_multiple_of(k) {
            return Err(NnError::BadGateDivisor { d, k });
        }
        Ok(Self {
            lin_down: LinearLayer::xavier(d, d / k, init_rng),
            lin_up: LinearLayer::xavier(d / k, d, init_rng),
            mid_relu,
            cache: None,
        })
    }

    pub fn dim(&self) -> usize {
        self.lin_down.input_dim()
    }

    pub fn lin_down_mut(&mut self) -> &mut LinearLayer {
        &mut self.lin_down
    }

    pub fn lin_up_mut(&mut self) -> &mut LinearLayer {
        &mut self.lin_up
    }

    pub fn param_count(&self) -> usize {
        self.lin_down.param_count() + self.lin_up.param_count()
    }

    pub fn forward(&mut self, x: &Tensor2, mode: Mode) -> Result<Tensor2, NnError> {
        let down = self.lin_down.forward(x)?;
        let mid = if self.mid_relu { relu_forward(&down) } else { down };
        let gate = self.lin_up.forward(&mid)?.map(sigmoid);
        let out = x.mul(&gate);
        self.cache = match mode {
            Mode::Train => Some(Cache {
                x: x.clone(),
                mid,
                gate,
            }),
            Mode::Inference => None,
        };
        Ok(out)
    }

    /// dL/dx = g ⊙ gate  +  gate-path pullback of g ⊙ x ⊙ gate ⊙ (1−gate).
    pub fn backward(&mut self, g: &Tensor2) -> Result<Tensor2, NnError> {
        let cache = self.cache.as_ref().ok_or(NnError::MissingCache)?;
        if g.shape() != cache.x.shape() {
            return Err(NnError::Shape {
                op: "gated backward",
                left: g.shape(),
                right: cache.x.shape(),
            });
        }
        let dx_direct = g.mul(&cache.gate);
        let dup_data: Vec<f64> = g
            .data()
            .iter()
            .zip(cache.x.data())
            .zip(cache.gate.data())
            .map(|((&gv, &xv), &s)| gv * xv * s * (1.0 - s))
            .collect();
        let dup = Tensor2::from_vec(g.rows(), g.cols(), dup_data);
        let dmid = self.lin_up.backward(&cache.mid, &dup)?;
        let ddown = if self.mid_relu {
            // mid is the ReLU output: positive exactly where the input was.
            relu_backward(&cache.mid, &dmid)
        } else {
            dmid
        };
        let dx_gate = self.lin_down.backward(&cache.x, &ddown)?;
        Ok(dx_direct.add(&dx_gate))
    }
}

impl super::TensorVisit for GatedActivationLayer {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor2)) {
        self.lin_down.visit_params(&super::qualify(prefix, "down"), f);
        self.lin_up.visit_params(&super::qualify(prefix, "up"), f);
    }
}
