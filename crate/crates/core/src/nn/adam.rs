//! Adam with bias correction, keyed off the model's visitor names so the
//! optimizer state survives checkpointing and never depends on map order.

use std::collections::HashMap;

use super::{NnError, TensorVisit};

#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One parameter's checkpoint entry: name, first moment, second moment.
pub type MomentEntry = (String, Vec<f64>, Vec<f64>);

#[derive(Debug, Clone)]
pub struct Adam {
    cfg: AdamConfig,
    step: u64,
    /// Per-parameter first and second moment vectors.
    moments: HashMap<String, (Vec<f64>, Vec<f64>)>,
}

impl Adam {
    pub fn new(cfg: AdamConfig) -> Self {
        Self {
            cfg,
            step: 0,
            moments: HashMap::new(),
        }
    }

    pub fn config(&self) -> AdamConfig {
        self.cfg
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Applies one update from the gradients currently accumulated in the
    /// model's parameter tensors. Validates every gradient before touching
    /// any parameter, so a non-finite gradient leaves the model unchanged.
    pub fn step<M: TensorVisit>(&mut self, model: &mut M) -> Result<(), NnError> {
        let mut bad: Option<String> = None;
        model.visit_params("", &mut |name, t| {
            if bad.is_none() && t.grad().iter().any(|v| !v.is_finite()) {
                bad = Some(name);
            }
        });
        if let Some(name) = bad {
            return Err(NnError::NonFiniteGrad(name));
        }

        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.cfg.beta1.powi(t);
        let bc2 = 1.0 - self.cfg.beta2.powi(t);
        let cfg = self.cfg;
        let moments = &mut self.moments;
        model.visit_params("", &mut |name, tensor| {
            let (m, v) = moments
                .entry(name)
                .or_insert_with(|| (vec![0.0; tensor.len()], vec![0.0; tensor.len()]));
            assert_eq!(m.len(), tensor.len(), "parameter size changed mid-run");
            let grads = tensor.grad().to_vec();
            for ((p, &g), (mi, vi)) in tensor
                .data_mut()
                .iter_mut()
                .zip(&grads)
                .zip(m.iter_mut().zip(v.iter_mut()))
            {
                *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * g;
                *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * g * g;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                *p -= cfg.lr * mhat / (vhat.sqrt() + cfg.eps);
            }
        });
        Ok(())
    }

    /// Snapshot for checkpointing: step counter plus per-parameter moment
    /// vectors, sorted by name.
    pub fn snapshot(&self) -> (u64, Vec<MomentEntry>) {
        let mut entries: Vec<_> = self
            .moments
            .iter()
            .map(|(k, (m, v))| (k.clone(), m.clone(), v.clone()))
            .collect();
        entries.sort_by(|a, b| a.0.cmp(&b.0));
        (self.step, entries)
    }

    pub fn restore(&mut self, step: u64, entries: Vec<MomentEntry>) {
        self.step = step;
        self.moments = entries
            .into_iter()
            .map(|(k, m, v)| (k, (m, v)))
            .collect();
    }
}
