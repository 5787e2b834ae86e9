//! Residual feedforward block: X + lin2(dropout(relu(lin1(bn(X))))).
//!
//! Normalization sits at the start of the branch, pre-activation style, and
//! the shortcut is the identity whenever input and output widths agree. A
//! projection shortcut exists for unequal widths but none of the stock
//! architectures use it.

use rand::Rng;

use super::{relu_backward, relu_forward, BatchNormLayer, DropoutLayer, LinearLayer, Mode, NnError};
use crate::tensor::Tensor2;

#[derive(Debug, Clone)]
pub struct FeedForwardBlock {
    bn: BatchNormLayer,
    lin1: LinearLayer,
    drop: DropoutLayer,
    lin2: LinearLayer,
    proj: Option<LinearLayer>,
    cache: Option<Cache>,
}

/// Activations the backward pass replays, captured in train mode only.
#[derive(Debug, Clone)]
struct Cache {
    /// Input, kept only when the shortcut is a projection.
    x: Option<Tensor2>,
    bn_out: Tensor2,
    /// Post-ReLU branch activations, pre-dropout. Also the tensor a
    /// feature-level loss taps into.
    hidden: Tensor2,
    dropped: Tensor2,
}

impl FeedForwardBlock {
    /// Standard block: width d in and out, hidden expansion m·d, identity
    /// shortcut.
    pub fn new(
        d: usize,
        m: usize,
        dropout_p: f64,
        init_rng: &mut impl Rng,
        dropout_seed: u64,
    ) -> Result<Self, NnError> {
        Self::with_output_dim(d, m, d, dropout_p, init_rng, dropout_seed)
    }

    pub fn with_output_dim(
        d: usize,
        m: usize,
        out: usize,
        dropout_p: f64,
        init_rng: &mut impl Rng,
        dropout_seed: u64,
    ) -> Result<Self, NnError> {
        let lin1 = LinearLayer::kaiming(d, m * d, init_rng);
        let lin2 = LinearLayer::xavier(m * d, out, init_rng);
        let proj = (out != d).then(|| LinearLayer::xavier(d, out, init_rng));
        Ok(Self {
            bn: BatchNormLayer::new(d),
            lin1,
            drop: DropoutLayer::new(dropout_p, dropout_seed)?,
            lin2,
            proj,
            cache: None,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.lin1.input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.lin2.output_dim()
    }

    pub fn hidden_dim(&self) -> usize {
        self.lin1.output_dim()
    }

    pub fn bn_mut(&mut self) -> &mut BatchNormLayer {
        &mut self.bn
    }

    pub fn lin1_mut(&mut self) -> &mut LinearLayer {
        &mut self.lin1
    }

    pub fn lin2_mut(&mut self) -> &mut LinearLayer {
        &mut self.lin2
    }

    pub fn drop_mut(&mut self) -> &mut DropoutLayer {
        &mut self.drop
    }

    pub fn forward(&mut self, x: &Tensor2, mode: Mode) -> Result<Tensor2, NnError> {
        Ok(self.forward_with_hidden(x, mode)?.0)
    }

    /// Also returns the post-ReLU hidden activations (the branch tensor a
    /// feature-level loss consumes).
    pub fn forward_with_hidden(
        &mut self,
        x: &Tensor2,
        mode: Mode,
    ) -> Result<(Tensor2, Tensor2), NnError> {
        let bn_out = self.bn.forward(x, mode)?;
        let pre = self.lin1.forward(&bn_out)?;
        let hidden = relu_forward(&pre);
        let dropped = self.drop.forward(&hidden, mode);
        let f = self.lin2.forward(&dropped)?;
        let shortcut = match &self.proj {
            Some(p) => p.forward(x)?,
            None => x.clone(),
        };
        let out = shortcut.add(&f);
        match mode {
            Mode::Train => {
                self.cache = Some(Cache {
                    x: self.proj.is_some().then(|| x.clone()),
                    bn_out,
                    hidden: hidden.clone(),
                    dropped,
                });
            }
            Mode::Inference => self.cache = None,
        }
        Ok((out, hidden))
    }

    pub fn backward(&mut self, g: &Tensor2) -> Result<Tensor2, NnError> {
        self.backward_with_tap(g, None)
    }

    /// `tap`, when present, is an extra gradient w.r.t. the post-ReLU hidden
    /// activations (shape [n, m·d]), added where that tensor branches off to
    /// a feature-level loss.
    pub fn backward_with_tap(
        &mut self,
        g: &Tensor2,
        tap: Option<&Tensor2>,
    ) -> Result<Tensor2, NnError> {
        let cache = self.cache.as_ref().ok_or(NnError::MissingCache)?;
        let g_dropped = self.lin2.backward(&cache.dropped, g)?;
        let mut g_hidden = self.drop.backward(&g_dropped)?;
        if let Some(t) = tap {
            g_hidden = g_hidden.add(t);
        }
        let g_pre = relu_backward(&cache.hidden, &g_hidden);
        let g_bn = self.lin1.backward(&cache.bn_out, &g_pre)?;
        let g_branch = self.bn.backward(&g_bn)?;
        let g_shortcut = match &mut self.proj {
            Some(p) => p.backward(cache.x.as_ref().expect("projection input cached"), g)?,
            None => g.clone(),
        };
        Ok(g_branch.add(&g_shortcut))
    }

    pub fn param_count(&self) -> usize {
        2 * self.bn.dim()
            + self.lin1.param_count()
            + self.lin2.param_count()
            + self.proj.as_ref().map_or(0, LinearLayer::param_count)
    }
}

impl super::TensorVisit for FeedForwardBlock {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor2)) {
        self.bn.visit_params(&super::qualify(prefix, "bn"), f);
        self.lin1.visit_params(&super::qualify(prefix, "lin1"), f);
        self.lin2.visit_params(&super::qualify(prefix, "lin2"), f);
        if let Some(p) = &mut self.proj {
            p.visit_params(&super::qualify(prefix, "proj"), f);
        }
    }

    fn visit_state(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor2)) {
        self.bn.visit_state(&super::qualify(prefix, "bn"), f);
    }
}
