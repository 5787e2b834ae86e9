//! Architecture assembly and whole-model forward/backward.
//!
//! Each layer draws its initial weights from its own tagged rng stream, so
//! two architectures built from the same seed share bitwise-identical common
//! layers (the deep trunk of a gated model matches its ungated twin, which
//! is what makes the gate-saturation equivalence checkable).

use crate::nn::{
    param_count, qualify, relu_backward, relu_forward, FeedForwardBlock, GatedActivationLayer,
    LinearLayer, Mode, NnError, TensorVisit,
};
use crate::rng::{derive_seed, seeded_rng};
use crate::tensor::Tensor2;

use super::{GatePlacement, ModelError, ModelKind, ModelSpec};

/// One stack_mlp stage: expand, ReLU, contract. No normalization, shortcut,
/// or dropout; this is the ablation baseline the residual block is compared
/// against.
#[derive(Debug, Clone)]
struct PlainBlock {
    lin1: LinearLayer,
    lin2: LinearLayer,
    cache: Option<(Tensor2, Tensor2)>,
}

impl PlainBlock {
    fn new(d: usize, m: usize, rng: &mut rand_chacha::ChaCha8Rng) -> Self {
        Self {
            lin1: LinearLayer::kaiming(d, m * d, rng),
            lin2: LinearLayer::xavier(m * d, d, rng),
            cache: None,
        }
    }

    fn forward(
        &mut self,
        x: &Tensor2,
        mode: Mode,
        want_hidden: bool,
    ) -> Result<(Tensor2, Option<Tensor2>), NnError> {
        let hidden = relu_forward(&self.lin1.forward(x)?);
        let out = self.lin2.forward(&hidden)?;
        let returned = want_hidden.then(|| hidden.clone());
        self.cache = match mode {
            Mode::Train => Some((x.clone(), hidden)),
            Mode::Inference => None,
        };
        Ok((out, returned))
    }

    fn backward_with_tap(&mut self, g: &Tensor2, tap: Option<&Tensor2>) -> Result<Tensor2, NnError> {
        let (x, hidden) = self.cache.as_ref().ok_or(NnError::MissingCache)?;
        let mut g_hidden = self.lin2.backward(hidden, g)?;
        if let Some(t) = tap {
            g_hidden = g_hidden.add(t);
        }
        let g_pre = relu_backward(hidden, &g_hidden);
        self.lin1.backward(x, &g_pre)
    }
}

impl TensorVisit for PlainBlock {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor2)) {
        self.lin1.visit_params(&qualify(prefix, "lin1"), f);
        self.lin2.visit_params(&qualify(prefix, "lin2"), f);
    }
}

// One Body exists per run; the size spread between Affine and Deep does not
// justify boxing every layer access.
#[allow(clippy::large_enum_variant)]
#[derive(Debug, Clone)]
enum Body {
    /// Bare affine scorer; the head is the whole model.
    Affine,
    Simple {
        lin: LinearLayer,
    },
    Stack {
        embed: LinearLayer,
        blocks: Vec<PlainBlock>,
    },
    Deep {
        embed: LinearLayer,
        blocks: Vec<FeedForwardBlock>,
        /// One gate per block under per_block placement, else empty.
        block_gates: Vec<GatedActivationLayer>,
        /// The single post-trunk gate under final placement.
        final_gate: Option<GatedActivationLayer>,
    },
}

#[derive(Debug, Clone)]
enum Cache {
    Affine { x: Tensor2 },
    Simple { x: Tensor2, hidden: Tensor2 },
    Trunk { x: Tensor2, head_in: Tensor2 },
}

#[derive(Debug, Clone)]
pub struct ModelGraph {
    spec: ModelSpec,
    seed: u64,
    body: Body,
    head: LinearLayer,
    cache: Option<Cache>,
}

impl ModelGraph {
    pub fn build(spec: &ModelSpec, seed: u64) -> Result<Self, ModelError> {
        spec.validate()?;
        let head_width = match spec.kind {
            ModelKind::Linear => spec.input_dim,
            _ => spec.d,
        };
        let head = LinearLayer::xavier(head_width, 1, &mut seeded_rng(seed, "head"));
        let body = match spec.kind {
            ModelKind::Linear => Body::Affine,
            ModelKind::SimpleMlp => Body::Simple {
                lin: LinearLayer::kaiming(spec.input_dim, spec.d, &mut seeded_rng(seed, "embed")),
            },
            ModelKind::StackMlp => Body::Stack {
                embed: LinearLayer::xavier(spec.input_dim, spec.d, &mut seeded_rng(seed, "embed")),
                blocks: (0..spec.blocks)
                    .map(|i| PlainBlock::new(spec.d, spec.m, &mut seeded_rng(seed, &format!("block{i}"))))
                    .collect(),
            },
            ModelKind::DeepMlp | ModelKind::GatedDeepMlp => {
                let embed =
                    LinearLayer::xavier(spec.input_dim, spec.d, &mut seeded_rng(seed, "embed"));
                let blocks = (0..spec.blocks)
                    .map(|i| {
                        FeedForwardBlock::new(
                            spec.d,
                            spec.m,
                            spec.dropout,
                            &mut seeded_rng(seed, &format!("block{i}")),
                            derive_seed(seed, &format!("block{i}.dropout")),
                        )
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                let (block_gates, final_gate) = if spec.kind == ModelKind::GatedDeepMlp {
                    match spec.gate_placement {
                        GatePlacement::Final => (
                            Vec::new(),
                            Some(GatedActivationLayer::new(
                                spec.d,
                                spec.k,
                                spec.gate_mid_relu,
                                &mut seeded_rng(seed, "gate"),
                            )?),
                        ),
                        GatePlacement::PerBlock => (
                            (0..spec.blocks)
                                .map(|i| {
                                    GatedActivationLayer::new(
                                        spec.d,
                                        spec.k,
                                        spec.gate_mid_relu,
                                        &mut seeded_rng(seed, &format!("block{i}.gate")),
                                    )
                                })
                                .collect::<Result<Vec<_>, _>>()?,
                            None,
                        ),
                    }
                } else {
                    (Vec::new(), None)
                };
                Body::Deep {
                    embed,
                    blocks,
                    block_gates,
                    final_gate,
                }
            }
        };
        Ok(Self {
            spec: spec.clone(),
            seed,
            body,
            head,
            cache: None,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn input_dim(&self) -> usize {
        self.spec.input_dim
    }

    pub fn param_count(&mut self) -> usize {
        param_count(self)
    }

    pub fn head_mut(&mut self) -> &mut LinearLayer {
        &mut self.head
    }

    /// Every gate in the model (empty for ungated kinds).
    pub fn gates_mut(&mut self) -> Vec<&mut GatedActivationLayer> {
        match &mut self.body {
            Body::Deep {
                block_gates,
                final_gate,
                ..
            } => block_gates
                .iter_mut()
                .chain(final_gate.iter_mut())
                .collect(),
            _ => Vec::new(),
        }
    }

    /// Pins or releases every dropout mask (finite-difference probes need a
    /// fixed mask across evaluations).
    pub fn freeze_dropout(&mut self, frozen: bool) {
        if let Body::Deep { blocks, .. } = &mut self.body {
            for b in blocks {
                b.drop_mut().freeze(frozen);
            }
        }
    }

    pub fn predict_logits(&mut self, x: &Tensor2, mode: Mode) -> Result<Tensor2, ModelError> {
        Ok(self.forward(x, mode, false)?.0)
    }

    /// The model's "generated factors": post-ReLU activations of the last
    /// expansion layer (width m·d; the hidden layer itself for simple_mlp).
    pub fn extract_features(&mut self, x: &Tensor2, mode: Mode) -> Result<Tensor2, ModelError> {
        self.forward(x, mode, true)?.1.ok_or(ModelError::NoFeatures)
    }

    /// One forward pass returning logits and, when requested, the feature
    /// tensor from the same pass (so a later backward sees consistent
    /// caches).
    pub fn forward(
        &mut self,
        x: &Tensor2,
        mode: Mode,
        want_features: bool,
    ) -> Result<(Tensor2, Option<Tensor2>), ModelError> {
        if x.cols() != self.spec.input_dim {
            return Err(NnError::Shape {
                op: "model forward",
                left: x.shape(),
                right: (x.rows(), self.spec.input_dim),
            }
            .into());
        }
        match &mut self.body {
            Body::Affine => {
                if want_features {
                    return Err(ModelError::NoFeatures);
                }
                let logits = self.head.forward(x)?;
                self.cache = (mode == Mode::Train).then(|| Cache::Affine { x: x.clone() });
                Ok((logits, None))
            }
            Body::Simple { lin } => {
                let hidden = relu_forward(&lin.forward(x)?);
                let logits = self.head.forward(&hidden)?;
                let features = want_features.then(|| hidden.clone());
                self.cache = (mode == Mode::Train).then(|| Cache::Simple {
                    x: x.clone(),
                    hidden,
                });
                Ok((logits, features))
            }
            Body::Stack { embed, blocks } => {
                let mut cur = embed.forward(x)?;
                let last = blocks.len() - 1;
                let mut features = None;
                for (i, block) in blocks.iter_mut().enumerate() {
                    let (out, hidden) = block.forward(&cur, mode, want_features && i == last)?;
                    if let Some(h) = hidden {
                        features = Some(h);
                    }
                    cur = out;
                }
                let logits = self.head.forward(&cur)?;
                self.cache = (mode == Mode::Train).then(|| Cache::Trunk {
                    x: x.clone(),
                    head_in: cur,
                });
                Ok((logits, features))
            }
            Body::Deep {
                embed,
                blocks,
                block_gates,
                final_gate,
            } => {
                let mut cur = embed.forward(x)?;
                let last = blocks.len() - 1;
                let mut features = None;
                for (i, block) in blocks.iter_mut().enumerate() {
                    let (out, hidden) = block.forward_with_hidden(&cur, mode)?;
                    if want_features && i == last {
                        features = Some(hidden);
                    }
                    cur = out;
                    if let Some(gate) = block_gates.get_mut(i) {
                        cur = gate.forward(&cur, mode)?;
                    }
                }
                if let Some(gate) = final_gate {
                    cur = gate.forward(&cur, mode)?;
                }
                let logits = self.head.forward(&cur)?;
                self.cache = (mode == Mode::Train).then(|| Cache::Trunk {
                    x: x.clone(),
                    head_in: cur,
                });
                Ok((logits, features))
            }
        }
    }

    /// Backpropagates from the logit gradient; `feature_tap`, when present,
    /// is an extra gradient w.r.t. the extracted feature tensor. Parameter
    /// gradients accumulate in place; the input gradient is returned.
    pub fn backward(
        &mut self,
        g_logits: &Tensor2,
        feature_tap: Option<&Tensor2>,
    ) -> Result<Tensor2, ModelError> {
        let cache = self.cache.as_ref().ok_or(NnError::MissingCache)?;
        match (&mut self.body, cache) {
            (Body::Affine, Cache::Affine { x }) => {
                if feature_tap.is_some() {
                    return Err(ModelError::NoFeatures);
                }
                Ok(self.head.backward(x, g_logits)?)
            }
            (Body::Simple { lin }, Cache::Simple { x, hidden }) => {
                let mut g_hidden = self.head.backward(hidden, g_logits)?;
                if let Some(t) = feature_tap {
                    g_hidden = g_hidden.add(t);
                }
                let g_pre = relu_backward(hidden, &g_hidden);
                Ok(lin.backward(x, &g_pre)?)
            }
            (Body::Stack { embed, blocks }, Cache::Trunk { x, head_in }) => {
                let mut g = self.head.backward(head_in, g_logits)?;
                let last = blocks.len() - 1;
                for (i, block) in blocks.iter_mut().enumerate().rev() {
                    let tap = (i == last).then_some(feature_tap).flatten();
                    g = block.backward_with_tap(&g, tap)?;
                }
                Ok(embed.backward(x, &g)?)
            }
            (
                Body::Deep {
                    embed,
                    blocks,
                    block_gates,
                    final_gate,
                },
                Cache::Trunk { x, head_in },
            ) => {
                let mut g = self.head.backward(head_in, g_logits)?;
                if let Some(gate) = final_gate {
                    g = gate.backward(&g)?;
                }
                let last = blocks.len() - 1;
                for (i, block) in blocks.iter_mut().enumerate().rev() {
                    if let Some(gate) = block_gates.get_mut(i) {
                        g = gate.backward(&g)?;
                    }
                    let tap = (i == last).then_some(feature_tap).flatten();
                    g = block.backward_with_tap(&g, tap)?;
                }
                Ok(embed.backward(x, &g)?)
            }
            _ => unreachable!("cache variant always matches the body"),
        }
    }
}

impl TensorVisit for ModelGraph {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor2)) {
        match &mut self.body {
            Body::Affine => {}
            Body::Simple { lin } => lin.visit_params(&qualify(prefix, "embed"), f),
            Body::Stack { embed, blocks } => {
                embed.visit_params(&qualify(prefix, "embed"), f);
                for (i, b) in blocks.iter_mut().enumerate() {
                    b.visit_params(&qualify(prefix, &format!("block{i}")), f);
                }
            }
            Body::Deep {
                embed,
                blocks,
                block_gates,
                final_gate,
            } => {
                embed.visit_params(&qualify(prefix, "embed"), f);
                for (i, b) in blocks.iter_mut().enumerate() {
                    b.visit_params(&qualify(prefix, &format!("block{i}")), f);
                }
                for (i, g) in block_gates.iter_mut().enumerate() {
                    g.visit_params(&qualify(prefix, &format!("block{i}.gate")), f);
                }
                if let Some(g) = final_gate {
                    g.visit_params(&qualify(prefix, "gate"), f);
                }
            }
        }
        self.head.visit_params(&qualify(prefix, "head"), f);
    }

    fn visit_state(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor2)) {
        if let Body::Deep { blocks, .. } = &mut self.body {
            for (i, b) in blocks.iter_mut().enumerate() {
                b.visit_state(&qualify(prefix, &format!("block{i}")), f);
            }
        }
    }
}
