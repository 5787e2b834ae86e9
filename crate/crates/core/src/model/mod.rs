//! The five benchmarked architectures, assembled from the layer primitives:
//! an affine scorer, a single-hidden-layer MLP, a plain stack of expansion
//! blocks, the same stack with normalization/residual/dropout, and that deep
//! variant with multiplicative gating.
//!
//! Every trainable tensor is reachable through [`TensorVisit`] under a
//! stable dotted name, which is what the optimizer keys its moments on and
//! what checkpoints store.

mod checkpoint;
mod graph;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use graph::ModelGraph;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::NnError;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model spec: {0}")]
    Spec(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("the linear model has no hidden features to extract")]
    NoFeatures,
    #[error("checkpoint {path}: {reason}")]
    Checkpoint { path: String, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Linear,
    SimpleMlp,
    StackMlp,
    DeepMlp,
    #[default]
    GatedDeepMlp,
}

impl ModelKind {
    pub const ALL: [ModelKind; 5] = [
        ModelKind::Linear,
        ModelKind::SimpleMlp,
        ModelKind::StackMlp,
        ModelKind::DeepMlp,
        ModelKind::GatedDeepMlp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Linear => "linear",
            ModelKind::SimpleMlp => "simple_mlp",
            ModelKind::StackMlp => "stack_mlp",
            ModelKind::DeepMlp => "deep_mlp",
            ModelKind::GatedDeepMlp => "gated_deep_mlp",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                format!(
                    "unknown model kind `{s}` (expected one of: {})",
                    ModelKind::ALL.map(|k| k.name()).join(", ")
                )
            })
    }
}

/// Where the gated activation sits in a gated_deep_mlp.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GatePlacement {
    /// One gate after the last block, before the head.
    #[default]
    Final,
    /// A gate after every block.
    PerBlock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    #[serde(default)]
    pub kind: ModelKind,
    /// Width of the factor input vector.
    #[serde(default = "defaults::input_dim")]
    pub input_dim: usize,
    /// Trunk embedding width.
    #[serde(default = "defaults::d")]
    pub d: usize,
    /// Hidden expansion multiplier: blocks widen to m·d.
    #[serde(default = "defaults::m")]
    pub m: usize,
    /// Gate compression divisor: the gate bottlenecks to d/k.
    #[serde(default = "defaults::k")]
    pub k: usize,
    #[serde(default = "defaults::blocks")]
    pub blocks: usize,
    #[serde(default = "defaults::dropout")]
    pub dropout: f64,
    #[serde(default)]
    pub gate_placement: GatePlacement,
    /// ReLU between the gate's two linears (default: none, the gate path is
    /// linear-linear-sigmoid).
    #[serde(default)]
    pub gate_mid_relu: bool,
}

mod defaults {
    pub fn input_dim() -> usize {
        101
    }
    pub fn d() -> usize {
        512
    }
    pub fn m() -> usize {
        4
    }
    pub fn k() -> usize {
        8
    }
    pub fn blocks() -> usize {
        5
    }
    pub fn dropout() -> f64 {
        0.15
    }
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self::new(ModelKind::default())
    }
}

impl ModelSpec {
    pub fn new(kind: ModelKind) -> Self {
        Self {
            kind,
            input_dim: defaults::input_dim(),
            d: defaults::d(),
            m: defaults::m(),
            k: defaults::k(),
            blocks: defaults::blocks(),
            dropout: defaults::dropout(),
            gate_placement: GatePlacement::default(),
            gate_mid_relu: false,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let fail = |msg: String| Err(ModelError::Spec(msg));
        if self.input_dim == 0 {
            return fail("input_dim must be at least 1".into());
        }
        if self.d == 0 || self.m == 0 {
            return fail(format!("widths must be positive, got d={} m={}", self.d, self.m));
        }
        if self.k == 0 || !self.d.is_multiple_of(self.k) {
            return fail(format!("k={} must divide d={}", self.k, self.d));
        }
        if self.blocks == 0 {
            return fail("blocks must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        Ok(())
    }

    /// Width of the tensor `extract_features` returns.
    pub fn feature_dim(&self) -> Option<usize> {
        match self.kind {
            ModelKind::Linear => None,
            ModelKind::SimpleMlp => Some(self.d),
            _ => Some(self.m * self.d),
        }
    }
}
