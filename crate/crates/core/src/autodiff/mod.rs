//! Reverse-mode differentiation over matrices, plus forward derivative
//! propagation through tanh networks.

mod mlp;
mod tape;

pub use mlp::{Jet, Layer, Mlp, NetBinding, Tangent, TimeDerivatives, MLP_SCHEMA_VERSION};
pub use tape::{Gradients, Mat, ParamId, Tape, Var};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AutodiffError {
    #[error("input width {got} does not match expected {expected}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("loss must be 1x1, got {rows}x{cols}")]
    NonScalarLoss { rows: usize, cols: usize },
    #[error("invalid network: {0}")]
    InvalidNetwork(String),
}
