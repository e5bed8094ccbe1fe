//! From-scratch differentiable layer stack with exact backpropagation, MAE
//! loss, the Adam optimizer, checkpoint serialization and a finite-difference
//! gradient checker.

pub mod adam;
pub mod checkpoint;
pub mod gradcheck;
pub mod loss;
pub mod model;
pub mod ops;
pub mod tensor;

pub use adam::{adam_step, AdamState};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use gradcheck::gradient_check;
pub use loss::mae_loss;
pub use model::{Activation, AutoencoderModel, ForwardPass, LayerSpec, ModelConfig};
pub use tensor::Tensor3;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("numerical fault: {0}")]
    NumericalFault(String),
    #[error("length {length} not divisible by pool window {window}")]
    IndivisibleLength { length: usize, window: usize },
    #[error("invalid layer spec: {0}")]
    InvalidSpec(String),
    #[error("bad magic: expected \"SPAE\", found {0:?}")]
    BadMagic(Vec<u8>),
    #[error("unsupported checkpoint version {0}")]
    VersionUnsupported(u32),
    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    ChecksumMismatch { stored: u32, computed: u32 },
    #[error("checkpoint truncated")]
    Truncated,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<crate::wire::WireError> for NnError {
    fn from(e: crate::wire::WireError) -> Self {
        match e {
            crate::wire::WireError::Truncated => NnError::Truncated,
            crate::wire::WireError::Crc { stored, computed } => {
                NnError::ChecksumMismatch { stored, computed }
            }
        }
    }
}
