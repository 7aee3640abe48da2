//! Tensor math with reverse-mode gradients and the linear-attention network.

use alloc::string::String;

use crate::tensor::TensorError;

mod attention;
mod checkpoint;
mod flops;
mod gradcheck;
pub(crate) mod kernels;
mod model;
mod tape;

pub use attention::{averaging_kernel, multiscale_tokens, relu_linear_attention, softmax_attention, ATTENTION_EPS};
pub use checkpoint::{decode_checkpoint, encode_checkpoint, CheckpointError, CHECKPOINT_MAGIC};
pub use flops::{conv_macs, estimate_flops, linear_attention_macs, softmax_attention_macs};
pub use gradcheck::{check_gradients, GradCheck, GradProbe};
pub use kernels::PadMode;
pub use model::{
    Block, BnUpdate, FeatureTap, ForwardPass, MbConv, Mode, Model, ModelConfig, ParamEntry, ParamKind, ParamStore,
    Recorder, VitBlock, BN_MOMENTUM,
};
pub use tape::{BatchStats, Gradients, Tape, Var};
pub(crate) use tape::softmax_cross_entropy;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NnError {
    #[error(transparent)]
    Shape(#[from] TensorError),
    #[error("tape already replayed; record a new forward pass")]
    TapeReplayed,
    #[error("target class {target} out of range for {classes} classes")]
    TargetOutOfRange { target: usize, classes: usize },
    #[error("kernel {kernel} larger than spatial dims {height}x{width}")]
    KernelTooLarge { kernel: usize, height: usize, width: usize },
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("model parameters are not initialized")]
    Uninitialized,
    #[error("non-finite values produced by {0}")]
    NonFinite(&'static str),
}
