//! Reverse-mode differentiation on dense tensors, with the layer set needed
//! by the AT-AT denoiser: 1-D/2-D convolution, pooling, batch and layer
//! normalisation, LSTM, multi-head self-attention and transformer encoder
//! layers, plus Adam and a named-tensor checkpoint format.

pub mod checkpoint;
pub mod error;
pub mod gradcheck;
pub mod layers;
mod ops;
pub mod optim;
pub mod params;
pub mod scalar;
pub mod tape;
pub mod suite;
pub mod tensor;

pub use checkpoint::Checkpoint;
pub use error::{AutogradError, Result};
pub use gradcheck::{grad_check, GradCheckReport};
pub use layers::{
    BatchNorm, Conv1d, Conv2d, Dense, ForwardCtx, LayerNorm, Lstm, Mode, MultiHeadAttention,
    TransformerEncoderLayer,
};
pub use ops::norm::{Moments, NormAxis};
pub use ops::elementwise::{sigmoid, softmax_in_place};
pub use ops::loss::BCE_CLAMP;
pub use ops::PoolDims;
pub use optim::{Adam, AdamConfig};
pub use params::{Bound, BufferId, ParamId, ParamStore, Parameter};
pub use scalar::Scalar;
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
