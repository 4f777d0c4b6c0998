//! Minimal reverse-mode autodiff plus the CNN1D, CNN2D and pixel-token ViT
//! binary classifiers and their deterministic training loop.

mod checkpoint;
mod model;
mod tape;
mod train;

use thiserror::Error;

pub use checkpoint::{decode_weights, encode_weights, predict_batch, Checkpoint, FORMAT_VERSION, MAGIC};
pub use model::{
    accumulate_gradient, backward, build_cnn1d, build_cnn2d, build_vit, forward, forward_on_tape, logit,
    Activation, Arch, Init, Layer, ModelSpec, Padding, ParamSpec, Shape, VIT_BLOCKS, VIT_DIM, VIT_FFN,
    VIT_HEADS,
};
pub use tape::{bce_with_logits, sigmoid, ConvGeom, Tape, Tensor, Var, LAYER_NORM_EPS};
pub use train::{accuracy, mean_loss, train, Adam, Dataset, EpochRecord, TrainConfig, TrainOutcome};

#[derive(Debug, Error)]
pub enum NnError {
    #[error("invalid model spec: {0}")]
    Spec(String),
    #[error("input shape mismatch: expected {expected:?}, got {actual:?}")]
    ShapeMismatch { expected: Vec<usize>, actual: Vec<usize> },
    #[error("weight count mismatch: spec needs {expected}, got {actual}")]
    WeightCount { expected: usize, actual: usize },
    #[error("loss is not finite")]
    NonFiniteLoss,
    #[error("training diverged (non-finite loss) at epoch {epoch}")]
    Diverged { epoch: usize },
    #[error("training and validation sets must be nonempty")]
    EmptyData,
    #[error("corrupted checkpoint: {0}")]
    Corrupt(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}
