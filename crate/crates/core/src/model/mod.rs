//! The Inception / squeeze-and-excitation quality network.

mod checkpoint;
mod config;
mod inception;
pub mod layers;
mod net;
mod tensor;
mod transfer;

pub use checkpoint::{
    load_checkpoint, save_checkpoint, ModelCheckpoint, NormStats, TensorEntry, TrainingMetadata,
    CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use config::{InceptionConfig, ModelConfig, Padding, PoolSpec, StageShape};
pub use inception::{ConvBnRelu, InceptionBlock};
pub use layers::Params;
pub use net::{stack_inputs, to_mushra, InputNorm, NetCache, QualityNet};
pub use tensor::{Gradients, Tensor, Tensor4};
pub use transfer::{transfer_from_mono, TransferMode, TRANSFERRED_BLOCKS};
