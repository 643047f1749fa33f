//! Full-reference quality prediction for coded stereo audio.
//!
//! Reference and coded excerpts are turned into stacked Gammatone
//! spectrograms of their L, R, M and S signals and scored by an
//! Inception/squeeze-and-excitation network on the MUSHRA scale.

pub mod audio;
pub mod conditioning;
pub mod error;
pub mod evaluation;
pub mod frontend;
pub mod loss;
pub mod model;
pub mod scalar;
pub mod synth;
pub mod training;

pub use audio::{load_wav, read_manifest, write_manifest, AudioExcerpt, RatedPair, SAMPLE_RATE};
pub use conditioning::{build_input_tensor, InputLayout, InputTensor, LoadedPair, TensorBuilder};
pub use error::{Error, Result};
pub use frontend::{compute_spectrogram, FrontendConfig, GammatoneFrontend, GammatoneSpectrogram};
pub use loss::{smooth_l1, Loss, SmoothL1};
pub use model::{
    load_checkpoint, save_checkpoint, transfer_from_mono, ModelCheckpoint, ModelConfig, QualityNet,
    TransferMode,
};
pub use scalar::Scalar;

pub type Excerpt32 = AudioExcerpt<f32>;
pub type Excerpt64 = AudioExcerpt<f64>;
pub type Model32 = QualityNet<f32>;
pub type Model64 = QualityNet<f64>;
pub type Checkpoint32 = ModelCheckpoint<f32>;
pub type Checkpoint64 = ModelCheckpoint<f64>;
pub type Tensor32 = InputTensor<f32>;
pub type Tensor64 = InputTensor<f64>;
