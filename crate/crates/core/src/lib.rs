//! Parametric sound-texture synthesis.
//!
//! A target recording is summarized by frequency-resolved Gram tensors of
//! the ReLU feature maps that an untrained multi-size convolutional filter
//! bank produces from its log-spectrogram. A white-noise signal is then
//! driven by L-BFGS until its own tensors match: first on a free
//! log-spectrogram grid, then, after a random-phase inversion, directly on
//! the samples. Tiles with a frozen copied prefix extend a texture to any
//! length.
//!
//! Heavy kernels run on rayon when the default `parallel` feature is
//! enabled; results are identical with and without it.

pub mod audio;
pub mod cnn;
pub mod config;
pub mod container;
mod error;
pub mod fixture;
pub mod optim;
mod par;
pub mod params;
pub mod pipeline;
pub mod render;
pub mod tf;

pub use audio::{read_wav, white_noise, write_wav, AudioBuffer, WavEncoding};
pub use cnn::{FeatureStack, FilterBank, FilterBankSpec};
pub use config::{Preset, Seeds, SynthesisConfig};
pub use error::{Error, Result};
pub use optim::{lbfgs_minimize, LbfgsOptions, LbfgsResult, Objective};
pub use par::is_parallel;
pub use params::{Fingerprint, GramTensor, ParamCounts, ParamSet};
pub use pipeline::{
    border_diagnostic, extend, extract_params, synthesize, synthesize_from_params, BorderReport,
    Engine, RunManifest, Synthesis, Tile,
};
pub use tf::{LogSpectrogram, StftConfig};
