//! Comparison systems: a CNN-based SC model with n-bit uniform quantization
//! at the bottleneck, and separate source + channel coding built on a
//! convolutional code with hard-decision Viterbi decoding.

pub mod cnn_sc;
pub mod convcode;
pub mod quant;
pub mod separate;

pub use cnn_sc::CnnScModel;
pub use convcode::ConvCode;
pub use quant::QuantConfig;
pub use separate::{separate_coding_pipeline, SeparateCodingConfig};
