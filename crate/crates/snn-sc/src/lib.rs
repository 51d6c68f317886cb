//! Spiking semantic communication for split edge-cloud inference.
//!
//! An image classifier is split between an edge device and the cloud. The
//! edge half produces a feature tensor, a spiking encoder turns it into
//! binary spike trains that cross a digital channel (BSC or BEC), and a
//! spiking reconstructor plus converter on the cloud side rebuild a
//! floating-point feature for the classifier tail. Training is end-to-end
//! with surrogate gradients and an entropy regularizer on the transmitted
//! bits. Quantized-CNN and separate source/channel coding baselines are
//! included for comparison, along with a TCP transport that runs the split
//! model for real.

pub mod baselines;
pub mod channel;
pub mod checkpoint;
pub mod error;
pub mod harness;
pub mod nn;
pub mod par;
pub mod snn;
pub mod training;
pub mod transport;

pub use error::{Error, Result};
