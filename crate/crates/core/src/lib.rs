//! Multiplication-free channel-wise parallel spiking neurons on the CPU.
//!
//! The neuron charges with a dilated causal per-channel convolution whose
//! weights are powers of two, so inference needs only shifts and additions.
//! Around it sit interchangeable convolution engines, an empirical engine and
//! layout selector, surrogate-gradient training with finite-difference
//! certification, and an energy/memory cost model.

pub mod analysis;
pub mod autoselect;
pub mod baseline;
pub mod engines;
pub mod error;
pub mod io;
pub mod network;
pub mod neuron;
pub mod quant;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
