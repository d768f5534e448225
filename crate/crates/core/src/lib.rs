//! Recurrent networks with element-wise attention gates on their inputs.
//!
//! The crate covers dense numerics, the sRNN/LSTM/GRU cells with an optional
//! attention gate, exact backpropagation through time, Adam training, MNIST and
//! synthetic data, checkpointing, and parameter/FLOP accounting.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod bptt;
pub mod cells;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod numerics;
pub mod training;

pub use bptt::{NetworkParams, NetworkSpec};
pub use cells::{CellKind, GateMode};
pub use error::{Error, Result};
