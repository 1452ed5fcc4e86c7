#![cfg_attr(not(test), no_std)]
//! Graph-convolution-induced attribute conditioning for conditional GANs.
//!
//! The crate is `no_std` (it needs `alloc`) and carries every numerical
//! piece: a small reverse-mode tensor engine, attribute co-occurrence
//! graphs, the GCN conditioner and its alternatives, generator and critic
//! networks, WGAN-GP and multi-task losses, the synthetic dataset, quality
//! metrics and the training loop. File formats, configuration parsing and
//! the command line live in the `attrgraph` crate.

extern crate alloc;

pub mod condition;
pub mod cooccurrence;
pub mod dataset;
pub mod error;
pub mod gradcheck;
pub mod losses;
pub mod metrics;
pub mod mtl;
pub mod networks;
pub mod params;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Tensor;
