//! Perceiver: iterative cross-attention from a small latent array into a
//! large byte array, with a reverse-mode tape, Fourier position features,
//! LAMB training and analytic parameter/FLOP accounting.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases at the crate root fix one precision.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod accounting;
pub mod attention;
pub mod baselines;
pub mod checkpoint;
pub mod config;
pub mod error;
pub mod export;
pub mod gradcheck;
pub mod ingestion;
pub mod init;
pub mod model;
pub mod optim;
pub mod params;
pub mod positional;
pub mod scalar;
pub mod tensor;
pub mod train;

pub use accounting::{count_flops, count_params, CountReport};
pub use config::RunConfig;
pub use error::{Error, Result};
pub use ingestion::{ByteArray, Dataset, DatasetKind, ModalitySpan};
pub use model::{Perceiver, PerceiverConfig};
pub use optim::{lamb_step, lr_at, LambConfig, LambState, Schedule};
pub use positional::FourierConfig;
pub use scalar::{DType, Scalar};
pub use tensor::{Tape, Tensor, Tensor32, Tensor64, Var};

pub type Perceiver32 = Perceiver<f32>;
pub type Perceiver64 = Perceiver<f64>;
pub type ByteArray32 = ByteArray<f32>;
pub type ByteArray64 = ByteArray<f64>;
