//! Region-attention image classification, end to end on the CPU.
//!
//! The crate provides a small reverse-mode autodiff engine (`tensor`), a
//! hybrid random-erasing augmentation pipeline (`augment`), a tiny
//! convolutional backbone with bilinear feature upsampling (`backbone`),
//! the region-attention head with its two pooled feed-forward paths and
//! context gating (`regions`, `ffn`, `refine`), and a full SGD training
//! and evaluation loop (`train`, `metrics`) over PPM datasets.
//!
//! Start with the runnable programs in `examples/`; the `rafa` binary wraps
//! the same entry points behind `train`, `eval`, `augment`, `gradcheck`,
//! and `synth` subcommands.

pub mod augment;
pub mod backbone;
pub mod checkpoint;
pub mod cli;
pub mod dataset;
pub mod error;
pub mod ffn;
pub mod gradcheck;
pub mod image;
pub mod metrics;
pub mod model;
pub mod refine;
pub mod regions;
pub mod rng;
pub mod settings;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use rng::Rng;
pub use tensor::Tensor;
