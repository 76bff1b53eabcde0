//! Multi-level sequence GAN for group activity recognition.
//!
//! Per-agent and scene-level LSTM encoders are fused by gated fusion units
//! into an "action code", which a discriminator with an auxiliary class
//! head scores under a semi-supervised conditional GAN objective. The crate
//! carries its own small reverse-mode autodiff engine ([`tensor`]), a
//! synthetic multi-agent benchmark generator ([`data`]), and the training,
//! ablation and probing harness ([`train`]).

pub mod cli;
pub mod codes;
pub mod config;
pub mod data;
pub mod error;
pub mod fusion;
pub mod gradsuite;
pub mod model;
pub mod nn;
pub mod seed;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
