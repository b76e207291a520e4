//! Multimodal review helpfulness ranking at desk scale.
//!
//! A product's reviews are ranked by a learned scalar score computed from
//! four encoded inputs (product text, product images, review text, review
//! images), a stack of cross-modal attention blocks, and three fusion paths.
//! Training combines a pairwise ranking hinge with an adaptively weighted
//! cross-modal contrastive loss. Everything runs on the f64 reverse-mode
//! autodiff engine in [`tensor`].

pub mod config;
pub mod dataset;
pub mod encoders;
pub mod fusion;
pub mod harness;
mod init;
pub mod model;
pub mod objectives;
pub mod params;
pub mod tensor;
pub mod verification;

pub use config::{ContrastiveMode, TrainConfig};
pub use tensor::{AdamState, Tape, Tensor, TensorId};
