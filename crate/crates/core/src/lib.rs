//! Hierarchical motion VAE prior.
//!
//! Skeleton-aware differentiable operators on a small reverse-mode tape, a
//! two-latent motion VAE over fixed-length windows of 6D joint rotations, a
//! root-trajectory predictor, and the latent-space procedures built on a
//! trained model: sliding-window refinement, keyframe in-betweening and
//! partial-body completion.

pub mod autodiff;
pub mod data;
pub mod error;
pub mod experiments;
pub mod gradsuite;
pub mod harness;
pub mod hmvae;
pub mod kinematics;
pub mod metrics;
pub mod optim;
pub mod rotation;
pub mod skeleton;
pub mod tasks;
pub mod tensor;
pub mod trajectory;

pub use error::{Error, Result};
pub use tensor::{Real, Tensor};
