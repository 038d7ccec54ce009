//! Analytic Riemannian geometry of MLP-induced latent spaces, plus the GEAR
//! curvature-matching transfer-learning model built on top of it.
//!
//! The crate is organized bottom-up:
//!
//! - [`tensor`]: dense tensors and einsum-style contraction.
//! - [`net`]: dense MLPs with SiLU/quadratic/linear activations and cached
//!   forward traces.
//! - [`autodiff`]: a small tensor-level reverse-mode tape; all analytic
//!   formulas are expressed once through it.
//! - [`geometry`]: per-layer derivative blocks, higher-order chain rule,
//!   pullback metric, Christoffel symbols, Riemann/Ricci curvature.
//! - [`oracle`]: independent finite-difference twins of every geometric
//!   quantity, used as ground truth.
//! - [`gear`]: the two-task transfer model and its six loss components.
//! - [`train`]: gradients, AdamW, cross-validation, label corruption.
//! - [`data`]: dataset container, normalization, fold splitting.

pub mod autodiff;
pub mod data;
pub mod error;
pub mod gear;
pub mod geometry;
pub mod net;
pub mod oracle;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Tensor;
