//! Lifted tensor formulation of low-rank matrix sensing.
//!
//! The crate provides the unlifted Burer–Monteiro objective, its order-`l`
//! tensor lift with exact gradients and Hessian quadratic forms, symmetric
//! rank-1 extraction, first-order optimizers with a deterministic saddle
//! escape, and numeric diagnostics for the implicit rank-1 bias of gradient
//! descent.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod diagnostics;
pub mod error;
pub mod instances;
pub mod lifted;
pub mod linalg;
pub mod optim;
pub mod pca;
pub mod rng;
pub mod tensor;
pub mod unlifted;

pub use error::{Error, Result};
pub use tensor::{DenseTensor, Rank1Certificate};
