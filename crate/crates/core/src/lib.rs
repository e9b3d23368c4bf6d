//! Training and stability analysis for SGD, SAM and micro-batch SAM (mSAM).

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod data;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod optim;
pub mod sharpness;
pub mod stability;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{ParamVector, Tensor};
