//! Dequantization of uniformly quantized signals by ℓ1 analysis in an
//! orthonormal transform domain, solved with the Chambolle-Pock primal-dual
//! iteration or with unrolled, trainable primal-dual networks.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod cp_solver;
pub mod error;
pub mod network;
pub mod par;
pub mod pipeline;
pub mod prox;
pub mod training;
pub mod transforms;

pub use error::{Error, Result};
