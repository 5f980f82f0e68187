#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

//! Odds-ratio covariance for bilinear association models on two-way tables.

pub mod asycov;
pub mod bridge;
pub mod cli;
pub mod design;
pub mod error;
pub mod fit;
pub mod matkit;
pub mod power;
pub mod serde_matrix;
pub mod simulate;

pub use error::{Error, Result};
