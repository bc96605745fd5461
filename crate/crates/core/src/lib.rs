//! Mixed-domain point cloud / image / text alignment toolkit.

// NaN-rejecting guards read more plainly as `!(x > 0.0)`
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod contrastive;
pub mod curriculum;
pub mod encoder;
pub mod error;
pub mod fusion;
pub mod geometry;
pub mod hpr;
pub mod hull;
pub mod projection;
pub mod provider;
pub mod rng;
pub mod scene;
pub mod templates;
pub mod train;
pub mod triplets;
pub mod zeroshot;

pub use error::{Error, Result};
