//! Core library for the whitening attribution benchmark: synthetic image
//! data, whitening transforms, small neural models, attribution methods,
//! explanation metrics and the two-feature analytic checks.

// `!(x > 0.0)` rejects NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod attribution;
pub mod datagen;
pub mod error;
pub mod io;
pub mod linalg;
pub mod metrics;
pub mod models;
pub mod rng;
pub mod theory2d;
pub mod whitening;

pub use error::{Error, Result};
pub use linalg::{Matrix, SymMatrix};
