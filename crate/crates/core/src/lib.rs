// `!(x > 0.0)` also rejects NaN, which `x <= 0.0` would let through.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dynamics;
pub mod error;
pub mod filtering;
pub mod girsanov;
pub mod harness;
pub mod hierarchy;
pub mod models;
pub mod reference;
pub mod resampling;
pub mod rng;

pub use error::{MlpfError, Result};
pub use models::{ModelKind, ModelSpec, Observation};
