// `!(x > y)` is the NaN-rejecting form of a bound check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod annotate;
pub mod descriptor;
pub mod discriminator;
pub mod error;
pub mod ingest;
pub mod orf;
pub mod pipeline;
pub mod segmentation;
pub mod synth;
pub mod tracker;

pub use error::{Error, Result};
pub use ingest::ObjectClass;
