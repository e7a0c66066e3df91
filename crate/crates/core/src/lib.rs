// `!(x > 0.0)` is used on purpose so that NaN takes the rejecting branch.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod driver;
pub mod eigen;
pub mod error;
pub mod geom;
pub mod groups;
pub mod mesh;
pub mod metrics;
pub mod patches;
pub mod pipeline;
pub mod posesolve;
pub mod selftest;
pub mod spatial;
pub mod stability;
pub mod symmetry;
pub mod synth;
pub mod template;

pub use error::{Error, Result};
