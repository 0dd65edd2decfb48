//! Dual-stream (local + global) patch-based semantic segmentation for aerial
//! imagery: a small CPU network engine, the L-Seg / G-Seg / LG-Seg builders,
//! synthetic scene generation, relaxed evaluation, the RA-Seg/L-Seg threshold
//! tree, house counting and the pathway-complementarity ablation.

pub mod arch;
pub mod combiner;
pub mod data;
pub mod error;
pub mod eval;
pub mod experiments;
pub mod nn;
pub mod postproc;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Scalar, Tensor};
