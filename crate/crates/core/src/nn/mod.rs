//! Minimal feed-forward network engine.

pub mod checkpoint;
pub mod gradcheck;
pub mod init;
pub mod layers;
pub mod loss;
pub mod optim;
pub mod sequential;

pub use gradcheck::{grad_check, GradCheckReport, GradCheckTarget, Probe};
pub use layers::{concat, concat_backward, ConvSpec, LayerSpec, SIGMOID_EPS};
pub use loss::{cross_entropy_loss, LossReport};
pub use optim::{sgd_momentum_step, Sgd, SgdParams};
pub use sequential::{Layer, Sequential};
