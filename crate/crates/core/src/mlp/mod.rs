//! Sine-activated MLPs, multiscale ensembles, exact spatial jets and
//! parameter gradients of jet-based objectives.

mod grad;
mod jet;
mod params;

pub use grad::{loss_param_gradient, NetGradient, Participant};
pub use jet::{Jet2, JetBatch, JetOrder, NetTape};
pub use params::{dyadic_scales, MlpParams, MscaleNet, Point};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("non-finite input point at index {index}")]
    NonFiniteInput { index: usize },
}
