//! Supervised graph contrastive learning for gene regulatory networks.

pub mod autodiff;
pub mod downstream;
pub mod error;
pub mod encoder;
pub mod estimate;
pub mod grn;
pub mod loss;
pub mod oracle;
pub mod pretrain;
pub mod synth;
pub mod verify;

pub use error::{Error, Result};
