//! Offline style-transfer data augmentation.
//!
//! The crate covers the whole workflow: scoring and selecting style images by
//! texture complexity ([`tcps`]), stylizing content images with AdaIN on a small
//! built-in CNN runtime ([`tensor`], [`adain`]), writing N-times augmented
//! datasets with sampling manifests ([`pipeline`]), training-time sampling and
//! photometric transforms ([`augment`]) and 19-class segmentation evaluation
//! ([`segeval`]).

pub mod error;
#[macro_use]
pub mod seed;
pub mod tensor;

pub mod adain;
pub mod augment;
pub mod config;
pub mod imageio;
pub mod pipeline;
pub mod segeval;
pub mod tcps;

pub use config::Config;
pub use error::{Error, Result};
pub use tensor::{ConvSpec, Tensor};
