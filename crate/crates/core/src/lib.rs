//! One-dimensional Wasserstein DCGAN with gradient penalty for synthesizing
//! vibration segments, plus the metrics and the convolutional damage
//! classifier used to judge the synthetic data.

// `!(x > 0.0)` style checks are used on purpose so that NaN is rejected
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod checkpoint;
pub mod classifier;
pub mod error;
pub mod gradcheck;
pub mod metrics;
pub mod optim;
pub mod signal;
pub mod wdcgan;

pub use error::{Error, Result};
