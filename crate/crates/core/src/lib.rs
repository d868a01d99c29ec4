//! Self-supervised learning of an SR-distortion manifold and linear-probe
//! quality prediction for super-resolved images.
//!
//! Numeric code is generic over [`Scalar`] (`f32` for training, `f64` for
//! reference paths). Concrete aliases for both precisions live here.

pub mod augment;
pub mod data;
pub mod downstream;
pub mod error;
pub mod forge;
pub mod image;
pub mod net;
pub mod objectives;
pub mod scalar;
pub mod sampler;
pub mod seed;
pub mod trainer;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Image32 = image::Image<f32>;
pub type Image64 = image::Image<f64>;
pub type Model32 = net::Model<f32>;
pub type Model64 = net::Model<f64>;
