//! Two-party vertical federated learning with cache-enabled local updates.

pub mod dataio;
pub mod error;
pub mod harness;
pub mod model;
pub mod numerics;
pub mod protocol;
pub mod transport;
pub mod workset;

pub use error::{Error, Result};

pub type Matrix32 = numerics::Matrix<f32>;
pub type Matrix64 = numerics::Matrix<f64>;
pub type Mlp32 = model::Mlp<f32>;
pub type Mlp64 = model::Mlp<f64>;
pub type Gradients64 = model::Gradients<f64>;
pub type AdaGrad64 = model::AdaGrad<f64>;
