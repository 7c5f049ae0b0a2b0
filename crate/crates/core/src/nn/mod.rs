//! Tensor plumbing shared by the networks: named parameter sets, the
//! checkpoint archive, layer primitives and the Adam optimizer.

pub mod archive;
mod conv;
pub mod layers;
pub mod optim;
pub(crate) mod params;

pub use archive::Archive;
pub use optim::{Adam, AdamConfig};
pub use candle_core::DType;
pub use params::{Architecture, Mode, ModelParams};
