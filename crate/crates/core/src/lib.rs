//! Structural reparameterization toolkit and CPU inference engine for a
//! dual-resolution segmentation network.
//!
//! The training structure uses multi-path blocks (3x3, stacked 1x1 and
//! identity paths) and a pyramid pooling module with two parallel grouped
//! convolutions. [`Network::reparameterize`] rewrites it into a
//! single-path network with identical outputs up to rounding.

pub mod bench;
pub mod blocks;
pub mod error;
pub mod metrics;
pub mod model_io;
pub mod network;
pub mod ops;
pub mod params;
pub mod reparam;
pub mod tensor;

pub use error::{Error, Result};
pub use model_io::WeightStore;
pub use network::{Network, NetworkDef};
pub use tensor::{DType, Dims, Element, Tensor4};
