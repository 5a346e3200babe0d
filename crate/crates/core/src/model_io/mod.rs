//! Weight files, configuration files, and checkpoint conversion.

mod config;
mod store;

pub use config::{load_config, parse_config, resolve_config};
pub use store::{valid_name, StoredTensor, TensorData, WeightStore, MAGIC, VERSION};

use crate::error::{Error, Result};
use crate::network::{Network, NetworkDef};
use crate::tensor::DType;

/// Reparameterizes a training-structure checkpoint into deployment weights
/// (`<block>.fused.weight`, `<block>.fused.bias`) at the store's precision.
pub fn convert_checkpoint(train: &WeightStore, def: &NetworkDef) -> Result<WeightStore> {
    if !train.has_batchnorm() {
        return Err(Error::AlreadyDeployed);
    }
    match train.dtype() {
        Some(DType::F64) => Network::<f64>::from_store(def, train)?.reparameterize()?.to_store(),
        Some(DType::F32) => Network::<f32>::from_store(def, train)?.reparameterize()?.to_store(),
        None => Err(Error::Malformed("checkpoint mixes f32 and f64 tensors".into())),
    }
}
