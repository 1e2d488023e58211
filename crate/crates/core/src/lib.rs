//! UNIK skeleton action recognition: autograd tensors, skeleton data pipeline,
//! spatial and temporal units, the full network, and training workflows.

pub mod data;
pub mod error;
pub mod kv;
pub mod layers;
pub mod net;
pub mod slsu;
pub mod tensor;
pub mod tlsu;
pub mod train;

pub use error::{Error, Result};
pub use net::{NetworkConfig, Unik};
pub use tensor::{Graph, ParamStore, Tensor, Var};
