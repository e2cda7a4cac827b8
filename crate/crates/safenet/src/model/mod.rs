//! Network assembly: temporal convolution blocks, the feature
//! decomposition cascade, output heads with their losses, the complete
//! model, and its checkpoint format.

pub mod checkpoint;
pub mod heads;
pub mod net;
pub mod safd;
pub mod tcn;

pub use checkpoint::{
    checkpoint_bytes, load_checkpoint, read_config, save_checkpoint, write_checkpoint,
};
pub use heads::{heads, loss_ce, loss_mse, loss_orth, loss_total, HeadWeights};
pub use net::{EncoderLayer, LossTerms, ModelOutput, SAFENetConfig, SafeNet};
pub use safd::{
    safd_decompose, weight_module, DecompositionOutput, SAFDConfig, SafdWeights,
};
pub use tcn::{tcn_forward, TCNConfig, TcnBlockWeights, TcnWeights};
