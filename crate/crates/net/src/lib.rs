//! Tensor engine, reverse-mode differentiation and the NuClick
//! encoder-decoder.

pub mod arch;
pub mod checkpoint;
pub mod error;
pub mod float;
pub mod kernels;
pub mod loss;
pub mod optim;
pub mod tape;
pub mod tensor;

pub use arch::{Forward, Mode, Network, NetworkConfig};
pub use error::{CheckpointError, NetError, Result};
pub use float::Float;
pub use loss::{batch_loss, loss, weight_map, LossOptions, LossValue, WeightMap};
pub use optim::{Adam, AdamConfig};
pub use tape::{Tape, Var};
pub use tensor::Tensor;
