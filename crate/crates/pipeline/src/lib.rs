//! Inference, training and evaluation built on the core raster library and
//! the network crate.

pub mod error;
pub mod eval;
pub mod input;
pub mod segment;
pub mod train;

pub use error::{PipelineError, Result};
pub use eval::{evaluate, evaluate_dir, GuideMode};
pub use input::network_input;
pub use segment::Segmenter;
pub use train::{train, train_on, EpochLog, TrainConfig, Trainer};
