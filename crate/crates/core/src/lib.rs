//! Raster primitives and the non-learned half of the NuClick pipeline.
//!
//! Everything here is a pure function of its inputs: morphology used to build
//! guiding signals and clean predictions, the signal synthesizers themselves,
//! patch geometry, instance assembly, evaluation metrics and a seeded
//! synthetic dataset generator.

pub mod error;
pub mod grid;
pub mod io;
pub mod metrics;
pub mod morph;
pub mod postproc;
pub mod signals;
pub mod synth;

pub use error::{Error, Result};
pub use grid::{BinaryMask, DistanceMap, Grid, LabelMap, Point, PredictionMap};
