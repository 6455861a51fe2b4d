//! Group-invariant representation learning by observational grouping.
//!
//! A feature extractor `φ` maps observations into the unit cube and a linear
//! head `ψ` classifies from it. Training pairs samples of the same class drawn
//! from different groups and pulls their representations together while a
//! pairwise kernel term keeps them spread out. The evaluation side measures
//! identifiability (MCC), class separation along PC1, and how much group
//! information survives in the representation.

pub mod cli;
pub mod data;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod plot;
pub mod sampler;
pub mod train;

pub use error::{Error, Result};
