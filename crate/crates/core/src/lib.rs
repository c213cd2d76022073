//! Hierarchical variable selection for wide, tree-structured panel data.

pub mod bench;
pub mod error;
pub mod hvs;
pub mod ingest;
pub mod model;
pub mod preprocess;
pub mod regress;
pub mod report;
pub mod synth;
pub mod validation;

pub use error::{HvsError, Result};
