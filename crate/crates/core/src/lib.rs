//! Explainers, faithfulness metrics and attention-alignment diagnostics for
//! heterogeneous graph neural networks that aggregate meta-path views with
//! semantic attention.

pub mod diagnostics;
pub mod error;
pub mod explainers;
pub mod faithfulness;
pub mod rng;
pub mod stats;
pub mod hetgraph;
pub mod io;
pub mod metrics;
pub mod predictors;
pub mod tensor;

pub use error::{Error, Result};
