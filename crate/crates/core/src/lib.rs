pub mod concept_model;
pub mod defaults;
pub mod embedding;
pub mod error;
pub mod faithfulness_bench;
pub mod io;
pub mod model;
pub mod numerics;
pub mod pipeline;
pub mod segment_ingest;
pub mod subspace_clustering;
pub mod synthetic;
pub mod tensor;

pub use error::{Error, Result};
