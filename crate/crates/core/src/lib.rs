//! Toolkit for hyper-relational knowledge graphs: ingestion, decomposition
//! into plain triples, Balanced Forman curvature analysis, and desk-scale
//! embedding models trained and evaluated under filtered link prediction.

pub mod checkpoint;
pub mod decompose;
pub mod error;
pub mod evaluation;
pub mod ingest;
pub mod model;
pub mod models;
pub mod par;
pub mod synthetic;
pub mod tensor;
pub mod task;
pub mod topology;
pub mod training;

pub use error::{HkgError, Result};
