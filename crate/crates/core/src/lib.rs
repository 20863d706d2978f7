//! Tabular data augmentation with adversarial random forests.

pub mod arf;
pub mod cohort;
pub mod csv_io;
pub mod error;
pub mod evaluation;
pub mod experiment;
pub mod forest;
pub mod impute;
pub mod learners;
pub mod prediction;
pub mod seed;
pub mod table;

pub use error::{Error, Result};
pub use prediction::PredictionMatrix;
pub use table::{stack, union_schema, Cell, ColumnSummary, Feature, FeatureKind, Schema, Table};
