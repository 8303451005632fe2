//! Schema-typed ingestion, encoding, stratified splitting and synthetic
//! stand-in tables.

mod dataset;
mod encode;
mod schema;
mod split;
mod synth;

pub use dataset::{class_counts, ingest_csv, ingest_reader, IngestReport, TabularDataset};
pub use encode::{
    encode, fit_stats, Block, ContinuousStats, EncodedMatrix, FeatureLayout, ModelInput, TokenSource,
    TrainStats,
};
pub use schema::{ColumnKind, ColumnSpec, Schema, CLASS_NAMES, EXCLUDED, N_CLASSES, UNKNOWN};
pub use split::{stratified_split, SplitIndices, MIN_CLASS_ROWS};
pub use synth::{CategoricalFeature, ContinuousFeature, Gaussian, SyntheticSpec};
