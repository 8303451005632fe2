//! Tabular deep learning for crash automation-level classification.
//!
//! The crate covers the whole pipeline: schema-typed ingestion and encoding
//! ([`data`]), SMOTE + edited-nearest-neighbour resampling ([`resample`]),
//! three classifier families built on a small reverse-mode tensor engine
//! ([`tensor`], [`models`]), optimisation and evaluation ([`train`]), figure
//! export ([`report`]) and the orchestration used by the CLI ([`pipeline`]).

pub mod error;
pub mod models;
pub mod data;
pub mod report;
pub mod pipeline;
pub mod resample;
pub mod seed;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
