//! Ear biometric verification: preprocessing, embedding, feature fusion,
//! t-SNE projection and longitudinal evaluation.

pub mod dataset;
pub mod embed;
pub mod error;
pub mod eval;
pub mod fuse;
pub mod pipeline;
pub mod preprocess;
pub mod project;
pub mod report;

pub use dataset::{ImageRecord, Manifest};
pub use embed::{BackendSpec, EmbeddingStore, EmbeddingVector};
pub use error::{Error, Result};
pub use eval::{EvalReport, Protocol, ScoreSet, Threshold, Trial};
pub use fuse::{FusedVector, SelectorConfig, SelectorMethod};
pub use pipeline::{run_pipeline, PipelineConfig, ProtocolSelection};
pub use preprocess::{ClaheParams, EarImage};
pub use project::TsneParams;
pub use report::RunReport;
