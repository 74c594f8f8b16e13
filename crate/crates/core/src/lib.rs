//! Multilevel training of weighted RBF support vector machines for large,
//! imbalanced binary problems.
//!
//! Each class is coarsened independently into a hierarchy of smaller
//! proximity graphs. A model is fitted at the coarsest level and then
//! refined level by level on the neighborhoods of its support vectors, with
//! a recovery step when validation quality drops sharply.

pub mod cli;
pub mod coarsening;
pub mod data_io;
pub mod error;
pub mod knn_graph;
pub mod model_eval;
pub mod param_fit;
pub mod points;
pub mod recovery;
pub mod refinement;
pub mod svm;

pub use coarsening::{build_hierarchy, ClassLevel, CoarseningConfig, LevelHierarchy};
pub use data_io::{LabeledDataset, NEGATIVE, POSITIVE};
pub use error::{Error, Result};
pub use model_eval::QualityMetrics;
pub use param_fit::NudConfig;
pub use points::Points;
pub use refinement::{run_pipeline, PipelineConfig, PipelineOutcome, RefinementConfig};
pub use svm::{SolverConfig, SvmModel, SvmParams};
