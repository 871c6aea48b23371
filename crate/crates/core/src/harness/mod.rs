//! End-to-end runner: synthetic videos, mock predictors, pipeline
//! composition and batch evaluation.

pub mod config;
pub mod pipeline;
pub mod predictor;
pub mod suite;
pub mod synthetic;

pub use config::{PipelineConfig, RunConfig};
pub use pipeline::{run_pipeline, MockQFormer, PipelineOutput, StageTimings};
pub use predictor::{Corruption, MockPredictor, MomentPredictor, PredictorInput, PredictorKind, PredictorSpec};
pub use suite::{run_suite, run_suite_with, simulate, write_synthetic_dataset, SuiteResult};
pub use synthetic::{generate_synthetic, Segment, SyntheticSpec, VideoProfile};
