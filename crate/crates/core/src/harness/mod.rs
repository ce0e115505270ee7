//! Cross-validation, synthetic data, metrics and end-to-end runs.

pub mod folds;
pub mod metrics;
pub mod pipeline;
pub mod stages;
pub mod synth;

pub use folds::{make_folds, CvProtocol, Fold};
pub use metrics::{evaluate, report_from, EvalReport, Prediction};
pub use pipeline::{run_on_raw, run_pipeline, PipelineConfig, RunReport, UmmScope, Variant, VariantReport};
pub use synth::{gen_synthetic, mean_frame_centroid_accuracy, write_dataset, SyntheticSpec};
