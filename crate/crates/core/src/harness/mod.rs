//! Experiment harness: clip ingestion, synthetic clips, and the measured pipeline.

pub mod ingest;
pub mod pipeline;
pub mod synth;

pub use ingest::{ingest, ingest_raw, ingest_y4m, write_y4m, Clip, IngestError};
pub use pipeline::{report, run_grid, run_on_clip, run_pipeline, ClipSource, ExperimentConfig, GridRow, MetricsRow, PipelineError, PipelineRun, Summary};
pub use synth::{synth, synth_clip, ClipKind, SynthSpec};
