//! File formats, experiment configuration, and the pipeline runner for
//! the sim-to-real segmentation toolkit. All algorithmic work lives in
//! `sim2real-core`; this crate adds IO (PNG datasets, JSON records and
//! checkpoints, TOML configs, CSV summaries) and orchestration.

pub mod checkpoint;
pub mod config;
pub mod manifest_io;
pub mod pipeline;
pub mod synth;
