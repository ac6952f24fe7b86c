//! Programmatic labeling: generate label functions from a small seed set,
//! calibrate and filter them, aggregate their votes into probabilistic
//! labels, and train a downstream classifier on the result.
//!
//! ```no_run
//! use labelcraft::{config::PipelineConfig, pipeline, synth};
//!
//! let dataset = synth::separable_corpus(0)?;
//! let config = PipelineConfig::default().with_k(5);
//! let result = pipeline::run_pipeline(&dataset, &config, Default::default())
//!     .map_err(|e| e.error)?;
//! println!("{:?}", result.labeling);
//! # Ok::<(), labelcraft::Error>(())
//! ```

pub mod candidate;
pub mod config;
pub mod corpus;
pub mod downstream;
pub mod error;
pub mod exploitation;
pub mod features;
pub mod label_model;
pub mod lf;
pub mod metrics;
pub mod pipeline;
pub mod surface;
pub mod synth;

pub use error::{Error, Result};
