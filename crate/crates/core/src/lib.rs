//! Balanced classifier learning for long-tailed recognition.
//!
//! The pieces are usable on their own: losses with hand-derived gradients
//! ([`losses`]), long-term indicators ([`indicators`]), feature hallucination
//! ([`fhm`]), a small tanh extractor with a linear head ([`classifier`]) and the
//! two-stage pipeline that ties them together ([`trainer`]) on a synthetic
//! power-law task ([`datagen`]).

pub mod classifier;
pub mod cli;
pub mod config;
pub mod datagen;
pub mod error;
pub mod experiment;
pub mod fhm;
pub mod indicators;
pub mod losses;
pub mod metrics;
pub mod params;
pub mod rng;
pub mod trainer;
pub mod types;

pub use error::{Error, Result};
pub use params::{validate_params, HyperParams, IndicatorKind, LrSchedule};
pub use types::{BBox, Label, Logits};
