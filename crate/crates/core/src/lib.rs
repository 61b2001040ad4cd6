//! Confidence-weighted video-text contrastive alignment at desk scale:
//! LoRA-adapted toy encoders, temporal attention pooling, masked-token
//! caption confidence, a weighted bidirectional InfoNCE objective, a clip
//! curation pipeline, and zero-shot / linear-probe evaluation.

pub mod adapters;
pub mod alignment;
pub mod checkpoint;
pub mod confidence;
pub mod config;
pub mod datapipe;
pub mod dataset;
pub mod error;
pub mod evalkit;
pub mod numerics;
pub mod pooling;
pub mod registry;
pub mod runs;
pub mod synth;

pub use error::{Error, Result};
