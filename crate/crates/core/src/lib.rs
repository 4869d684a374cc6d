//! Multimodal wristband signal processing and social-context analysis.

pub mod bench;
pub mod cluster;
pub mod dsp;
pub mod eda;
pub mod features;
pub mod hrv;
pub mod ingest;
pub mod learn;
pub mod numeric;
pub mod pipeline;
pub mod run;
pub mod stats;
pub mod synth;
