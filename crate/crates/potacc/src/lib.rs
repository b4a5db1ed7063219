//! File formats, synthetic models and command implementations for `potacc`.

pub mod cli;
pub mod config;
pub mod convert;
pub mod model;
pub mod synth;
