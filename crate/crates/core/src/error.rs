use thiserror::Error;

use crate::scheme::SchemeKind;

/// Errors raised by the core quantization, QMM, and simulation routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("unsupported bitwidth {0}: only 4-bit power-of-two weights are supported")]
    UnsupportedBitwidth(u8),
    #[error("unknown scheme `{0}` (valid schemes: qkeras, msq, apot)")]
    UnknownScheme(alloc::string::String),
    #[error("scale group {group} is entirely zero; weight scale is undefined")]
    AllZeroGroup { group: usize },
    #[error("non-finite weight at index {index}")]
    NonFinite { index: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(alloc::string::String),
    #[error("value {value} at index {index} is out of range for a {kind} tensor")]
    OutOfRange {
        index: usize,
        value: i64,
        kind: &'static str,
    },
    #[error("int8 weight {value} in scale group {group} is not within 1 of any {scheme} level")]
    NotAPoTWeight {
        group: usize,
        value: i32,
        scheme: SchemeKind,
    },
    #[error("pot_int value {value} is not a {scheme} level")]
    NotALevel { value: i32, scheme: SchemeKind },
    #[error("invalid 4-bit weight code {0:#x}")]
    InvalidCode(u8),
    #[error("32-bit accumulator overflow")]
    AccumulatorOverflow,
    #[error("layer `{name}`: {reason}")]
    UnsupportedLayer {
        name: alloc::string::String,
        reason: alloc::string::String,
    },
    #[error(
        "layer `{0}` holds int8 weights; the shift engine needs preprocessed (pot_int_e) weights"
    )]
    StageMismatch(alloc::string::String),
    #[error("layer `{layer}` expects activation quantization ({expected}) but the previous layer produces ({found})")]
    QuantChainMismatch {
        layer: alloc::string::String,
        expected: alloc::string::String,
        found: alloc::string::String,
    },
    #[error("invalid quantization parameters: {0}")]
    InvalidParams(alloc::string::String),
    #[error("invalid accelerator config: {0}")]
    ConfigInvalid(alloc::string::String),
    #[error("layer `{0}` is not offloaded and has no CPU time")]
    MissingCpuTime(alloc::string::String),
    #[error("power must satisfy p_inference >= p_idle >= 0 (got {inference} W, {idle} W)")]
    NegativePower { inference: f64, idle: f64 },
    #[error("image count must be at least 1")]
    NoImages,
}

pub type Result<T, E = Error> = core::result::Result<T, E>;
