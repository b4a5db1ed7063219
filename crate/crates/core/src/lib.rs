//! Power-of-two weight quantization and shift-based quantized inference.
//!
//! The crate covers the full integer path: level tables for the QKeras, MSQ
//! and APoT 4-bit schemes, int8 quantization, conversion of int8 weights to
//! packed 4-bit shift codes, a bit-accurate shift-PE model, multiply- and
//! shift-based QMM engines, and an analytic accelerator performance model.
//!
//! `no_std` with `alloc`.

#![no_std]

extern crate alloc;

pub mod code;
pub mod dyadic;
pub mod error;
pub mod levels;
pub mod pe;
pub mod prep;
pub mod qmm;
pub mod quant;
pub mod round;
pub mod scheme;
pub mod sim;

pub use code::{decompose, encode, PotCode};
pub use dyadic::Dyadic;
pub use error::{Error, Result};
pub use levels::{generate_levels, Level, QuantLevelSet};
pub use pe::{pe_multiply, sweep_all, PeOutput, ShiftPeConfig, SweepStats};
pub use prep::{
    pack, preprocess, scale_correct, unpack, Correction, PackedWeightTensor, PrepOptions,
    PreparedWeights,
};
pub use qmm::{
    im2col, qmm_mult, qmm_shift, run_model, Engine, Geometry, LayerKind, LayerWeights, Padding,
    QuantLayer, Requantizer,
};
pub use quant::{
    quantize_bias, quantize_weights, AffineQuant, Granularity, IntTensor, QuantParams, TensorKind,
};
pub use scheme::{PotScheme, SchemeKind};
pub use sim::{energy, simulate_layer, simulate_model, sweep, AccelConfig, SimLayer, SimReport};
