//! Quantized matrix multiplication: a multiply-based reference engine and a
//! shift-based engine that runs every dot product through the shift PEs.
//!
//! Both engines compute, per output pixel `p` and filter `f`,
//!
//! ```text
//! acc   = sum_d W[f,d] * A[p,d] + (q_b[f] - Z_A * sum_d W[f,d])
//! q_o   = clamp(round_half_even(M_f * acc) + Z_o, -128, 127),  M_f = S_W[f] S_A / S_o
//! ```
//!
//! and share one requantizer, so they agree bit for bit whenever the integer
//! accumulators agree.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::code::PotCode;
use crate::error::{Error, Result};
use crate::pe;
use crate::prep::PackedWeightTensor;
use crate::quant::{IntTensor, QuantParams, TensorKind};
use crate::round::half_even;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Padding {
    Same,
    Valid,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LayerKind {
    Conv2d {
        kernel: [usize; 2],
        stride: [usize; 2],
        padding: Padding,
    },
    FullyConnected,
}

/// Shapes of a conv (NHWC input, OHWI weights) or FC (NK input, FK weights) layer.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Geometry {
    pub kind: LayerKind,
    pub input_shape: Vec<usize>,
    pub filters: usize,
}

fn out_dim(input: usize, kernel: usize, stride: usize, padding: Padding) -> usize {
    match padding {
        Padding::Same => input.div_ceil(stride),
        Padding::Valid => {
            if input < kernel {
                0
            } else {
                (input - kernel) / stride + 1
            }
        }
    }
}

fn pad_before(input: usize, out: usize, kernel: usize, stride: usize, padding: Padding) -> usize {
    match padding {
        Padding::Valid => 0,
        Padding::Same => ((out.saturating_sub(1)) * stride + kernel).saturating_sub(input) / 2,
    }
}

impl Geometry {
    pub fn conv2d(
        input_nhwc: [usize; 4],
        filters: usize,
        kernel: [usize; 2],
        stride: [usize; 2],
        padding: Padding,
    ) -> Self {
        Geometry {
            kind: LayerKind::Conv2d {
                kernel,
                stride,
                padding,
            },
            input_shape: input_nhwc.to_vec(),
            filters,
        }
    }

    pub fn fully_connected(batch: usize, inputs: usize, filters: usize) -> Self {
        Geometry {
            kind: LayerKind::FullyConnected,
            input_shape: vec![batch, inputs],
            filters,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::ShapeMismatch(m));
        if self.filters == 0 {
            return bad("layer has no filters".into());
        }
        match self.kind {
            LayerKind::Conv2d { kernel, stride, .. } => {
                if self.input_shape.len() != 4 {
                    return bad(format!(
                        "conv input must be NHWC, got {:?}",
                        self.input_shape
                    ));
                }
                if kernel.contains(&0) || stride.contains(&0) {
                    return bad("kernel and stride must be positive".into());
                }
                if self.input_shape.contains(&0) {
                    return bad(format!("empty conv input {:?}", self.input_shape));
                }
                let [_, oh, ow, _] = self.output_shape_conv();
                if oh == 0 || ow == 0 {
                    return bad("kernel larger than input under valid padding".into());
                }
            }
            LayerKind::FullyConnected => {
                if self.input_shape.len() != 2 || self.input_shape.contains(&0) {
                    return bad(format!(
                        "FC input must be (N, K), got {:?}",
                        self.input_shape
                    ));
                }
            }
        }
        Ok(())
    }

    fn output_shape_conv(&self) -> [usize; 4] {
        match self.kind {
            LayerKind::Conv2d {
                kernel,
                stride,
                padding,
            } => {
                let s = &self.input_shape;
                [
                    s[0],
                    out_dim(s[1], kernel[0], stride[0], padding),
                    out_dim(s[2], kernel[1], stride[1], padding),
                    self.filters,
                ]
            }
            LayerKind::FullyConnected => unreachable!(),
        }
    }

    pub fn output_shape(&self) -> Vec<usize> {
        match self.kind {
            LayerKind::Conv2d { .. } => self.output_shape_conv().to_vec(),
            LayerKind::FullyConnected => vec![self.input_shape[0], self.filters],
        }
    }

    /// Weight tensor shape: OHWI for conv, (F, K) for FC.
    pub fn weight_shape(&self) -> Vec<usize> {
        match self.kind {
            LayerKind::Conv2d { kernel, .. } => {
                vec![self.filters, kernel[0], kernel[1], self.input_shape[3]]
            }
            LayerKind::FullyConnected => vec![self.filters, self.input_shape[1]],
        }
    }

    /// Dot-product length after lowering to MM.
    pub fn depth(&self) -> usize {
        match self.kind {
            LayerKind::Conv2d { kernel, .. } => kernel[0] * kernel[1] * self.input_shape[3],
            LayerKind::FullyConnected => self.input_shape[1],
        }
    }

    /// Rows of the lowered activation matrix (output pixels, or batch for FC).
    pub fn pixels(&self) -> usize {
        let o = self.output_shape();
        o[..o.len() - 1].iter().product()
    }

    pub fn is_conv(&self) -> bool {
        matches!(self.kind, LayerKind::Conv2d { .. })
    }
}

/// Lower an NHWC activation tensor to a `(pixels, kh*kw*C)` matrix.
///
/// Patch elements are ordered `(ky, kx, c)` to match OHWI weight rows.
/// Padding positions hold `zero_point`, so `q_A - Z_A` vanishes there.
pub fn im2col(acts: &IntTensor, geom: &Geometry, zero_point: i32) -> Result<IntTensor> {
    geom.validate()?;
    let LayerKind::Conv2d {
        kernel,
        stride,
        padding,
    } = geom.kind
    else {
        return Err(Error::ShapeMismatch("im2col needs a conv layer".into()));
    };
    if acts.shape() != geom.input_shape.as_slice() {
        return Err(Error::ShapeMismatch(format!(
            "activations {:?} do not match layer input {:?}",
            acts.shape(),
            geom.input_shape
        )));
    }
    let [n, h, w, c] = [
        geom.input_shape[0],
        geom.input_shape[1],
        geom.input_shape[2],
        geom.input_shape[3],
    ];
    let [_, oh, ow, _] = geom.output_shape_conv();
    let pt = pad_before(h, oh, kernel[0], stride[0], padding);
    let pl = pad_before(w, ow, kernel[1], stride[1], padding);
    let depth = geom.depth();
    let data = acts.data();
    let mut out = Vec::with_capacity(n * oh * ow * depth);
    for b in 0..n {
        for oy in 0..oh {
            for ox in 0..ow {
                for ky in 0..kernel[0] {
                    let iy = (oy * stride[0] + ky) as isize - pt as isize;
                    for kx in 0..kernel[1] {
                        let ix = (ox * stride[1] + kx) as isize - pl as isize;
                        if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                            out.extend(core::iter::repeat_n(zero_point, c));
                        } else {
                            let base = ((b * h + iy as usize) * w + ix as usize) * c;
                            out.extend_from_slice(&data[base..base + c]);
                        }
                    }
                }
            }
        }
    }
    IntTensor::new(vec![n * oh * ow, depth], out, acts.kind())
}

/// Per-filter requantization shared by both engines.
#[derive(Clone, Debug, PartialEq)]
pub struct Requantizer {
    multipliers: Vec<f64>,
    out_zero_point: i32,
}

impl Requantizer {
    pub fn new(params: &QuantParams, filters: usize) -> Result<Self> {
        params.check_filters(filters)?;
        Ok(Requantizer {
            multipliers: (0..filters).map(|f| params.multiplier(f)).collect(),
            out_zero_point: params.output().zero_point,
        })
    }

    pub fn multiplier(&self, filter: usize) -> f64 {
        self.multipliers[filter]
    }

    pub fn requantize(&self, acc: i32, filter: usize) -> i32 {
        let scaled = half_even(self.multipliers[filter] * acc as f64);
        (scaled + self.out_zero_point as f64).clamp(-128.0, 127.0) as i32
    }
}

fn check_operands(filters: usize, depth: usize, acts: &IntTensor, bias: &[i32]) -> Result<usize> {
    if acts.shape().len() != 2 || acts.shape()[1] != depth {
        return Err(Error::ShapeMismatch(format!(
            "activation matrix {:?} does not have depth {}",
            acts.shape(),
            depth
        )));
    }
    if bias.len() != filters {
        return Err(Error::ShapeMismatch(format!(
            "{} bias values for {} filters",
            bias.len(),
            filters
        )));
    }
    Ok(acts.shape()[0])
}

/// `q_b - Z_A * sum_d W[f,d]` per filter.
fn offsets(row_sums: &[i64], bias: &[i32], zero_point: i32) -> Result<Vec<i32>> {
    row_sums
        .iter()
        .zip(bias)
        .map(|(&s, &b)| {
            i32::try_from(b as i64 - zero_point as i64 * s).map_err(|_| Error::AccumulatorOverflow)
        })
        .collect()
}

fn finish(
    acc_core: impl Fn(usize, usize) -> Result<i32>,
    pixels: usize,
    filters: usize,
    offsets: &[i32],
    rq: &Requantizer,
) -> Result<IntTensor> {
    let mut out = Vec::with_capacity(pixels * filters);
    for p in 0..pixels {
        for (f, &off) in offsets.iter().enumerate().take(filters) {
            let acc = acc_core(p, f)?
                .checked_add(off)
                .ok_or(Error::AccumulatorOverflow)?;
            out.push(rq.requantize(acc, f));
        }
    }
    IntTensor::new(vec![pixels, filters], out, TensorKind::Output)
}

/// Multiply-based QMM. `weights` is `(F, D)` (int8 or pot_int), `acts` is
/// `(P, D)`, the result is `(P, F)`.
pub fn qmm_mult(
    weights: &IntTensor,
    acts: &IntTensor,
    params: &QuantParams,
    bias: &[i32],
) -> Result<IntTensor> {
    let (filters, depth) = matrix_dims(weights.shape())?;
    let pixels = check_operands(filters, depth, acts, bias)?;
    let rq = Requantizer::new(params, filters)?;
    let w = weights.data();
    let a = acts.data();
    let row_sums: Vec<i64> = w
        .chunks(depth.max(1))
        .take(filters)
        .map(|r| r.iter().map(|&v| v as i64).sum())
        .collect();
    let offs = offsets(&row_sums, bias, params.activation().zero_point)?;
    let core = |p: usize, f: usize| {
        let wr = &w[f * depth..(f + 1) * depth];
        let ar = &a[p * depth..(p + 1) * depth];
        wr.iter().zip(ar).try_fold(0i32, |acc, (&x, &y)| {
            acc.checked_add(x * y).ok_or(Error::AccumulatorOverflow)
        })
    };
    finish(core, pixels, filters, &offs, &rq)
}

/// Shift-based QMM over packed 4-bit weights. Every dot product goes through
/// the 64-lane shift PEs; `params` must carry the corrected scales.
pub fn qmm_shift(
    packed: &PackedWeightTensor,
    acts: &IntTensor,
    params: &QuantParams,
    bias: &[i32],
) -> Result<IntTensor> {
    let (filters, depth) = matrix_dims(packed.shape())?;
    let pixels = check_operands(filters, depth, acts, bias)?;
    let rq = Requantizer::new(params, filters)?;
    let scheme = packed.scheme();
    let codes: Vec<PotCode> = packed.codes();
    let a: Vec<i8> = acts.data().iter().map(|&v| v as i8).collect();
    let row_sums: Vec<i64> = codes
        .chunks(depth.max(1))
        .take(filters)
        .map(|r| r.iter().map(|c| c.pot_int(scheme) as i64).sum())
        .collect();
    let offs = offsets(&row_sums, bias, params.activation().zero_point)?;
    let core = |p: usize, f: usize| {
        pe::dot(
            &codes[f * depth..(f + 1) * depth],
            &a[p * depth..(p + 1) * depth],
            scheme,
        )
    };
    finish(core, pixels, filters, &offs, &rq)
}

/// Weight shape collapsed to `(filters, depth)`.
fn matrix_dims(shape: &[usize]) -> Result<(usize, usize)> {
    match shape.split_first() {
        Some((&f, rest)) if f > 0 => Ok((f, rest.iter().product())),
        _ => Err(Error::ShapeMismatch(format!("bad weight shape {shape:?}"))),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum LayerWeights {
    /// Model-conversion stage: symmetric int8.
    Int8(IntTensor),
    /// Preprocessed stage: packed 4-bit codes.
    Packed(PackedWeightTensor),
}

/// A conv or FC layer ready to execute.
#[derive(Clone, Debug, PartialEq)]
pub struct QuantLayer {
    pub name: String,
    pub geometry: Geometry,
    pub params: QuantParams,
    pub weights: LayerWeights,
    pub bias: Vec<i32>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Engine {
    Mult,
    Shift,
}

impl QuantLayer {
    pub fn validate(&self) -> Result<()> {
        self.geometry.validate()?;
        let expected = self.geometry.weight_shape();
        let shape = match &self.weights {
            LayerWeights::Int8(t) => t.shape(),
            LayerWeights::Packed(p) => p.shape(),
        };
        if shape != expected.as_slice() {
            return Err(Error::ShapeMismatch(format!(
                "layer `{}`: weights {:?}, expected {:?}",
                self.name, shape, expected
            )));
        }
        self.params.check_filters(self.geometry.filters)?;
        if self.bias.len() != self.geometry.filters {
            return Err(Error::ShapeMismatch(format!(
                "layer `{}`: {} bias values for {} filters",
                self.name,
                self.bias.len(),
                self.geometry.filters
            )));
        }
        Ok(())
    }

    /// Lowered activation matrix for this layer.
    pub fn lower(&self, input: &IntTensor) -> Result<IntTensor> {
        if self.geometry.is_conv() {
            im2col(input, &self.geometry, self.params.activation().zero_point)
        } else if input.shape() == self.geometry.input_shape.as_slice() {
            Ok(input.clone())
        } else {
            Err(Error::ShapeMismatch(format!(
                "layer `{}`: input {:?}, expected {:?}",
                self.name,
                input.shape(),
                self.geometry.input_shape
            )))
        }
    }

    /// QMM on an already-lowered activation matrix.
    pub fn run_lowered(&self, lowered: &IntTensor, engine: Engine) -> Result<IntTensor> {
        let flat = |t: &IntTensor| {
            let (f, d) = matrix_dims(t.shape())?;
            t.clone().reshaped(vec![f, d])
        };
        match (&self.weights, engine) {
            (LayerWeights::Int8(w), Engine::Mult) => {
                qmm_mult(&flat(w)?, lowered, &self.params, &self.bias)
            }
            (LayerWeights::Packed(p), Engine::Mult) => {
                qmm_mult(&flat(&p.pot_int())?, lowered, &self.params, &self.bias)
            }
            (LayerWeights::Packed(p), Engine::Shift) => {
                qmm_shift(p, lowered, &self.params, &self.bias)
            }
            (LayerWeights::Int8(_), Engine::Shift) => Err(Error::StageMismatch(self.name.clone())),
        }
    }

    /// Run the layer on an NHWC (conv) or NK (FC) input.
    pub fn run(&self, input: &IntTensor, engine: Engine) -> Result<IntTensor> {
        self.validate()?;
        let lowered = self.lower(input)?;
        self.run_lowered(&lowered, engine)?
            .reshaped(self.geometry.output_shape())
    }
}

/// Execute a linear chain of layers. An empty chain returns the input.
///
/// Between a conv and an FC layer the NHWC output is flattened to `(N, HWC)`.
/// Each layer's activation quantization must equal the previous layer's
/// output quantization.
pub fn run_model(layers: &[QuantLayer], input: &IntTensor, engine: Engine) -> Result<IntTensor> {
    let mut x = input.clone();
    let mut prev: Option<&QuantLayer> = None;
    for layer in layers {
        if let Some(p) = prev {
            let (out, act) = (p.params.output(), layer.params.activation());
            if out != act {
                return Err(Error::QuantChainMismatch {
                    layer: layer.name.clone(),
                    expected: format!("scale {}, zero point {}", act.scale, act.zero_point),
                    found: format!("scale {}, zero point {}", out.scale, out.zero_point),
                });
            }
        }
        if !layer.geometry.is_conv() && x.shape().len() == 4 {
            let n = x.shape()[0];
            let rest = x.len() / n.max(1);
            x = x.reshaped(vec![n, rest])?;
        }
        x = layer.run(&x, engine)?.with_kind(TensorKind::Activation)?;
        prev = Some(layer);
    }
    if layers.is_empty() {
        Ok(x)
    } else {
        x.with_kind(TensorKind::Output)
    }
}
