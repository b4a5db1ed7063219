//! Symmetric int8 weight quantization and the scale bookkeeping of QMM.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::round::half_away;

/// What an [`IntTensor`] holds; fixes its element width and legal range.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum TensorKind {
    Activation,
    WeightInt8,
    /// Integer PoT levels (|v| <= 128, QKeras reaches 128).
    PotInt,
    BiasInt32,
    Accumulator,
    Output,
}

impl TensorKind {
    pub fn element_bits(self) -> u8 {
        match self {
            TensorKind::Activation | TensorKind::WeightInt8 | TensorKind::Output => 8,
            TensorKind::PotInt => 9,
            TensorKind::BiasInt32 | TensorKind::Accumulator => 32,
        }
    }

    pub fn range(self) -> (i64, i64) {
        match self {
            TensorKind::Activation | TensorKind::Output => (-128, 127),
            TensorKind::WeightInt8 => (-127, 127),
            TensorKind::PotInt => (-128, 128),
            TensorKind::BiasInt32 | TensorKind::Accumulator => (i32::MIN as i64, i32::MAX as i64),
        }
    }

    fn name(self) -> &'static str {
        match self {
            TensorKind::Activation => "activation",
            TensorKind::WeightInt8 => "int8 weight",
            TensorKind::PotInt => "pot_int weight",
            TensorKind::BiasInt32 => "int32 bias",
            TensorKind::Accumulator => "accumulator",
            TensorKind::Output => "output",
        }
    }
}

/// Row-major signed integer tensor.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IntTensor {
    shape: Vec<usize>,
    data: Vec<i32>,
    kind: TensorKind,
}

impl IntTensor {
    pub fn new(shape: Vec<usize>, data: Vec<i32>, kind: TensorKind) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::ShapeMismatch(format!(
                "shape {:?} holds {} elements, got {}",
                shape,
                n,
                data.len()
            )));
        }
        let (lo, hi) = kind.range();
        if let Some((index, &v)) = data
            .iter()
            .enumerate()
            .find(|(_, &v)| (v as i64) < lo || (v as i64) > hi)
        {
            return Err(Error::OutOfRange {
                index,
                value: v as i64,
                kind: kind.name(),
            });
        }
        Ok(IntTensor { shape, data, kind })
    }

    pub fn from_i8(shape: Vec<usize>, data: &[i8], kind: TensorKind) -> Result<Self> {
        Self::new(shape, data.iter().map(|&v| v as i32).collect(), kind)
    }

    pub fn zeros(shape: Vec<usize>, kind: TensorKind) -> Self {
        let n = shape.iter().product();
        IntTensor {
            shape,
            data: vec![0; n],
            kind,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[i32] {
        &self.data
    }

    pub fn kind(&self) -> TensorKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn into_data(self) -> Vec<i32> {
        self.data
    }

    /// Same elements under a new shape with equal element count.
    pub fn reshaped(mut self, shape: Vec<usize>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::ShapeMismatch(format!(
                "cannot reshape {:?} to {:?}",
                self.shape, shape
            )));
        }
        self.shape = shape;
        Ok(self)
    }

    /// Elements narrowed to i8. Only valid for 8-bit kinds.
    pub fn to_i8(&self) -> Vec<i8> {
        debug_assert_eq!(self.kind.element_bits(), 8);
        self.data.iter().map(|&v| v as i8).collect()
    }

    pub fn with_kind(self, kind: TensorKind) -> Result<Self> {
        IntTensor::new(self.shape, self.data, kind)
    }
}

/// Scale and zero point of an asymmetric int8 tensor: `r = scale * (q - zero_point)`.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AffineQuant {
    pub scale: f64,
    pub zero_point: i32,
}

impl AffineQuant {
    pub fn new(scale: f64, zero_point: i32) -> Result<Self> {
        let q = AffineQuant { scale, zero_point };
        q.validate()?;
        Ok(q)
    }

    fn validate(&self) -> Result<()> {
        if !(self.scale.is_finite() && self.scale > 0.0) {
            return Err(Error::InvalidParams(format!(
                "scale {} must be > 0",
                self.scale
            )));
        }
        if !(-128..=127).contains(&self.zero_point) {
            return Err(Error::InvalidParams(format!(
                "zero point {} outside [-128, 127]",
                self.zero_point
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Granularity {
    PerFilter,
    PerLayer,
}

/// Quantization parameters of one conv/FC layer.
///
/// Weights are symmetric (zero point 0) and the bias scale is always
/// `weight_scale * activation_scale`, so it is derived rather than stored.
#[derive(Clone, Debug, PartialEq)]
pub struct QuantParams {
    weight_scales: Vec<f64>,
    activation: AffineQuant,
    output: AffineQuant,
}

impl QuantParams {
    pub fn new(
        weight_scales: Vec<f64>,
        activation: AffineQuant,
        output: AffineQuant,
    ) -> Result<Self> {
        if weight_scales.is_empty() {
            return Err(Error::InvalidParams("no weight scales".into()));
        }
        if let Some(s) = weight_scales.iter().find(|s| !(s.is_finite() && **s > 0.0)) {
            return Err(Error::InvalidParams(format!(
                "weight scale {s} must be > 0"
            )));
        }
        activation.validate()?;
        output.validate()?;
        Ok(QuantParams {
            weight_scales,
            activation,
            output,
        })
    }

    pub fn weight_scales(&self) -> &[f64] {
        &self.weight_scales
    }

    pub fn is_per_layer(&self) -> bool {
        self.weight_scales.len() == 1
    }

    /// Scale of `filter`; a single per-layer scale broadcasts.
    pub fn weight_scale(&self, filter: usize) -> f64 {
        if self.is_per_layer() {
            self.weight_scales[0]
        } else {
            self.weight_scales[filter]
        }
    }

    pub fn activation(&self) -> AffineQuant {
        self.activation
    }

    pub fn output(&self) -> AffineQuant {
        self.output
    }

    pub fn bias_scale(&self, filter: usize) -> f64 {
        self.weight_scale(filter) * self.activation.scale
    }

    pub fn bias_scales(&self) -> Vec<f64> {
        self.weight_scales
            .iter()
            .map(|s| s * self.activation.scale)
            .collect()
    }

    /// Requantization multiplier `S_W * S_A / S_o` for `filter`.
    pub fn multiplier(&self, filter: usize) -> f64 {
        self.weight_scale(filter) * self.activation.scale / self.output.scale
    }

    pub fn with_weight_scales(&self, weight_scales: Vec<f64>) -> Result<Self> {
        QuantParams::new(weight_scales, self.activation, self.output)
    }

    /// Checks that the scale vector fits a layer of `filters` filters.
    pub fn check_filters(&self, filters: usize) -> Result<()> {
        if self.is_per_layer() || self.weight_scales.len() == filters {
            Ok(())
        } else {
            Err(Error::ShapeMismatch(format!(
                "{} weight scales for {} filters",
                self.weight_scales.len(),
                filters
            )))
        }
    }
}

/// Quantize float weights (filter axis first) to symmetric int8.
///
/// `S_W = max|Q_W| / 127` per scale group and `q_W = round(Q_W / S_W)`,
/// rounding half away from zero. Returns the int8 tensor and one scale per
/// group (one per filter, or a single per-layer scale).
pub fn quantize_weights(
    weights: &[f64],
    shape: &[usize],
    granularity: Granularity,
) -> Result<(IntTensor, Vec<f64>)> {
    let n: usize = shape.iter().product();
    if n != weights.len() || shape.is_empty() || shape[0] == 0 {
        return Err(Error::ShapeMismatch(format!(
            "weight shape {:?} does not match {} values",
            shape,
            weights.len()
        )));
    }
    if let Some(index) = weights.iter().position(|w| !w.is_finite()) {
        return Err(Error::NonFinite { index });
    }
    let group_len = match granularity {
        Granularity::PerFilter => n / shape[0],
        Granularity::PerLayer => n,
    };
    let mut q = Vec::with_capacity(n);
    let mut scales = Vec::with_capacity(n / group_len.max(1));
    for (group, chunk) in weights.chunks(group_len.max(1)).enumerate() {
        let max = chunk.iter().fold(0.0f64, |m, w| m.max(w.abs()));
        if max == 0.0 {
            return Err(Error::AllZeroGroup { group });
        }
        let scale = max / 127.0;
        q.extend(
            chunk
                .iter()
                .map(|w| (half_away(w / scale) as i32).clamp(-127, 127)),
        );
        scales.push(scale);
    }
    Ok((
        IntTensor::new(shape.to_vec(), q, TensorKind::WeightInt8)?,
        scales,
    ))
}

/// Quantize a float bias with the per-filter bias scale `S_W * S_A`.
pub fn quantize_bias(bias: &[f64], params: &QuantParams) -> Result<Vec<i32>> {
    bias.iter()
        .enumerate()
        .map(|(f, b)| {
            let q = half_away(b / params.bias_scale(f));
            if q.is_finite() && q >= i32::MIN as f64 && q <= i32::MAX as f64 {
                Ok(q as i32)
            } else {
                Err(Error::OutOfRange {
                    index: f,
                    value: q as i64,
                    kind: "int32 bias",
                })
            }
        })
        .collect()
}

/// Replace a single per-layer weight scale with one copy per filter.
pub fn expand_per_layer_scale(params: &QuantParams, num_filters: usize) -> Result<QuantParams> {
    if !params.is_per_layer() {
        return if params.weight_scales.len() == num_filters {
            Ok(params.clone())
        } else {
            Err(Error::ShapeMismatch(format!(
                "cannot expand {} scales to {} filters",
                params.weight_scales.len(),
                num_filters
            )))
        };
    }
    params.with_weight_scales(vec![params.weight_scales[0]; num_filters])
}
