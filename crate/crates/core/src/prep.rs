//! Weight preprocessing: int8 -> pot_int with scale correction, 4-bit
//! encoding, and nibble packing.
//!
//! The int8 -> pot_int mapping is a table lookup, not a division by `C`.
//! For each scale group we look for the level `top` that was mapped to 127
//! when the group was quantized (largest first), build that level set's
//! int8 image, and map every weight to the level whose int8 image is within
//! 1 of it. The correction factor is then `C = 127 / top`.

use alloc::format;
use alloc::vec::Vec;

use crate::code::{encode, PotCode};
use crate::error::{Error, Result};
use crate::levels::{generate_levels, int8_for, QuantLevelSet};
use crate::quant::{IntTensor, QuantParams, TensorKind};
use crate::round::div_half_away;
use crate::scheme::{PotScheme, SchemeKind};

/// Exact rational correction factor `C = num / den`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Correction {
    pub num: u32,
    pub den: u32,
}

impl Correction {
    pub const ONE: Correction = Correction { num: 1, den: 1 };

    pub fn value(self) -> f64 {
        self.num as f64 / self.den as f64
    }

    /// `round(q / C)`, half away from zero.
    pub fn rescale(self, q: i32) -> i64 {
        div_half_away(q as i64 * self.den as i64, self.num as i64)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct PrepOptions {
    /// Use `C = 1` for QKeras (treat 127 as 128 without correcting the scale).
    pub qkeras_unit_correction: bool,
}

/// Result of scale correction for one layer.
#[derive(Clone, Debug, PartialEq)]
pub struct Corrected {
    pub pot_int: IntTensor,
    /// Params with `S_pi = S_W * C` in place of `S_W`.
    pub params: QuantParams,
    pub corrections: Vec<Correction>,
    /// `round(q_b / C)` per filter.
    pub bias: Vec<i32>,
}

struct GroupMap {
    top: u32,
    pot_int: Vec<i32>,
}

fn nearest_in_table(table: &[(i32, i32)], q: i32) -> Option<i32> {
    // table: (int8 image, pot_int), ties toward the smaller magnitude
    let mut best: Option<(i32, i32)> = None;
    for &(img, p) in table {
        let d = (img - q).abs();
        if d > 1 {
            continue;
        }
        let better = match best {
            None => true,
            Some((bd, bp)) => d < bd || (d == bd && p.abs() < bp.abs()),
        };
        if better {
            best = Some((d, p));
        }
    }
    best.map(|(_, p)| p)
}

fn map_group(levels: &QuantLevelSet, group: usize, values: &[i32]) -> Result<GroupMap> {
    let tops = levels.magnitudes_desc();
    let mut first_failure = None;
    for &top in &tops {
        let table: Vec<(i32, i32)> = levels
            .levels()
            .iter()
            .filter(|l| l.pot_int.unsigned_abs() <= top)
            .map(|l| (int8_for(l.pot_int, top), l.pot_int))
            .collect();
        let mut out = Vec::with_capacity(values.len());
        for &q in values {
            match nearest_in_table(&table, q) {
                Some(p) => out.push(p),
                None => {
                    first_failure.get_or_insert(q);
                    break;
                }
            }
        }
        if out.len() == values.len() {
            return Ok(GroupMap { top, pot_int: out });
        }
    }
    Err(Error::NotAPoTWeight {
        group,
        value: first_failure.unwrap_or(0),
        scheme: levels.scheme().kind(),
    })
}

/// Map int8 weights (filter axis first) to pot_int levels, correct the
/// weight scales, and rescale the bias so that `S_b = S_pi * S_A`.
pub fn scale_correct(
    q_w: &IntTensor,
    params: &QuantParams,
    bias: &[i32],
    scheme: PotScheme,
    opts: PrepOptions,
) -> Result<Corrected> {
    let shape = q_w.shape();
    if shape.is_empty() || shape[0] == 0 {
        return Err(Error::ShapeMismatch("weights need a filter axis".into()));
    }
    let filters = shape[0];
    params.check_filters(filters)?;
    if bias.len() != filters {
        return Err(Error::ShapeMismatch(format!(
            "{} bias values for {} filters",
            bias.len(),
            filters
        )));
    }
    let levels = generate_levels(scheme)?;
    let groups = params.weight_scales().len();
    let group_len = q_w.len() / groups;

    let mut pot_int = Vec::with_capacity(q_w.len());
    let mut group_corr = Vec::with_capacity(groups);
    for (g, chunk) in q_w.data().chunks(group_len.max(1)).enumerate() {
        let m = map_group(&levels, g, chunk)?;
        let c = if scheme.kind() == SchemeKind::QKeras && opts.qkeras_unit_correction {
            Correction::ONE
        } else {
            Correction {
                num: 127,
                den: m.top,
            }
        };
        pot_int.extend(m.pot_int);
        group_corr.push(c);
    }

    let corrected_scales: Vec<f64> = params
        .weight_scales()
        .iter()
        .zip(&group_corr)
        .map(|(s, c)| s * c.value())
        .collect();
    let corr_for = |f: usize| group_corr[if groups == 1 { 0 } else { f }];
    let bias = bias
        .iter()
        .enumerate()
        .map(|(f, &b)| {
            let v = corr_for(f).rescale(b);
            i32::try_from(v).map_err(|_| Error::OutOfRange {
                index: f,
                value: v,
                kind: "int32 bias",
            })
        })
        .collect::<Result<Vec<i32>>>()?;

    Ok(Corrected {
        pot_int: IntTensor::new(shape.to_vec(), pot_int, TensorKind::PotInt)?,
        params: params.with_weight_scales(corrected_scales)?,
        corrections: group_corr,
        bias,
    })
}

/// Encode every pot_int value into its 4-bit code.
pub fn encode_tensor(pot_int: &[i32], scheme: PotScheme) -> Result<Vec<PotCode>> {
    pot_int.iter().map(|&p| encode(scheme, p)).collect()
}

/// Two codes per byte: even index in the low nibble, odd index in the high
/// nibble. An odd trailing code leaves the last high nibble zero.
pub fn pack(codes: &[PotCode]) -> Vec<u8> {
    codes
        .chunks(2)
        .map(|pair| {
            let lo = pair[0].bits();
            let hi = pair.get(1).map_or(0, |c| c.bits());
            lo | (hi << 4)
        })
        .collect()
}

/// Inverse of [`pack`] for `len` codes.
pub fn unpack(bytes: &[u8], len: usize) -> Result<Vec<PotCode>> {
    if bytes.len() != len.div_ceil(2) {
        return Err(Error::ShapeMismatch(format!(
            "{} packed bytes cannot hold exactly {} codes",
            bytes.len(),
            len
        )));
    }
    let mut out = Vec::with_capacity(len);
    for (i, &b) in bytes.iter().enumerate() {
        out.push(PotCode::from_nibble(b));
        if 2 * i + 1 < len {
            out.push(PotCode::from_nibble(b >> 4));
        } else if b >> 4 != 0 {
            return Err(Error::InvalidCode(b >> 4));
        }
    }
    Ok(out)
}

/// Packed 4-bit weights of one layer plus their corrected scales.
#[derive(Clone, Debug, PartialEq)]
pub struct PackedWeightTensor {
    scheme: PotScheme,
    shape: Vec<usize>,
    bytes: Vec<u8>,
    corrected_scales: Vec<f64>,
    corrections: Vec<Correction>,
}

impl PackedWeightTensor {
    pub fn new(
        scheme: PotScheme,
        shape: Vec<usize>,
        bytes: Vec<u8>,
        corrected_scales: Vec<f64>,
        corrections: Vec<Correction>,
    ) -> Result<Self> {
        let n: usize = shape.iter().product();
        // validates length and padding
        unpack(&bytes, n)?;
        if corrected_scales.len() != corrections.len() {
            return Err(Error::ShapeMismatch(
                "one correction factor per corrected scale".into(),
            ));
        }
        Ok(PackedWeightTensor {
            scheme,
            shape,
            bytes,
            corrected_scales,
            corrections,
        })
    }

    pub fn from_codes(
        scheme: PotScheme,
        shape: Vec<usize>,
        codes: &[PotCode],
        corrected_scales: Vec<f64>,
        corrections: Vec<Correction>,
    ) -> Result<Self> {
        Self::new(scheme, shape, pack(codes), corrected_scales, corrections)
    }

    pub fn scheme(&self) -> PotScheme {
        self.scheme
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn corrected_scales(&self) -> &[f64] {
        &self.corrected_scales
    }

    pub fn corrections(&self) -> &[Correction] {
        &self.corrections
    }

    pub fn codes(&self) -> Vec<PotCode> {
        unpack(&self.bytes, self.len()).expect("validated at construction")
    }

    pub fn pot_int(&self) -> IntTensor {
        let data = self
            .codes()
            .iter()
            .map(|c| c.pot_int(self.scheme))
            .collect();
        IntTensor::new(self.shape.clone(), data, TensorKind::PotInt)
            .expect("decoded codes are in range")
    }
}

/// A preprocessed layer: packed weights, corrected params, rescaled bias.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedWeights {
    pub packed: PackedWeightTensor,
    pub params: QuantParams,
    pub bias: Vec<i32>,
}

/// Full preprocessing of one layer: scale correction, encoding, packing.
pub fn preprocess(
    q_w: &IntTensor,
    params: &QuantParams,
    bias: &[i32],
    scheme: PotScheme,
    opts: PrepOptions,
) -> Result<PreparedWeights> {
    let corrected = scale_correct(q_w, params, bias, scheme, opts)?;
    let codes = encode_tensor(corrected.pot_int.data(), scheme)?;
    let packed = PackedWeightTensor::from_codes(
        scheme,
        q_w.shape().to_vec(),
        &codes,
        corrected.params.weight_scales().to_vec(),
        corrected.corrections,
    )?;
    Ok(PreparedWeights {
        packed,
        params: corrected.params,
        bias: corrected.bias,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quant::AffineQuant;
    use alloc::vec;

    fn params(scales: Vec<f64>) -> QuantParams {
        let a = AffineQuant::new(0.02, -5).unwrap();
        QuantParams::new(scales, a, AffineQuant::new(0.1, 2).unwrap()).unwrap()
    }

    fn weights(shape: Vec<usize>, data: Vec<i32>) -> IntTensor {
        IntTensor::new(shape, data, TensorKind::WeightInt8).unwrap()
    }

    #[test]
    fn apot_reference_mapping() {
        let q = weights(
            vec![1, 15],
            vec![
                -127, -102, -76, -51, -38, -25, -13, 0, 13, 25, 38, 51, 76, 102, 127,
            ],
        );
        let c = scale_correct(
            &q,
            &params(vec![0.01]),
            &[0],
            PotScheme::of(SchemeKind::Apot),
            PrepOptions::default(),
        )
        .unwrap();
        assert_eq!(
            c.pot_int.data(),
            &[-10, -8, -6, -4, -3, -2, -1, 0, 1, 2, 3, 4, 6, 8, 10]
        );
        assert_eq!(c.corrections, vec![Correction { num: 127, den: 10 }]);
        assert!((c.params.weight_scale(0) - 0.01 * 12.7).abs() < 1e-15);
    }

    #[test]
    fn qkeras_correction() {
        let q = weights(vec![1, 4], vec![127, 64, -1, 2]);
        let scheme = PotScheme::of(SchemeKind::QKeras);
        let c = scale_correct(
            &q,
            &params(vec![0.5]),
            &[256],
            scheme,
            PrepOptions::default(),
        )
        .unwrap();
        assert_eq!(c.pot_int.data(), &[128, 64, -1, 2]);
        assert_eq!(c.corrections[0], Correction { num: 127, den: 128 });
        // 256 * 128 / 127 = 258.01
        assert_eq!(c.bias, vec![258]);

        let unit = scale_correct(
            &q,
            &params(vec![0.5]),
            &[256],
            scheme,
            PrepOptions {
                qkeras_unit_correction: true,
            },
        )
        .unwrap();
        assert_eq!(unit.corrections[0], Correction::ONE);
        assert_eq!(unit.pot_int.data(), &[128, 64, -1, 2]);
        assert_eq!(unit.bias, vec![256]);
        assert_eq!(unit.params.weight_scale(0), 0.5);
    }

    #[test]
    fn filter_without_top_level_under_its_own_scale() {
        // per-filter quantization of an APoT filter whose max is 0.5 (pot_int 8):
        // 127*p/8 -> 16, 32, 64, 127
        let q = weights(vec![1, 4], vec![16, 32, -64, 127]);
        let c = scale_correct(
            &q,
            &params(vec![0.5 / 127.0]),
            &[0],
            PotScheme::of(SchemeKind::Apot),
            PrepOptions::default(),
        )
        .unwrap();
        assert_eq!(c.pot_int.data(), &[1, 2, -4, 8]);
        assert_eq!(c.corrections[0], Correction { num: 127, den: 8 });
    }

    #[test]
    fn rejects_non_pot_weights() {
        let q = weights(vec![1, 3], vec![127, 90, 13]);
        assert!(matches!(
            scale_correct(
                &q,
                &params(vec![1.0]),
                &[0],
                PotScheme::of(SchemeKind::Apot),
                PrepOptions::default()
            ),
            Err(Error::NotAPoTWeight { group: 0, .. })
        ));
    }

    #[test]
    fn int8_roundoff_tolerated() {
        // 37 and 39 are within 1 of 38
        let q = weights(vec![1, 3], vec![127, 37, -39]);
        let c = scale_correct(
            &q,
            &params(vec![1.0]),
            &[0],
            PotScheme::of(SchemeKind::Apot),
            PrepOptions::default(),
        )
        .unwrap();
        assert_eq!(c.pot_int.data(), &[10, 3, -3]);
    }

    #[test]
    fn bias_rescale() {
        let q = weights(vec![2, 1], vec![127, -127]);
        let c = scale_correct(
            &q,
            &params(vec![1.0, 2.0]),
            &[127, -381],
            PotScheme::of(SchemeKind::Apot),
            PrepOptions::default(),
        )
        .unwrap();
        assert_eq!(c.bias, vec![10, -30]);
    }

    #[test]
    fn packing_layout() {
        let c = |b| PotCode::new(b).unwrap();
        assert_eq!(pack(&[c(0x3), c(0x7)]), vec![0x73]);
        assert!(pack(&[]).is_empty());
        let five = [c(1), c(2), c(3), c(4), c(5)];
        let bytes = pack(&five);
        assert_eq!(bytes.len(), 3);
        assert_eq!(bytes[2] >> 4, 0);
        assert_eq!(unpack(&bytes, 5).unwrap(), five.to_vec());
        assert!(unpack(&[0xF5], 1).is_err());
        assert!(unpack(&[0x11], 3).is_err());
    }

    #[test]
    fn preprocess_roundtrip() {
        let q = weights(vec![2, 3], vec![127, 0, -51, 13, -127, 76]);
        let p = preprocess(
            &q,
            &params(vec![0.1, 0.2]),
            &[5, 6],
            PotScheme::of(SchemeKind::Apot),
            PrepOptions::default(),
        )
        .unwrap();
        assert_eq!(p.packed.pot_int().data(), &[10, 0, -4, 1, -10, 6]);
        assert_eq!(p.packed.bytes().len(), 3);
    }
}
