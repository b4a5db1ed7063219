//! Bit-accurate functional model of the shift processing elements.
//!
//! A PE decodes a 4-bit code into one or two shift terms, left-shifts the
//! two's-complement int8 activation by each non-zero term and adds the
//! results. The weight sign is not applied here: the accumulator adds or
//! subtracts the intermediate product depending on the sign bit.

use crate::code::PotCode;
use crate::error::{Error, Result};
use crate::scheme::{PotScheme, SchemeKind};

/// Lanes per GEMM-unit dot product.
pub const LANES: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ShiftPeConfig {
    pub scheme: PotScheme,
    pub activation_bits: u8,
    /// Intermediate product width, signed.
    pub ipw: u8,
    pub accuw: u8,
}

impl ShiftPeConfig {
    /// 8-bit activations, 32-bit accumulator, minimal signed `ipw`:
    /// QKeras 8+7 = 15, MSQ 11 (|8 * -128| = 1024), APoT 12 (|10 * -128| = 1280).
    pub fn for_scheme(scheme: PotScheme) -> Self {
        let ipw = match scheme.kind() {
            SchemeKind::QKeras => 15,
            SchemeKind::Msq => 11,
            SchemeKind::Apot => 12,
        };
        ShiftPeConfig {
            scheme,
            activation_bits: 8,
            ipw,
            accuw: 32,
        }
    }

    /// Whether `product` fits in `ipw` bits two's complement.
    pub fn fits_ipw(&self, product: i32) -> bool {
        let half = 1i64 << (self.ipw - 1);
        (-half..half).contains(&(product as i64))
    }
}

/// Intermediate product of one PE plus the weight sign for the accumulator.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PeOutput {
    /// Shifted (and summed) activation, still carrying the activation sign.
    pub product: i32,
    /// Weight sign bit: subtract instead of add.
    pub negate: bool,
}

impl PeOutput {
    pub fn magnitude(self) -> u32 {
        self.product.unsigned_abs()
    }
}

pub fn pe_multiply(code: PotCode, activation: i8, scheme: PotScheme) -> PeOutput {
    let d = code.decode(scheme);
    let a = activation as i32;
    let shifted = |term: Option<u8>| term.map_or(0, |s| a << s);
    PeOutput {
        product: shifted(d.first) + shifted(d.second),
        negate: d.negative,
    }
}

pub fn accumulate(acc: i32, out: PeOutput) -> Result<i32> {
    if out.negate {
        acc.checked_sub(out.product)
    } else {
        acc.checked_add(out.product)
    }
    .ok_or(Error::AccumulatorOverflow)
}

/// One 64-lane step added onto `acc`.
pub fn dot64_acc(
    acc: i32,
    codes: &[PotCode; LANES],
    acts: &[i8; LANES],
    scheme: PotScheme,
) -> Result<i32> {
    codes.iter().zip(acts).try_fold(acc, |acc, (&c, &a)| {
        accumulate(acc, pe_multiply(c, a, scheme))
    })
}

pub fn dot64(codes: &[PotCode; LANES], acts: &[i8; LANES], scheme: PotScheme) -> Result<i32> {
    dot64_acc(0, codes, acts, scheme)
}

/// Code used for padded lanes: the scheme's zero level, or (QKeras, which
/// has none) the `+1` code with a zero activation in that lane.
pub fn padding_code(scheme: PotScheme) -> PotCode {
    match scheme.kind() {
        SchemeKind::QKeras => PotCode::from_nibble(0),
        SchemeKind::Msq => PotCode::from_nibble(0b0110),
        SchemeKind::Apot => PotCode::from_nibble(0b0010),
    }
}

/// Dot product of any length, consumed as zero-padded 64-lane tiles.
pub fn dot(codes: &[PotCode], acts: &[i8], scheme: PotScheme) -> Result<i32> {
    assert_eq!(codes.len(), acts.len(), "dot operands differ in length");
    let mut acc = 0i32;
    let mut c_tile = [padding_code(scheme); LANES];
    let mut a_tile = [0i8; LANES];
    for (cs, as_) in codes.chunks(LANES).zip(acts.chunks(LANES)) {
        if cs.len() == LANES {
            c_tile.copy_from_slice(cs);
            a_tile.copy_from_slice(as_);
        } else {
            c_tile = [padding_code(scheme); LANES];
            a_tile = [0; LANES];
            c_tile[..cs.len()].copy_from_slice(cs);
            a_tile[..as_.len()].copy_from_slice(as_);
        }
        acc = dot64_acc(acc, &c_tile, &a_tile, scheme)?;
    }
    Ok(acc)
}

/// Outcome of running every 4-bit code against every int8 activation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SweepStats {
    pub checks: u32,
    pub mismatches: u32,
    /// First `(code, activation)` whose signed result differs from `pot_int * a`.
    pub first_mismatch: Option<(PotCode, i8)>,
    pub min_product: i32,
    pub max_product: i32,
    /// Smallest signed width holding every intermediate product.
    pub required_ipw: u8,
    pub ipw: u8,
}

impl SweepStats {
    pub fn passed(&self) -> bool {
        self.mismatches == 0 && self.required_ipw <= self.ipw
    }
}

/// Signed two's-complement width needed for every value in `[lo, hi]`.
pub fn signed_width(lo: i32, hi: i32) -> u8 {
    (1u8..=32)
        .find(|&b| {
            let half = 1i64 << (b - 1);
            -half <= lo as i64 && (hi as i64) < half
        })
        .unwrap_or(32)
}

/// Exhaustive sweep over all 16 codes and all 256 activations.
pub fn sweep_all(scheme: PotScheme) -> SweepStats {
    let cfg = ShiftPeConfig::for_scheme(scheme);
    let mut stats = SweepStats {
        checks: 0,
        mismatches: 0,
        first_mismatch: None,
        min_product: 0,
        max_product: 0,
        required_ipw: 1,
        ipw: cfg.ipw,
    };
    for bits in 0..16u8 {
        let code = PotCode::from_nibble(bits);
        let w = code.pot_int(scheme);
        for a in i8::MIN..=i8::MAX {
            let out = pe_multiply(code, a, scheme);
            stats.checks += 1;
            stats.min_product = stats.min_product.min(out.product);
            stats.max_product = stats.max_product.max(out.product);
            if accumulate(0, out) != Ok(w * a as i32) {
                stats.mismatches += 1;
                stats.first_mismatch.get_or_insert((code, a));
            }
        }
    }
    stats.required_ipw = signed_width(stats.min_product, stats.max_product);
    stats
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::code::encode;

    const APOT: PotScheme = PotScheme::of(SchemeKind::Apot);
    const QKERAS: PotScheme = PotScheme::of(SchemeKind::QKeras);

    #[test]
    fn shift_identities() {
        let six = encode(APOT, 6).unwrap();
        assert_eq!(
            pe_multiply(six, 5, APOT),
            PeOutput {
                product: 30,
                negate: false
            }
        );
        let zero = encode(APOT, 0).unwrap();
        assert_eq!(pe_multiply(zero, -77, APOT).product, 0);
        let top = encode(QKERAS, 128).unwrap();
        let out = pe_multiply(top, 127, QKERAS);
        assert_eq!(out.product, 16256);
        assert!(ShiftPeConfig::for_scheme(QKERAS).fits_ipw(out.product));
    }

    #[test]
    fn accumulate_signs() {
        assert_eq!(
            accumulate(
                0,
                PeOutput {
                    product: 30,
                    negate: false
                }
            ),
            Ok(30)
        );
        assert_eq!(
            accumulate(
                30,
                PeOutput {
                    product: 30,
                    negate: true
                }
            ),
            Ok(0)
        );
        assert_eq!(
            accumulate(
                i32::MAX,
                PeOutput {
                    product: 1,
                    negate: false
                }
            ),
            Err(Error::AccumulatorOverflow)
        );
        assert_eq!(
            accumulate(
                i32::MIN,
                PeOutput {
                    product: 1,
                    negate: true
                }
            ),
            Err(Error::AccumulatorOverflow)
        );
    }

    #[test]
    fn dot64_basics() {
        let zero = encode(APOT, 0).unwrap();
        let one = encode(APOT, 1).unwrap();
        let mut codes = [zero; LANES];
        let mut acts = [0i8; LANES];
        assert_eq!(dot64(&codes, &[77; LANES], APOT), Ok(0));
        codes[13] = one;
        acts[13] = 1;
        assert_eq!(dot64(&codes, &acts, APOT), Ok(1));
    }

    #[test]
    fn qkeras_tail_padding() {
        let c = encode(QKERAS, -4).unwrap();
        let codes = [c; 70];
        let acts = [3i8; 70];
        assert_eq!(dot(&codes, &acts, QKERAS), Ok(-4 * 3 * 70));
    }
}
