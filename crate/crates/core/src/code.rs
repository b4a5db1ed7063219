//! 4-bit sign-magnitude shift codes (`pot_int^e`).
//!
//! Bit 3 is the weight sign. QKeras uses bits 2..0 as a shift amount.
//! MSQ and APoT use bits 2..1 for the first term and bit 0 for the second;
//! each field value maps to a shift or to the zero term, per scheme.

use core::fmt;

use crate::error::{Error, Result};
use crate::scheme::{term_value, PotScheme, SchemeKind};

const SIGN_BIT: u8 = 0b1000;

/// A 4-bit weight code.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub struct PotCode(u8);

impl PotCode {
    pub fn new(bits: u8) -> Result<Self> {
        if bits > 0xF {
            return Err(Error::InvalidCode(bits));
        }
        Ok(PotCode(bits))
    }

    /// Low nibble of `bits`; the high nibble is ignored.
    pub fn from_nibble(bits: u8) -> Self {
        PotCode(bits & 0xF)
    }

    pub fn bits(self) -> u8 {
        self.0
    }

    pub fn is_negative(self) -> bool {
        self.0 & SIGN_BIT != 0
    }

    pub fn magnitude_bits(self) -> u8 {
        self.0 & !SIGN_BIT
    }

    /// Split the code into sign and PoT terms.
    pub fn decode(self, scheme: PotScheme) -> Decoded {
        let terms = scheme.terms();
        let mag = self.magnitude_bits();
        let (first, second) = match scheme.kind() {
            SchemeKind::QKeras => (terms.first_field[mag as usize], None),
            SchemeKind::Msq | SchemeKind::Apot => (
                terms.first_field[(mag >> 1) as usize],
                terms.second_field[(mag & 1) as usize],
            ),
        };
        Decoded {
            negative: self.is_negative(),
            first,
            second,
        }
    }

    /// The signed `pot_int` this code stands for.
    pub fn pot_int(self, scheme: PotScheme) -> i32 {
        self.decode(scheme).value()
    }
}

/// Signed display in the `pot_int^e` convention: sign then magnitude bits
/// (so a negative code with zero magnitude prints as `-0`).
impl fmt::Display for PotCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_negative() {
            write!(f, "-{}", self.magnitude_bits())
        } else {
            write!(f, "{}", self.magnitude_bits())
        }
    }
}

/// Weight sign plus up to two shift terms (`None` = zero term, η).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Decoded {
    pub negative: bool,
    pub first: Option<u8>,
    pub second: Option<u8>,
}

impl Decoded {
    pub fn magnitude(self) -> u32 {
        term_value(self.first) + term_value(self.second)
    }

    pub fn value(self) -> i32 {
        let m = self.magnitude() as i32;
        if self.negative {
            -m
        } else {
            m
        }
    }
}

/// Canonical term decomposition of a magnitude: among all `(first, second)`
/// pairs summing to `magnitude`, the one with the larger first term.
pub fn decompose(scheme: PotScheme, magnitude: u32) -> Option<(Option<u8>, Option<u8>)> {
    let terms = scheme.terms();
    let seconds: &[Option<u8>] = if terms.has_second_term() {
        terms.second
    } else {
        &[None]
    };
    let mut best: Option<(Option<u8>, Option<u8>)> = None;
    for &first in terms.first {
        for &second in seconds {
            if term_value(first) + term_value(second) != magnitude {
                continue;
            }
            let better = match best {
                None => true,
                Some((f, _)) => term_value(first) > term_value(f),
            };
            if better {
                best = Some((first, second));
            }
        }
    }
    best
}

/// Encode a signed `pot_int` level into its 4-bit code.
pub fn encode(scheme: PotScheme, pot_int: i32) -> Result<PotCode> {
    let not_a_level = Error::NotALevel {
        value: pot_int,
        scheme: scheme.kind(),
    };
    let (first, second) = decompose(scheme, pot_int.unsigned_abs()).ok_or(not_a_level.clone())?;
    let terms = scheme.terms();
    let field_of = |table: &[Option<u8>], term: Option<u8>| {
        table.iter().position(|&t| t == term).map(|p| p as u8)
    };
    let sign = if pot_int < 0 { SIGN_BIT } else { 0 };
    let mag = match scheme.kind() {
        SchemeKind::QKeras => field_of(terms.first_field, first),
        SchemeKind::Msq | SchemeKind::Apot => field_of(terms.first_field, first)
            .zip(field_of(terms.second_field, second))
            .map(|(f, s)| (f << 1) | s),
    }
    .ok_or(not_a_level)?;
    Ok(PotCode(sign | mag))
}
