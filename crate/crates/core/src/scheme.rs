//! The three supported power-of-two schemes and their PoT term sets.

use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::dyadic::Dyadic;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum SchemeKind {
    /// Single PoT term, zero removed as a level.
    QKeras,
    /// Two PoT terms (2-bit + 1-bit).
    Msq,
    /// Additive PoT, two terms (2-bit + 1-bit).
    Apot,
}

impl SchemeKind {
    pub const ALL: [SchemeKind; 3] = [SchemeKind::QKeras, SchemeKind::Msq, SchemeKind::Apot];

    pub fn name(self) -> &'static str {
        match self {
            SchemeKind::QKeras => "qkeras",
            SchemeKind::Msq => "msq",
            SchemeKind::Apot => "apot",
        }
    }
}

impl fmt::Display for SchemeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SchemeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "qkeras" => Ok(SchemeKind::QKeras),
            "msq" => Ok(SchemeKind::Msq),
            "apot" => Ok(SchemeKind::Apot),
            _ => Err(Error::UnknownScheme(s.into())),
        }
    }
}

/// A scheme at a given weight bitwidth. Only 4-bit weights are supported.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct PotScheme {
    kind: SchemeKind,
    bitwidth: u8,
}

impl PotScheme {
    pub const BITWIDTH: u8 = 4;

    pub fn new(kind: SchemeKind, bitwidth: u8) -> Result<Self> {
        if bitwidth != Self::BITWIDTH {
            return Err(Error::UnsupportedBitwidth(bitwidth));
        }
        Ok(PotScheme { kind, bitwidth })
    }

    /// The 4-bit variant of `kind`.
    pub const fn of(kind: SchemeKind) -> Self {
        PotScheme { kind, bitwidth: 4 }
    }

    pub fn kind(self) -> SchemeKind {
        self.kind
    }

    pub fn bitwidth(self) -> u8 {
        self.bitwidth
    }

    pub fn terms(self) -> &'static TermSpec {
        match self.kind {
            SchemeKind::QKeras => &QKERAS_TERMS,
            SchemeKind::Msq => &MSQ_TERMS,
            SchemeKind::Apot => &APOT_TERMS,
        }
    }
}

impl From<SchemeKind> for PotScheme {
    fn from(kind: SchemeKind) -> Self {
        PotScheme::of(kind)
    }
}

/// PoT terms of a scheme, in the integer (`pot_int`) domain.
///
/// Each term is a left-shift amount, or `None` for the zero term (the
/// special case the shift-PE has to decode). A term's `pot_float` value is
/// `2^shift * 2^-unit_exp`, where `2^-unit_exp` is the smallest nonzero
/// `pot_float` term of the scheme.
#[derive(Debug, PartialEq, Eq)]
pub struct TermSpec {
    pub first: &'static [Option<u8>],
    pub second: &'static [Option<u8>],
    pub unit_exp: u32,
    /// Field value -> term, for the 2-bit (MSQ/APoT) or 3-bit (QKeras) first field.
    pub first_field: &'static [Option<u8>],
    /// Field value -> term for the 1-bit second field (empty for QKeras).
    pub second_field: &'static [Option<u8>],
}

static QKERAS_TERMS: TermSpec = TermSpec {
    first: &[
        Some(0),
        Some(1),
        Some(2),
        Some(3),
        Some(4),
        Some(5),
        Some(6),
        Some(7),
    ],
    second: &[],
    unit_exp: 8,
    first_field: &[
        Some(0),
        Some(1),
        Some(2),
        Some(3),
        Some(4),
        Some(5),
        Some(6),
        Some(7),
    ],
    second_field: &[],
};

static MSQ_TERMS: TermSpec = TermSpec {
    first: &[None, Some(0), Some(1), Some(2)],
    second: &[None, Some(2)],
    unit_exp: 3,
    first_field: &[Some(0), Some(1), Some(2), None],
    second_field: &[None, Some(2)],
};

static APOT_TERMS: TermSpec = TermSpec {
    first: &[None, Some(0), Some(2), Some(3)],
    second: &[None, Some(1)],
    unit_exp: 4,
    first_field: &[Some(0), None, Some(2), Some(3)],
    second_field: &[None, Some(1)],
};

pub(crate) fn term_value(term: Option<u8>) -> u32 {
    term.map_or(0, |s| 1u32 << s)
}

impl TermSpec {
    pub fn has_second_term(&self) -> bool {
        !self.second.is_empty()
    }

    /// `pot_int` magnitudes of the first term, ascending.
    pub fn first_term_values(&self) -> Vec<u32> {
        sorted_values(self.first)
    }

    pub fn second_term_values(&self) -> Vec<u32> {
        sorted_values(self.second)
    }

    pub fn max_pot_int(&self) -> u32 {
        let max_first = self.first.iter().map(|&t| term_value(t)).max().unwrap_or(0);
        let max_second = self
            .second
            .iter()
            .map(|&t| term_value(t))
            .max()
            .unwrap_or(0);
        max_first + max_second
    }

    /// Smallest nonzero `pot_float` term; `pot_float = pot_int * unit`.
    pub fn unit(&self) -> Dyadic {
        Dyadic::pow2(-(self.unit_exp as i32))
    }

    pub fn pot_float_of(&self, term: Option<u8>) -> Dyadic {
        self.unit().mul_int(term_value(term) as i64)
    }
}

fn sorted_values(terms: &[Option<u8>]) -> Vec<u32> {
    let mut v: Vec<u32> = terms.iter().map(|&t| term_value(t)).collect();
    v.sort_unstable();
    v
}
