//! Quantization level tables in all four representations.

use alloc::vec::Vec;

use crate::code::{decompose, encode, PotCode};
use crate::dyadic::Dyadic;
use crate::error::Result;
use crate::round::div_half_away;
use crate::scheme::{term_value, PotScheme};

/// One quantization level of a scheme.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Level {
    pub pot_float: Dyadic,
    /// TFLite-style int8 value: `round(pot_float * 127 / max|pot_float|)`.
    pub int8: i8,
    pub pot_int: i32,
    pub code: PotCode,
    /// Canonical `(first, second)` shift terms; `None` is the zero term.
    pub terms: (Option<u8>, Option<u8>),
}

/// All representable levels of a scheme, ascending.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QuantLevelSet {
    scheme: PotScheme,
    levels: Vec<Level>,
}

/// int8 image of `pot_int` when `top` is the level mapped to 127.
pub(crate) fn int8_for(pot_int: i32, top: u32) -> i32 {
    div_half_away(127 * pot_int as i64, top as i64) as i32
}

/// Enumerate the level set of `scheme`.
///
/// QKeras levels are `±2^s`; MSQ/APoT levels are `±(q0 + q1)` over the two
/// term sets with zero appearing once.
pub fn generate_levels(scheme: PotScheme) -> Result<QuantLevelSet> {
    // re-validate: PotScheme::of() bypasses the bitwidth check
    let scheme = PotScheme::new(scheme.kind(), scheme.bitwidth())?;
    let terms = scheme.terms();
    let seconds: &[Option<u8>] = if terms.has_second_term() {
        terms.second
    } else {
        &[None]
    };

    let mut magnitudes: Vec<u32> = terms
        .first
        .iter()
        .flat_map(|&f| seconds.iter().map(move |&s| term_value(f) + term_value(s)))
        .collect();
    magnitudes.sort_unstable();
    magnitudes.dedup();

    let top = terms.max_pot_int();
    let mut levels = Vec::with_capacity(2 * magnitudes.len());
    for &m in &magnitudes {
        let signs: &[i32] = if m == 0 { &[1] } else { &[-1, 1] };
        for &sign in signs {
            let pot_int = sign * m as i32;
            let terms = decompose(scheme, m).expect("enumerated magnitude decomposes");
            levels.push(Level {
                pot_float: terms_unit(scheme).mul_int(pot_int as i64),
                int8: int8_for(pot_int, top) as i8,
                pot_int,
                code: encode(scheme, pot_int)?,
                terms,
            });
        }
    }
    levels.sort_by_key(|l| l.pot_float);
    Ok(QuantLevelSet { scheme, levels })
}

fn terms_unit(scheme: PotScheme) -> Dyadic {
    scheme.terms().unit()
}

impl QuantLevelSet {
    pub fn scheme(&self) -> PotScheme {
        self.scheme
    }

    pub fn levels(&self) -> &[Level] {
        &self.levels
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn max_pot_int(&self) -> u32 {
        self.levels
            .iter()
            .map(|l| l.pot_int.unsigned_abs())
            .max()
            .unwrap_or(0)
    }

    pub fn by_pot_int(&self, pot_int: i32) -> Option<&Level> {
        self.levels.iter().find(|l| l.pot_int == pot_int)
    }

    pub fn contains_pot_int(&self, pot_int: i32) -> bool {
        self.by_pot_int(pot_int).is_some()
    }

    /// Nonzero level magnitudes, descending.
    pub fn magnitudes_desc(&self) -> Vec<u32> {
        let mut m: Vec<u32> = self
            .levels
            .iter()
            .filter(|l| l.pot_int > 0)
            .map(|l| l.pot_int as u32)
            .collect();
        m.sort_unstable_by(|a, b| b.cmp(a));
        m
    }

    /// Level closest to `value` in the `pot_float` domain. Ties go to the
    /// smaller magnitude, then to the positive level.
    pub fn nearest_level(&self, value: f64) -> &Level {
        let mut best = &self.levels[0];
        let mut best_dist = f64::INFINITY;
        for level in &self.levels {
            let dist = (level.pot_float.to_f64() - value).abs();
            let better = dist < best_dist
                || (dist == best_dist
                    && (level.pot_float.abs() < best.pot_float.abs()
                        || (level.pot_float.abs() == best.pot_float.abs() && level.pot_int > 0)));
            if better {
                best = level;
                best_dist = dist;
            }
        }
        best
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scheme::SchemeKind;
    use alloc::vec;

    fn set(kind: SchemeKind) -> QuantLevelSet {
        generate_levels(PotScheme::of(kind)).unwrap()
    }

    #[test]
    fn level_counts() {
        assert_eq!(set(SchemeKind::QKeras).len(), 16);
        assert_eq!(set(SchemeKind::Apot).len(), 15);
        // 7 magnitudes {0,1,2,4,5,6,8}: zero once plus 6 signed pairs
        assert_eq!(set(SchemeKind::Msq).len(), 13);
    }

    #[test]
    fn msq_magnitudes() {
        let m = set(SchemeKind::Msq);
        let mut mags: Vec<u32> = m
            .levels()
            .iter()
            .map(|l| l.pot_int.unsigned_abs())
            .collect();
        mags.sort_unstable();
        mags.dedup();
        assert_eq!(mags, vec![0, 1, 2, 4, 5, 6, 8]);
        assert!(!m.contains_pot_int(3));
        assert!(!m.contains_pot_int(7));
    }

    #[test]
    fn apot_examples() {
        let a = set(SchemeKind::Apot);
        let lo = a.levels()[0];
        assert_eq!(
            (lo.pot_float, lo.int8, lo.pot_int),
            (Dyadic::new(-5, 3), -127, -10)
        );
        let l = a.by_pot_int(3).unwrap();
        assert_eq!((l.pot_float, l.int8), (Dyadic::new(3, 4), 38));
    }

    #[test]
    fn qkeras_has_no_zero() {
        let q = set(SchemeKind::QKeras);
        assert!(!q.contains_pot_int(0));
        let pots: Vec<i32> = q.levels().iter().map(|l| l.pot_int).collect();
        assert_eq!(
            pots,
            vec![-128, -64, -32, -16, -8, -4, -2, -1, 1, 2, 4, 8, 16, 32, 64, 128]
        );
    }

    #[test]
    fn nearest() {
        let a = set(SchemeKind::Apot);
        assert_eq!(a.nearest_level(0.625).pot_float, Dyadic::new(5, 3));
        assert_eq!(a.nearest_level(0.0).pot_float, Dyadic::ZERO);
        assert_eq!(a.nearest_level(0.22).pot_float, Dyadic::new(1, 2));
        assert_eq!(a.nearest_level(-9.0).pot_int, -10);
        // exact midpoint between 0.25 and 0.375 -> smaller magnitude
        assert_eq!(a.nearest_level(0.3125).pot_int, 4);
        // QKeras: 0 is equidistant from ±2^-8 -> positive
        let q = set(SchemeKind::QKeras);
        assert_eq!(q.nearest_level(0.0).pot_int, 1);
    }
}
