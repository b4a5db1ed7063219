//! Exact dyadic rationals (`num / 2^exp`).
//!
//! Every power-of-two quantization level is a dyadic fraction, so level tables
//! can be compared exactly instead of through `f64` round-off.

use core::cmp::Ordering;
use core::fmt;
use core::ops::{Add, Neg};

/// A rational number `num / 2^exp`, kept in lowest terms.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Dyadic {
    num: i64,
    exp: u32,
}

impl Dyadic {
    pub const ZERO: Dyadic = Dyadic { num: 0, exp: 0 };

    pub fn new(num: i64, exp: u32) -> Self {
        let (mut num, mut exp) = (num, exp);
        if num == 0 {
            return Self::ZERO;
        }
        while exp > 0 && num % 2 == 0 {
            num /= 2;
            exp -= 1;
        }
        Dyadic { num, exp }
    }

    /// `2^e` for any (possibly negative) exponent.
    pub fn pow2(e: i32) -> Self {
        if e >= 0 {
            Dyadic::new(1i64 << e, 0)
        } else {
            Dyadic::new(1, e.unsigned_abs())
        }
    }

    pub fn from_int(v: i64) -> Self {
        Dyadic::new(v, 0)
    }

    pub fn numerator(self) -> i64 {
        self.num
    }

    /// Power of two in the denominator.
    pub fn exponent(self) -> u32 {
        self.exp
    }

    pub fn is_zero(self) -> bool {
        self.num == 0
    }

    pub fn abs(self) -> Self {
        Dyadic {
            num: self.num.abs(),
            exp: self.exp,
        }
    }

    pub fn mul_int(self, k: i64) -> Self {
        Dyadic::new(self.num * k, self.exp)
    }

    pub fn to_f64(self) -> f64 {
        self.num as f64 / libm::exp2(self.exp as f64)
    }

    /// Exact quotient `self / other` when it is an integer.
    pub fn div_exact(self, other: Dyadic) -> Option<i64> {
        if other.is_zero() {
            return None;
        }
        let (a, b) = align(self, other);
        if a % b == 0 {
            i64::try_from(a / b).ok()
        } else {
            None
        }
    }
}

fn align(a: Dyadic, b: Dyadic) -> (i128, i128) {
    let e = a.exp.max(b.exp);
    (
        (a.num as i128) << (e - a.exp),
        (b.num as i128) << (e - b.exp),
    )
}

impl Ord for Dyadic {
    fn cmp(&self, other: &Self) -> Ordering {
        let (a, b) = align(*self, *other);
        a.cmp(&b)
    }
}

impl PartialOrd for Dyadic {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Add for Dyadic {
    type Output = Dyadic;

    fn add(self, rhs: Dyadic) -> Dyadic {
        let e = self.exp.max(rhs.exp);
        let (a, b) = align(self, rhs);
        Dyadic::new((a + b) as i64, e)
    }
}

impl Neg for Dyadic {
    type Output = Dyadic;

    fn neg(self) -> Dyadic {
        Dyadic {
            num: -self.num,
            exp: self.exp,
        }
    }
}

/// Exact decimal expansion; a dyadic fraction always terminates.
impl fmt::Display for Dyadic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.exp == 0 {
            return write!(f, "{}", self.num);
        }
        // num / 2^e == num * 5^e / 10^e
        let scaled = (self.num.unsigned_abs() as u128) * 5u128.pow(self.exp);
        let pow10 = 10u128.pow(self.exp);
        let int_part = scaled / pow10;
        let mut frac = scaled % pow10;
        let mut digits = self.exp as usize;
        while frac.is_multiple_of(10) && digits > 0 {
            frac /= 10;
            digits -= 1;
        }
        let sign = if self.num < 0 { "-" } else { "" };
        write!(f, "{sign}{int_part}.{frac:0digits$}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;

    #[test]
    fn normalizes() {
        assert_eq!(Dyadic::new(4, 3), Dyadic::new(1, 1));
        assert_eq!(Dyadic::new(0, 7), Dyadic::ZERO);
        assert_eq!(Dyadic::pow2(-4), Dyadic::new(1, 4));
        assert_eq!(Dyadic::pow2(3), Dyadic::from_int(8));
    }

    #[test]
    fn orders_and_adds() {
        let a = Dyadic::pow2(-1);
        let b = Dyadic::pow2(-3);
        assert!(b < a);
        assert_eq!(a + b, Dyadic::new(5, 3));
        assert_eq!(-(a + b), Dyadic::new(-5, 3));
        assert_eq!(Dyadic::new(10, 4).div_exact(Dyadic::pow2(-4)), Some(10));
        assert_eq!(Dyadic::new(3, 4).div_exact(Dyadic::pow2(-3)), None);
    }

    #[test]
    fn decimal_display() {
        assert_eq!(Dyadic::new(3, 4).to_string(), "0.1875");
        assert_eq!(Dyadic::new(-10, 4).to_string(), "-0.625");
        assert_eq!(Dyadic::ZERO.to_string(), "0");
        assert_eq!(Dyadic::pow2(-8).to_string(), "0.00390625");
        assert_eq!(Dyadic::from_int(-3).to_string(), "-3");
    }
}
