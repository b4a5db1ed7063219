//! Rounding helpers shared by the quantizer, weight prep, and requantizer.

/// Round half away from zero (weight quantization).
pub fn half_away(x: f64) -> f64 {
    libm::round(x)
}

/// Round half to even (requantization).
pub fn half_even(x: f64) -> f64 {
    libm::rint(x)
}

/// `round(num / den)` for integers, half away from zero. `den` must be positive.
pub fn div_half_away(num: i64, den: i64) -> i64 {
    debug_assert!(den > 0);
    let q = (2 * num.unsigned_abs() as i128 + den as i128) / (2 * den as i128);
    let q = q as i64;
    if num < 0 {
        -q
    } else {
        q
    }
}
