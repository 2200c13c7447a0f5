//! Unit conversions between the file-level units (ps, MHz) and SI.

use std::f64::consts::PI;

/// Seconds per picosecond.
pub const PS: f64 = 1e-12;

#[inline]
pub fn ps_to_s(ps: f64) -> f64 {
    ps * PS
}

#[inline]
pub fn s_to_ps(s: f64) -> f64 {
    s / PS
}

/// Converts an ordinary frequency in MHz to an angular frequency in rad/s.
#[inline]
pub fn mhz_to_angular(mhz: f64) -> f64 {
    2.0 * PI * mhz * 1e6
}

/// Inverse of [`mhz_to_angular`].
#[inline]
pub fn angular_to_mhz(omega: f64) -> f64 {
    omega / (2.0 * PI * 1e6)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conversions_invert() {
        assert!((angular_to_mhz(mhz_to_angular(7.8)) - 7.8).abs() < 1e-12);
        assert!((s_to_ps(ps_to_s(4.88)) - 4.88).abs() < 1e-12);
    }
}
