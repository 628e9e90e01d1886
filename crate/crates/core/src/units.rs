//! Physical constants (CODATA 2018, SI).

use std::f64::consts::PI;

pub const TWO_PI: f64 = 2.0 * PI;

/// Planck constant, J·s (exact).
pub const PLANCK: f64 = 6.626_070_15e-34;

/// Elementary charge, C (exact).
pub const ELEMENTARY_CHARGE: f64 = 1.602_176_634e-19;

/// Reduced Planck constant, J·s.
pub const HBAR: f64 = PLANCK / TWO_PI;

/// Magnetic flux quantum h/2e, Wb.
pub const PHI0: f64 = PLANCK / (2.0 * ELEMENTARY_CHARGE);

/// One electronvolt in joules.
pub const EV: f64 = ELEMENTARY_CHARGE;

/// Converts an ordinary frequency in Hz to angular frequency in rad/s.
#[inline]
pub fn hz_to_angular(f: f64) -> f64 {
    TWO_PI * f
}

#[inline]
pub fn angular_to_hz(w: f64) -> f64 {
    w / TWO_PI
}
