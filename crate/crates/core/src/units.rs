//! Physical constants and unit conversions shared across modules.

use std::f64::consts::PI;

/// Vacuum permittivity (F/m).
pub const EPS0: f64 = 8.854_187_812_8e-12;

/// Relative permittivity of c-plane sapphire used for the substrate and the
/// disordered interface layers.
pub const SAPPHIRE_EPS_REL: f64 = 10.15;

pub const UM: f64 = 1e-6;
pub const NM: f64 = 1e-9;

/// Cyclic frequency in GHz to angular frequency in rad/s.
pub fn ghz_to_angular(f_ghz: f64) -> f64 {
    2.0 * PI * f_ghz * 1e9
}

/// Cyclic frequency in MHz to angular frequency in rad/s.
pub fn mhz_to_angular(f_mhz: f64) -> f64 {
    2.0 * PI * f_mhz * 1e6
}

/// Round to `digits` significant digits. Non-finite values pass through.
pub fn round_sig(x: f64, digits: usize) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{:.*e}", digits.saturating_sub(1), x)
        .parse()
        .unwrap_or(x)
}
