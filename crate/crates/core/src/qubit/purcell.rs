//! Purcell decay through the readout cavity and its removal from T₁.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// |Δ|/g below which the dispersive approximation is flagged.
pub const DISPERSIVE_RATIO_WARN: f64 = 5.0;

/// Purcell times above this (seconds) are reported as unbounded.
pub const UNBOUNDED_THRESHOLD_S: f64 = 1e6;

/// Angular-frequency parameters (rad/s). Provide `g`, or `chi` to derive it
/// from χ ≃ g²/Δ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PurcellParams {
    pub g: Option<f64>,
    pub delta: f64,
    pub kappa: f64,
    pub chi: Option<f64>,
}

impl PurcellParams {
    /// All inputs as cyclic frequencies in MHz.
    pub fn from_cyclic_mhz(g: Option<f64>, delta: f64, kappa: f64, chi: Option<f64>) -> Self {
        let w = |f: f64| 2.0 * PI * f * 1e6;
        Self {
            g: g.map(w),
            delta: w(delta),
            kappa: w(kappa),
            chi: chi.map(w),
        }
    }

    /// Coupling strength, given directly or derived from the dispersive shift.
    pub fn coupling(&self) -> Result<f64> {
        match (self.g, self.chi) {
            (Some(g), _) => {
                if !(g >= 0.0) {
                    return Err(Error::invalid("g must be >= 0"));
                }
                Ok(g)
            }
            (None, Some(chi)) => coupling_from_dispersive_shift(chi, self.delta),
            (None, None) => Err(Error::invalid("either g or chi is required")),
        }
    }
}

/// g = sqrt(χΔ); χ and Δ must share a sign.
pub fn coupling_from_dispersive_shift(chi: f64, delta: f64) -> Result<f64> {
    if delta == 0.0 {
        return Err(Error::invalid("detuning must be non-zero"));
    }
    let product = chi * delta;
    if !(product >= 0.0) {
        return Err(Error::invalid("chi and delta must have the same sign"));
    }
    Ok(product.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "seconds", rename_all = "snake_case")]
pub enum PurcellTime {
    Finite(f64),
    Unbounded,
}

impl PurcellTime {
    pub fn seconds(self) -> f64 {
        match self {
            PurcellTime::Finite(s) => s,
            PurcellTime::Unbounded => f64::INFINITY,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PurcellLimit {
    pub t_purcell: PurcellTime,
    /// Coupling used (rad/s).
    pub g: f64,
    /// |Δ|/g.
    pub dispersive_ratio: f64,
    pub warning: Option<String>,
}

/// T_Purcell = Δ²/(g²κ).
pub fn purcell_limit(params: &PurcellParams) -> Result<PurcellLimit> {
    if !(params.kappa > 0.0) {
        return Err(Error::invalid("kappa must be > 0"));
    }
    if params.delta == 0.0 || !params.delta.is_finite() {
        return Err(Error::invalid("delta must be non-zero"));
    }
    let g = params.coupling()?;
    let ratio = params.delta.abs() / g;
    let warning = (ratio < DISPERSIVE_RATIO_WARN).then(|| {
        format!("|delta|/g = {ratio:.2} < {DISPERSIVE_RATIO_WARN}: outside the dispersive regime")
    });
    let t = if g == 0.0 {
        f64::INFINITY
    } else {
        ratio * ratio / params.kappa
    };
    let t_purcell = if t.is_finite() && t <= UNBOUNDED_THRESHOLD_S {
        PurcellTime::Finite(t)
    } else {
        PurcellTime::Unbounded
    };
    Ok(PurcellLimit {
        t_purcell,
        g,
        dispersive_ratio: ratio,
        warning,
    })
}

/// T₁ with the Purcell channel removed, 1/(1/T₁ − 1/T_P) (μs).
pub fn purcell_corrected_t1(t1_us: f64, t_purcell_ms: f64) -> Result<f64> {
    if !(t1_us > 0.0) {
        return Err(Error::invalid("T1 must be > 0"));
    }
    let tp_us = t_purcell_ms * 1e3;
    if !(tp_us > t1_us) {
        return Err(Error::invalid(format!(
            "Purcell limit {t_purcell_ms} ms does not exceed T1 {t1_us} us"
        )));
    }
    Ok(1.0 / (1.0 / t1_us - 1.0 / tp_us))
}

/// Inverse of [`purcell_corrected_t1`]: 1/(1/T₁' + 1/T_P) (μs).
pub fn readd_purcell(t1_corrected_us: f64, t_purcell_ms: f64) -> f64 {
    1.0 / (1.0 / t1_corrected_us + 1.0 / (t_purcell_ms * 1e3))
}

/// Q = ω_q T₁' with ω_q given as a cyclic frequency in GHz.
pub fn purcell_subtract_q(t1_mean_us: f64, t_purcell_ms: f64, omega_q_ghz: f64) -> Result<f64> {
    if !(omega_q_ghz > 0.0) {
        return Err(Error::invalid("qubit frequency must be > 0"));
    }
    let t1 = purcell_corrected_t1(t1_mean_us, t_purcell_ms)?;
    Ok(2.0 * PI * omega_q_ghz * 1e9 * t1 * 1e-6)
}
