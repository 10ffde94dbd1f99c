use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::units::SAPPHIRE_EPS_REL;

/// Default exclusion distance around strip edges for layer integrals (μm).
///
/// Matches the 1 nm lossy-layer thickness: inside that distance the field is
/// no longer uniform across the layer.
pub const DEFAULT_EDGE_CUTOFF_UM: f64 = 0.001;

pub const DEFAULT_DISCRETIZATION: usize = 256;

pub const MIN_DISCRETIZATION: usize = 8;

/// A zero-thickness conducting strip lying on the substrate surface.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Strip {
    /// Left edge (μm).
    pub x_start: f64,
    /// Width (μm).
    pub width: f64,
    /// Applied potential (V).
    pub potential: f64,
}

impl Strip {
    pub fn new(x_start: f64, width: f64, potential: f64) -> Self {
        Self {
            x_start,
            width,
            potential,
        }
    }

    pub fn x_end(&self) -> f64 {
        self.x_start + self.width
    }
}

/// Coplanar strip array on a dielectric half-space, vacuum above.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossSection {
    #[serde(default)]
    pub label: String,
    pub strips: Vec<Strip>,
    pub eps_sub_rel: f64,
    #[serde(default = "unit_eps")]
    pub eps_vac_rel: f64,
    /// Exclusion distance around strip edges for layer integrals (μm).
    #[serde(default = "default_cutoff")]
    pub edge_cutoff: f64,
    /// Boundary elements per strip.
    #[serde(default = "default_discretization")]
    pub discretization: usize,
    /// Strip whose cell (strip plus half of each neighbouring gap) stands in
    /// for the interior of a periodic array.
    #[serde(default)]
    pub representative_strip: Option<usize>,
}

fn unit_eps() -> f64 {
    1.0
}

fn default_cutoff() -> f64 {
    DEFAULT_EDGE_CUTOFF_UM
}

fn default_discretization() -> usize {
    DEFAULT_DISCRETIZATION
}

/// Mirror symmetry of the applied potentials about the array centre.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Parity {
    Even,
    Odd,
}

impl CrossSection {
    pub fn new(strips: Vec<Strip>, eps_sub_rel: f64) -> Self {
        Self {
            label: String::new(),
            strips,
            eps_sub_rel,
            eps_vac_rel: 1.0,
            edge_cutoff: DEFAULT_EDGE_CUTOFF_UM,
            discretization: DEFAULT_DISCRETIZATION,
            representative_strip: None,
        }
    }

    /// Two strips of equal width separated by `gap`, driven at ±`voltage`/2.
    pub fn coplanar_pair(width: f64, gap: f64, voltage: f64, eps_sub_rel: f64) -> Self {
        let mut geom = Self::new(
            vec![
                Strip::new(0.0, width, 0.5 * voltage),
                Strip::new(width + gap, width, -0.5 * voltage),
            ],
            eps_sub_rel,
        );
        geom.label = format!("pair-w{width}um-g{gap}um");
        geom
    }

    pub fn with_discretization(mut self, elements_per_strip: usize) -> Self {
        self.discretization = elements_per_strip;
        self
    }

    pub fn with_edge_cutoff(mut self, cutoff_um: f64) -> Self {
        self.edge_cutoff = cutoff_um;
        self
    }

    pub fn with_potentials(mut self, potentials: &[f64]) -> Self {
        for (strip, &v) in self.strips.iter_mut().zip(potentials) {
            strip.potential = v;
        }
        self
    }

    /// Multiply every lateral length (positions, widths, cutoff) by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        let mut geom = self.clone();
        for strip in &mut geom.strips {
            strip.x_start *= factor;
            strip.width *= factor;
        }
        geom.edge_cutoff *= factor;
        geom
    }

    pub fn potentials(&self) -> Vec<f64> {
        self.strips.iter().map(|s| s.potential).collect()
    }

    pub fn min_width(&self) -> f64 {
        self.strips
            .iter()
            .map(|s| s.width)
            .fold(f64::INFINITY, f64::min)
    }

    pub fn span(&self) -> (f64, f64) {
        let lo = self.strips.first().map_or(0.0, |s| s.x_start);
        let hi = self.strips.last().map_or(0.0, |s| s.x_end());
        (lo, hi)
    }

    /// Gap bounds between consecutive strips (μm).
    pub fn gaps(&self) -> Vec<(f64, f64)> {
        self.strips
            .windows(2)
            .map(|pair| (pair[0].x_end(), pair[1].x_start))
            .collect()
    }

    /// Lateral window of the representative cell, if one is flagged.
    pub fn representative_window(&self) -> Option<(f64, f64)> {
        let idx = self.representative_strip?;
        let strip = self.strips.get(idx)?;
        let lo = if idx > 0 {
            0.5 * (self.strips[idx - 1].x_end() + strip.x_start)
        } else {
            strip.x_start
        };
        let hi = match self.strips.get(idx + 1) {
            Some(next) => 0.5 * (strip.x_end() + next.x_start),
            None => strip.x_end(),
        };
        Some((lo, hi))
    }

    pub fn validate(&self) -> Result<()> {
        if self.strips.is_empty() {
            return Err(Error::invalid("cross section has no strips"));
        }
        for (i, s) in self.strips.iter().enumerate() {
            if !(s.width > 0.0) || !s.width.is_finite() {
                return Err(Error::invalid(format!("strip {i}: width must be > 0")));
            }
            if !s.x_start.is_finite() || !s.potential.is_finite() {
                return Err(Error::invalid(format!("strip {i}: non-finite value")));
            }
        }
        for (i, pair) in self.strips.windows(2).enumerate() {
            if pair[1].x_start <= pair[0].x_end() {
                return Err(Error::invalid(format!(
                    "strips {i} and {} overlap or are not sorted by x_start",
                    i + 1
                )));
            }
        }
        if !(self.eps_sub_rel >= 1.0) {
            return Err(Error::invalid("eps_sub_rel must be >= 1"));
        }
        if self.eps_vac_rel != 1.0 {
            return Err(Error::invalid("eps_vac_rel is fixed at 1.0"));
        }
        if !(self.edge_cutoff >= 0.0) || self.edge_cutoff >= 0.5 * self.min_width() {
            return Err(Error::invalid(format!(
                "edge_cutoff {} um must lie in [0, min(width)/2)",
                self.edge_cutoff
            )));
        }
        if self.discretization < MIN_DISCRETIZATION {
            return Err(Error::invalid(format!(
                "discretization must be >= {MIN_DISCRETIZATION}"
            )));
        }
        if let Some(idx) = self.representative_strip {
            if idx >= self.strips.len() {
                return Err(Error::invalid("representative_strip out of range"));
            }
        }
        Ok(())
    }

    /// Detects whether the geometry is mirror symmetric with even or odd
    /// potentials about its centre.
    pub fn mirror_parity(&self) -> Option<Parity> {
        let (lo, hi) = self.span();
        let centre_sum = lo + hi;
        let tol = 1e-12 * (hi - lo).abs().max(1.0);
        let n = self.strips.len();
        let mirrored = (0..n).all(|i| {
            let a = &self.strips[i];
            let b = &self.strips[n - 1 - i];
            (a.width - b.width).abs() <= tol && (a.x_start + b.x_end() - centre_sum).abs() <= tol
        });
        if !mirrored {
            return None;
        }
        let pairs = || (0..n).map(|i| (self.strips[i].potential, self.strips[n - 1 - i].potential));
        if pairs().all(|(a, b)| a == b) {
            Some(Parity::Even)
        } else if pairs().all(|(a, b)| a == -b) {
            Some(Parity::Odd)
        } else {
            None
        }
    }
}

/// Interdigital capacitor cross section: `n_fingers` fingers of equal width
/// separated by equal gaps, alternately driven at +V/2 and −V/2.
///
/// The centre finger is flagged as the representative cell.
pub fn interdigital_unit_cell(
    gap_and_finger_width: f64,
    n_fingers: usize,
    drive_voltage: f64,
) -> Result<CrossSection> {
    if !(0.1..=100.0).contains(&gap_and_finger_width) {
        return Err(Error::invalid(format!(
            "finger/gap width {gap_and_finger_width} um outside [0.1, 100]"
        )));
    }
    if n_fingers.is_multiple_of(2) || n_fingers < 5 {
        return Err(Error::invalid(format!(
            "n_fingers must be odd and >= 5 (got {n_fingers})"
        )));
    }
    let w = gap_and_finger_width;
    let strips = (0..n_fingers)
        .map(|i| {
            let sign = if i % 2 == 0 { 0.5 } else { -0.5 };
            Strip::new(2.0 * w * i as f64, w, sign * drive_voltage)
        })
        .collect();
    let mut geom = CrossSection::new(strips, SAPPHIRE_EPS_REL);
    geom.label = format!("interdigital-w{w}um-n{n_fingers}");
    geom.representative_strip = Some(n_fingers / 2);
    Ok(geom)
}
