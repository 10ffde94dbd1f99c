//! Thin-layer interface participation ratios.
//!
//! A lossy layer of thickness t and permittivity ε_i is assumed thin enough
//! that the field is uniform across it, so its energy per unit length is
//! ½ ε_i t ∫|E_layer|² ds with E_layer obtained from the surface fields of a
//! [`FieldSolution`] through the boundary conditions at that interface.

use std::collections::HashSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::em::{interdigital_unit_cell, solve_cross_section, FieldSolution};
use crate::error::{Error, Result};
use crate::units::{EPS0, NM, SAPPHIRE_EPS_REL};

/// Cutoffs at which P_SM sensitivity is reported (μm).
pub const SENSITIVITY_CUTOFFS_UM: [f64; 3] = [0.05, 0.1, 0.2];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Region {
    /// Substrate–metal.
    Sm,
    /// Substrate–air.
    Sa,
    /// Metal–air.
    Ma,
}

/// How the layer field is derived from the surface fields.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldRule {
    /// Under the strips, substrate side: E = (ε_sub/ε_i)·E⊥.
    UnderMetalPerp,
    /// Exposed substrate: tangential E continuous, normal scaled by ε_sub/ε_i.
    GapMixed,
    /// Top of the strips, vacuum side: E = (ε_vac/ε_i)·E⊥.
    MetalSurfacePerp,
}

impl Region {
    pub fn field_rule(self) -> FieldRule {
        match self {
            Region::Sm => FieldRule::UnderMetalPerp,
            Region::Sa => FieldRule::GapMixed,
            Region::Ma => FieldRule::MetalSurfacePerp,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawInterfaceSpec")]
pub struct InterfaceSpec {
    pub region: Region,
    pub thickness_nm: f64,
    pub eps_rel: f64,
    pub field_rule: FieldRule,
}

#[derive(Deserialize)]
struct RawInterfaceSpec {
    region: Region,
    thickness_nm: f64,
    eps_rel: f64,
    field_rule: Option<FieldRule>,
}

impl TryFrom<RawInterfaceSpec> for InterfaceSpec {
    type Error = Error;

    fn try_from(raw: RawInterfaceSpec) -> Result<Self> {
        let spec = InterfaceSpec::new(raw.region, raw.thickness_nm, raw.eps_rel)?;
        match raw.field_rule {
            Some(rule) if rule != spec.field_rule => Err(Error::invalid(format!(
                "field rule {rule:?} does not apply to region {:?}",
                spec.region
            ))),
            _ => Ok(spec),
        }
    }
}

impl InterfaceSpec {
    pub fn new(region: Region, thickness_nm: f64, eps_rel: f64) -> Result<Self> {
        if !(thickness_nm > 0.0) || !thickness_nm.is_finite() {
            return Err(Error::invalid("layer thickness must be > 0"));
        }
        if !(eps_rel >= 1.0) || !eps_rel.is_finite() {
            return Err(Error::invalid("layer eps_rel must be >= 1"));
        }
        Ok(Self {
            region,
            thickness_nm,
            eps_rel,
            field_rule: region.field_rule(),
        })
    }

    /// 1 nm disordered AlOx-like layer with sapphire permittivity.
    pub fn substrate_metal() -> Self {
        Self::new(Region::Sm, 1.0, SAPPHIRE_EPS_REL).expect("valid default")
    }

    /// Default layer used for SA/MA sensitivity estimates (1 nm, ε = 10.15).
    pub fn nominal(region: Region) -> Self {
        Self::new(region, 1.0, SAPPHIRE_EPS_REL).expect("valid default")
    }

    /// 5.5 nm amorphous oxide on the junction electrodes.
    pub fn junction_metal_air() -> Self {
        Self::new(Region::Ma, 5.5, SAPPHIRE_EPS_REL).expect("valid default")
    }

    pub fn with_thickness(mut self, thickness_nm: f64) -> Self {
        self.thickness_nm = thickness_nm;
        self
    }
}

fn integration_window(sol: &FieldSolution) -> (f64, f64) {
    sol.geometry
        .representative_window()
        .unwrap_or((f64::NEG_INFINITY, f64::INFINITY))
}

/// Energy per unit length stored in the layer (J/m), using the edge cutoff
/// carried by the solution's geometry.
pub fn layer_energy(sol: &FieldSolution, spec: &InterfaceSpec) -> Result<f64> {
    layer_energy_with_cutoff(sol, spec, sol.geometry.edge_cutoff)
}

pub fn layer_energy_with_cutoff(
    sol: &FieldSolution,
    spec: &InterfaceSpec,
    cutoff_um: f64,
) -> Result<f64> {
    // The surface fields diverge as 1/sqrt(distance) at strip edges, so the
    // squared-field integrals need a finite exclusion zone.
    if !(cutoff_um > 0.0) || cutoff_um >= 0.5 * sol.geometry.min_width() {
        return Err(Error::invalid(format!(
            "edge cutoff {cutoff_um} um must lie in (0, min(width)/2) for layer integrals"
        )));
    }
    let window = integration_window(sol);
    let eps_sub = sol.geometry.eps_sub_rel;
    let eps_vac = sol.geometry.eps_vac_rel;
    let eps_i = spec.eps_rel;
    let integral = match spec.field_rule {
        FieldRule::UnderMetalPerp => {
            let k = eps_sub / eps_i;
            sol.metal_square_integral(|m| k * m.e_perp_sub, window, cutoff_um)
        }
        FieldRule::MetalSurfacePerp => {
            let k = eps_vac / eps_i;
            sol.metal_square_integral(|m| k * m.e_perp_vac, window, cutoff_um)
        }
        FieldRule::GapMixed => {
            let in_window = sol
                .gaps
                .iter()
                .any(|g| g.x_hi > window.0 && g.x_lo < window.1);
            if !in_window {
                return Err(Error::invalid(
                    "no gap field samples in the integration window",
                ));
            }
            let k = eps_sub / eps_i;
            sol.gap_square_integral(|g| g.e_par, window, cutoff_um)
                + sol.gap_square_integral(|g| k * g.e_perp_sub, window, cutoff_um)
        }
    };
    Ok(0.5 * eps_i * EPS0 * spec.thickness_nm * NM * integral)
}

/// Participation ratios per region. Regions that were not requested are
/// `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticipationSet {
    pub p_sm: Option<f64>,
    pub p_sa: Option<f64>,
    pub p_ma: Option<f64>,
    pub cutoff_used: f64,
    pub geometry_id: String,
}

impl ParticipationSet {
    pub fn get(&self, region: Region) -> Option<f64> {
        match region {
            Region::Sm => self.p_sm,
            Region::Sa => self.p_sa,
            Region::Ma => self.p_ma,
        }
    }
}

/// Reference energy: the representative cell when one is flagged, the
/// whole cross section otherwise.
pub fn reference_energy(sol: &FieldSolution) -> f64 {
    sol.cell_energy_per_len.unwrap_or(sol.energy_per_len)
}

pub fn participation_set(sol: &FieldSolution, specs: &[InterfaceSpec]) -> Result<ParticipationSet> {
    participation_set_with_cutoff(sol, specs, sol.geometry.edge_cutoff)
}

pub fn participation_set_with_cutoff(
    sol: &FieldSolution,
    specs: &[InterfaceSpec],
    cutoff_um: f64,
) -> Result<ParticipationSet> {
    let mut seen = HashSet::new();
    for s in specs {
        if !seen.insert(s.region) {
            return Err(Error::invalid(format!("duplicate region {:?}", s.region)));
        }
    }
    let total = reference_energy(sol);
    let mut set = ParticipationSet {
        p_sm: None,
        p_sa: None,
        p_ma: None,
        cutoff_used: cutoff_um,
        geometry_id: sol.geometry.label.clone(),
    };
    for spec in specs {
        let p = layer_energy_with_cutoff(sol, spec, cutoff_um)? / total;
        match spec.region {
            Region::Sm => set.p_sm = Some(p),
            Region::Sa => set.p_sa = Some(p),
            Region::Ma => set.p_ma = Some(p),
        }
    }
    Ok(set)
}

/// P for one layer evaluated at several cutoffs on the same solution.
pub fn cutoff_sensitivity(
    sol: &FieldSolution,
    spec: &InterfaceSpec,
    cutoffs_um: &[f64],
) -> Result<Vec<(f64, f64)>> {
    let total = reference_energy(sol);
    cutoffs_um
        .iter()
        .map(|&c| Ok((c, layer_energy_with_cutoff(sol, spec, c)? / total)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub n_fingers: usize,
    pub sm: InterfaceSpec,
    pub sa: InterfaceSpec,
    pub ma: InterfaceSpec,
    pub edge_cutoff_um: f64,
    pub discretization: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            n_fingers: 7,
            sm: InterfaceSpec::substrate_metal(),
            sa: InterfaceSpec::nominal(Region::Sa),
            ma: InterfaceSpec::nominal(Region::Ma),
            edge_cutoff_um: crate::em::DEFAULT_EDGE_CUTOFF_UM,
            discretization: crate::em::DEFAULT_DISCRETIZATION,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub width_um: f64,
    pub p_sm: Option<f64>,
    pub p_sa: Option<f64>,
    pub p_ma: Option<f64>,
    pub cutoff_um: f64,
    pub n_fingers: usize,
    /// Set when this width failed; the sweep carries on.
    pub error: Option<String>,
}

/// P_SM versus finger/gap width with default SA/MA sensitivity layers.
pub fn psm_width_sweep(
    widths_um: &[f64],
    spec: &InterfaceSpec,
    n_fingers: usize,
) -> Result<Vec<SweepPoint>> {
    let config = SweepConfig {
        n_fingers,
        sm: *spec,
        ..SweepConfig::default()
    };
    width_sweep(widths_um, &config)
}

pub fn width_sweep(widths_um: &[f64], config: &SweepConfig) -> Result<Vec<SweepPoint>> {
    if widths_um.is_empty() {
        return Err(Error::invalid("empty width list"));
    }
    if config.sm.region != Region::Sm {
        return Err(Error::invalid("sweep requires an SM layer spec"));
    }
    for w in widths_um {
        if !(0.5..=50.0).contains(w) {
            return Err(Error::invalid(format!("width {w} um outside [0.5, 50]")));
        }
    }
    if widths_um.windows(2).any(|p| p[1] <= p[0]) {
        return Err(Error::invalid("widths must be strictly ascending"));
    }
    let points = widths_um
        .par_iter()
        .map(|&w| {
            let result = interdigital_unit_cell(w, config.n_fingers, 1.0)
                .map(|g| {
                    g.with_discretization(config.discretization)
                        .with_edge_cutoff(config.edge_cutoff_um)
                })
                .and_then(|g| solve_cross_section(&g))
                .and_then(|sol| participation_set(&sol, &[config.sm, config.sa, config.ma]));
            match result {
                Ok(set) => SweepPoint {
                    width_um: w,
                    p_sm: set.p_sm,
                    p_sa: set.p_sa,
                    p_ma: set.p_ma,
                    cutoff_um: config.edge_cutoff_um,
                    n_fingers: config.n_fingers,
                    error: None,
                },
                Err(e) => SweepPoint {
                    width_um: w,
                    p_sm: None,
                    p_sa: None,
                    p_ma: None,
                    cutoff_um: config.edge_cutoff_um,
                    n_fingers: config.n_fingers,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();
    Ok(points)
}

/// `n` evenly spaced widths from `lo` to `hi` inclusive.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n)
            .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
            .collect(),
    }
}

/// CSV columns: width_um, p_sm, p_sa, p_ma, cutoff_um, n_fingers. Failed
/// points leave the ratio columns empty.
pub fn write_sweep_csv<W: std::io::Write>(points: &[SweepPoint], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["width_um", "p_sm", "p_sa", "p_ma", "cutoff_um", "n_fingers"])?;
    let fmt = |p: Option<f64>| p.map(|v| format!("{v:.9e}")).unwrap_or_default();
    for p in points {
        w.write_record([
            format!("{}", p.width_um),
            fmt(p.p_sm),
            fmt(p.p_sa),
            fmt(p.p_ma),
            format!("{}", p.cutoff_um),
            p.n_fingers.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::em::CrossSection;

    fn pair_solution() -> FieldSolution {
        let geom = CrossSection::coplanar_pair(10.0, 10.0, 1.0, SAPPHIRE_EPS_REL)
            .with_discretization(64)
            .with_edge_cutoff(0.01);
        solve_cross_section(&geom).unwrap()
    }

    #[test]
    fn spec_validation() {
        assert!(InterfaceSpec::new(Region::Sm, 0.0, 10.0).is_err());
        assert!(InterfaceSpec::new(Region::Sm, 1.0, 0.9).is_err());
        let bad = r#"{"region":"SM","thickness_nm":1,"eps_rel":10,"field_rule":"gap_mixed"}"#;
        assert!(serde_json::from_str::<InterfaceSpec>(bad).is_err());
        let good = r#"{"region":"MA","thickness_nm":5.5,"eps_rel":10.15}"#;
        let spec: InterfaceSpec = serde_json::from_str(good).unwrap();
        assert_eq!(spec, InterfaceSpec::junction_metal_air());
    }

    #[test]
    fn thickness_doubles_energy() {
        let sol = pair_solution();
        let spec = InterfaceSpec::substrate_metal();
        let e1 = layer_energy(&sol, &spec).unwrap();
        let e2 = layer_energy(&sol, &spec.with_thickness(2.0)).unwrap();
        assert!((e2 / e1 - 2.0).abs() < 1e-12);
    }

    #[test]
    fn sm_dominates_sa_on_pair() {
        let sol = pair_solution();
        let sm = layer_energy(&sol, &InterfaceSpec::nominal(Region::Sm)).unwrap();
        let sa = layer_energy(&sol, &InterfaceSpec::nominal(Region::Sa)).unwrap();
        assert!(sm > 0.0 && sa > 0.0);
        assert!(sm > sa, "sm {sm} sa {sa}");
    }

    #[test]
    fn duplicate_regions_rejected() {
        let sol = pair_solution();
        let spec = InterfaceSpec::substrate_metal();
        assert!(matches!(
            participation_set(&sol, &[spec, spec]),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn unrequested_regions_absent() {
        let sol = pair_solution();
        let set = participation_set(&sol, &[InterfaceSpec::substrate_metal()]).unwrap();
        assert!(set.p_sm.unwrap() > 0.0);
        assert!(set.p_sa.is_none() && set.p_ma.is_none());
        assert_eq!(set.cutoff_used, 0.01);
    }

    #[test]
    fn zero_cutoff_rejected_for_layer_integrals() {
        let sol = pair_solution();
        let spec = InterfaceSpec::substrate_metal();
        assert!(layer_energy_with_cutoff(&sol, &spec, 0.0).is_err());
    }

    #[test]
    fn sweep_rejects_bad_width_lists() {
        let spec = InterfaceSpec::substrate_metal();
        assert!(psm_width_sweep(&[2.0, 1.0], &spec, 7).is_err());
        assert!(psm_width_sweep(&[0.2], &spec, 7).is_err());
        assert!(psm_width_sweep(&[], &spec, 7).is_err());
    }

    #[test]
    fn sweep_marks_failed_points() {
        let spec = InterfaceSpec::substrate_metal();
        // Even finger count fails every point without aborting the sweep.
        let points = psm_width_sweep(&[1.0, 2.0], &spec, 6).unwrap();
        assert_eq!(points.len(), 2);
        assert!(points.iter().all(|p| p.error.is_some() && p.p_sm.is_none()));
        let mut buf = Vec::new();
        write_sweep_csv(&points, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("width_um,p_sm,p_sa,p_ma,cutoff_um,n_fingers\n"));
        assert!(text.contains("\n1,,,,0.001,6\n"));
    }

    #[test]
    fn linspace_endpoints() {
        let v = linspace(1.0, 20.0, 20);
        assert_eq!(v.len(), 20);
        assert_eq!(v[0], 1.0);
        assert_eq!(v[19], 20.0);
        assert_eq!(linspace(3.0, 4.0, 1), vec![3.0]);
    }
}
