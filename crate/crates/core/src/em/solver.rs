//! Boundary-element solve for coplanar zero-thickness strips.
//!
//! Strips lie on the vacuum/substrate interface, so the two half-spaces can
//! be folded into a homogeneous medium with permittivity
//! (ε_vac + ε_sub)/2 · ε₀. The unknown is the total surface charge density on
//! each strip, discretised as piecewise constants on a cosine-graded mesh and
//! collocated at the element midpoints (in angle). A free additive potential
//! together with a zero-net-charge constraint fixes the 2D log gauge.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::geometry::{CrossSection, Parity};
use crate::error::{Error, Result};
use crate::units::{EPS0, UM};

const RESIDUAL_TOL: f64 = 1e-8;

/// Field samples on one boundary element of a strip.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetalSample {
    pub strip: usize,
    /// Element bounds and sample point (μm).
    pub x_lo: f64,
    pub x_hi: f64,
    pub x: f64,
    /// Charge carried by the element per unit length (C/m).
    pub charge: f64,
    /// Surface charge density at `x` (C/m²).
    pub sigma: f64,
    /// Normal field just below the strip, in the substrate (V/m).
    pub e_perp_sub: f64,
    /// Normal field just above the strip, in vacuum (V/m).
    pub e_perp_vac: f64,
}

/// Field samples on the exposed substrate between two strips.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapSample {
    pub gap: usize,
    pub x_lo: f64,
    pub x_hi: f64,
    pub x: f64,
    /// Tangential field along the surface (V/m).
    pub e_par: f64,
    /// Normal field on the substrate side (V/m). Zero for coplanar strips.
    pub e_perp_sub: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FieldSolution {
    pub geometry: CrossSection,
    pub metal: Vec<MetalSample>,
    pub gaps: Vec<GapSample>,
    /// Net charge per unit length on each strip (C/m).
    pub strip_charge: Vec<f64>,
    /// 2U/ΔV² with ΔV the spread of applied potentials (F/m).
    pub capacitance_per_len: f64,
    /// ½ Σ qᵢVᵢ (J/m).
    pub energy_per_len: f64,
    /// Energy of the representative cell, ½ q_c (V_c − V_mid) (J/m).
    pub cell_energy_per_len: Option<f64>,
    /// Relative residual of the collocation system.
    pub residual_norm: f64,
}

#[derive(Debug, Clone, Copy)]
struct Element {
    strip: usize,
    lo: f64,
    hi: f64,
    x: f64,
    dtheta: f64,
}

impl Element {
    fn len(&self) -> f64 {
        self.hi - self.lo
    }
}

/// Cosine-graded subdivision of [a, b] into `n` elements with angular
/// midpoints. Returns (lo, hi, x_mid, dθ) per element.
pub(crate) fn cosine_mesh(a: f64, b: f64, n: usize) -> Vec<(f64, f64, f64, f64)> {
    let w = b - a;
    let dtheta = PI / n as f64;
    let at = |theta: f64| a + 0.5 * w * (1.0 - theta.cos());
    let nodes: Vec<f64> = (0..=n)
        .map(|k| match k {
            0 => a,
            k if k == n => b,
            k => at(k as f64 * dtheta),
        })
        .collect();
    (0..n)
        .map(|k| {
            (
                nodes[k],
                nodes[k + 1],
                at((k as f64 + 0.5) * dtheta),
                dtheta,
            )
        })
        .collect()
}

fn build_mesh(geom: &CrossSection) -> Vec<Element> {
    geom.strips
        .iter()
        .enumerate()
        .flat_map(|(k, s)| {
            cosine_mesh(s.x_start, s.x_end(), geom.discretization)
                .into_iter()
                .map(move |(lo, hi, x, dtheta)| Element {
                    strip: k,
                    lo,
                    hi,
                    x,
                    dtheta,
                })
        })
        .collect()
}

/// ∫ ln|u| du antiderivative.
fn log_antiderivative(u: f64) -> f64 {
    if u == 0.0 {
        0.0
    } else {
        u * u.abs().ln() - u
    }
}

/// ∫_{lo}^{hi} ln|x − x'| dx' (μm units).
fn log_integral(x: f64, lo: f64, hi: f64) -> f64 {
    log_antiderivative(hi - x) - log_antiderivative(lo - x)
}

/// Index of the mirror image of element `j`, assuming a mirror-symmetric
/// geometry meshed per strip with identical counts.
fn mirror_index(j: usize, n_per_strip: usize, n_strips: usize) -> usize {
    let strip = j / n_per_strip;
    let k = j % n_per_strip;
    (n_strips - 1 - strip) * n_per_strip + (n_per_strip - 1 - k)
}

/// Solves for the scaled densities s_j = σ_j·UM/(2π ε_eff ε₀), so that the
/// collocation potential reads φ(x_i) = −Σ s_j ∫ln|x_i − x'|dx' + C.
fn solve_densities(
    geom: &CrossSection,
    mesh: &[Element],
    use_symmetry: bool,
) -> Result<(Vec<f64>, f64)> {
    let n = mesh.len();
    let parity = if use_symmetry {
        geom.mirror_parity()
    } else {
        None
    };
    let rhs_at = |i: usize| geom.strips[mesh[i].strip].potential;

    let densities = match parity {
        None => {
            let mut a = DMatrix::<f64>::zeros(n + 1, n + 1);
            let mut b = DVector::<f64>::zeros(n + 1);
            for i in 0..n {
                for (j, e) in mesh.iter().enumerate() {
                    a[(i, j)] = -log_integral(mesh[i].x, e.lo, e.hi);
                }
                a[(i, n)] = 1.0;
                b[i] = rhs_at(i);
            }
            for (j, e) in mesh.iter().enumerate() {
                a[(n, j)] = e.len();
            }
            let x = lu_solve(a, b)?;
            (x.as_slice()[..n].to_vec(), x[n])
        }
        Some(parity) => {
            let per = geom.discretization;
            let ns = geom.strips.len();
            let sign = match parity {
                Parity::Even => 1.0,
                Parity::Odd => -1.0,
            };
            // Representatives: the lower index of each mirror pair. Odd parity
            // forces self-mirrored elements to zero charge.
            let reps: Vec<usize> = (0..n)
                .filter(|&j| {
                    let m = mirror_index(j, per, ns);
                    j < m || (j == m && parity == Parity::Even)
                })
                .collect();
            let r = reps.len();
            let with_gauge = parity == Parity::Even;
            let dim = if with_gauge { r + 1 } else { r };
            let mut a = DMatrix::<f64>::zeros(dim, dim);
            let mut b = DVector::<f64>::zeros(dim);
            for (ri, &i) in reps.iter().enumerate() {
                for (rj, &j) in reps.iter().enumerate() {
                    let m = mirror_index(j, per, ns);
                    let mut v = -log_integral(mesh[i].x, mesh[j].lo, mesh[j].hi);
                    if m != j {
                        v -= sign * log_integral(mesh[i].x, mesh[m].lo, mesh[m].hi);
                    }
                    a[(ri, rj)] = v;
                }
                if with_gauge {
                    a[(ri, r)] = 1.0;
                }
                b[ri] = rhs_at(i);
            }
            if with_gauge {
                for (rj, &j) in reps.iter().enumerate() {
                    let m = mirror_index(j, per, ns);
                    a[(r, rj)] = if m != j {
                        mesh[j].len() + mesh[m].len()
                    } else {
                        mesh[j].len()
                    };
                }
            }
            let x = lu_solve(a, b)?;
            let mut s = vec![0.0; n];
            for (rj, &j) in reps.iter().enumerate() {
                let m = mirror_index(j, per, ns);
                s[j] = x[rj];
                if m != j {
                    s[m] = sign * x[rj];
                }
            }
            let gauge = if with_gauge { x[r] } else { 0.0 };
            (s, gauge)
        }
    };
    Ok(densities)
}

fn lu_solve(a: DMatrix<f64>, b: DVector<f64>) -> Result<DVector<f64>> {
    let lu = a.clone().lu();
    let x = lu.solve(&b).ok_or(Error::NumericalFailure {
        residual: f64::INFINITY,
    })?;
    let residual = (&a * &x - &b).norm() / b.norm().max(f64::MIN_POSITIVE);
    if !residual.is_finite() || residual > RESIDUAL_TOL {
        return Err(Error::NumericalFailure { residual });
    }
    Ok(x)
}

/// Full-system residual ‖Ax − b‖/‖b‖ of a density vector.
fn collocation_residual(geom: &CrossSection, mesh: &[Element], s: &[f64], gauge: f64) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for ei in mesh {
        let phi: f64 = mesh
            .iter()
            .zip(s)
            .map(|(e, &sj)| -sj * log_integral(ei.x, e.lo, e.hi))
            .sum::<f64>()
            + gauge;
        let v = geom.strips[ei.strip].potential;
        num += (phi - v).powi(2);
        den += v * v;
    }
    let total: f64 = mesh.iter().zip(s).map(|(e, &sj)| e.len() * sj).sum();
    num += total * total;
    num.sqrt() / den.sqrt().max(f64::MIN_POSITIVE)
}

/// Solve the electrostatic problem for `geom`.
pub fn solve_cross_section(geom: &CrossSection) -> Result<FieldSolution> {
    solve_with(geom, true)
}

pub(crate) fn solve_with(geom: &CrossSection, use_symmetry: bool) -> Result<FieldSolution> {
    geom.validate()?;
    if geom.strips.len() < 2 {
        return Err(Error::invalid("at least two strips are required"));
    }
    let v0 = geom.strips[0].potential;
    if geom.strips.iter().all(|s| s.potential == v0) {
        return Err(Error::invalid("all strips are at the same potential"));
    }

    let mesh = build_mesh(geom);
    let (scaled, gauge) = solve_densities(geom, &mesh, use_symmetry)?;
    let residual_norm = collocation_residual(geom, &mesh, &scaled, gauge);
    if !(residual_norm <= RESIDUAL_TOL) {
        return Err(Error::NumericalFailure {
            residual: residual_norm,
        });
    }

    let eps_sum = geom.eps_vac_rel + geom.eps_sub_rel;
    let eps_eff = 0.5 * eps_sum;
    let to_sigma = 2.0 * PI * eps_eff * EPS0 / UM;

    let metal: Vec<MetalSample> = mesh
        .iter()
        .zip(&scaled)
        .map(|(e, &s)| {
            let strip = &geom.strips[e.strip];
            let mean_sigma = s * to_sigma;
            // σ(x)·sqrt((x−a)(b−x)) is smooth; the element mean fixes it.
            let amplitude = mean_sigma * e.len() / e.dtheta;
            let sigma = amplitude / edge_weight(e.x, strip.x_start, strip.x_end());
            let e_normal = sigma / (EPS0 * eps_sum);
            MetalSample {
                strip: e.strip,
                x_lo: e.lo,
                x_hi: e.hi,
                x: e.x,
                charge: mean_sigma * e.len() * UM,
                sigma,
                e_perp_sub: e_normal,
                e_perp_vac: e_normal,
            }
        })
        .collect();

    let mut strip_charge = vec![0.0; geom.strips.len()];
    for m in &metal {
        strip_charge[m.strip] += m.charge;
    }

    let gaps = geom
        .gaps()
        .into_iter()
        .enumerate()
        .flat_map(|(g, (a, b))| {
            cosine_mesh(a, b, geom.discretization)
                .into_iter()
                .map(move |(lo, hi, x, _)| (g, lo, hi, x))
        })
        .map(|(gap, lo, hi, x)| {
            let e_par = mesh
                .iter()
                .zip(&scaled)
                .map(|(e, &s)| s * ((e.lo - x).abs().ln() - (e.hi - x).abs().ln()))
                .sum::<f64>()
                / UM;
            GapSample {
                gap,
                x_lo: lo,
                x_hi: hi,
                x,
                e_par,
                e_perp_sub: 0.0,
            }
        })
        .collect();

    let potentials = geom.potentials();
    let energy_per_len = 0.5
        * strip_charge
            .iter()
            .zip(&potentials)
            .map(|(q, v)| q * v)
            .sum::<f64>();
    let v_max = potentials.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let v_min = potentials.iter().cloned().fold(f64::INFINITY, f64::min);
    let spread = v_max - v_min;
    let capacitance_per_len = 2.0 * energy_per_len / (spread * spread);
    let v_mid = 0.5 * (v_max + v_min);
    let cell_energy_per_len = geom
        .representative_strip
        .map(|c| 0.5 * strip_charge[c] * (potentials[c] - v_mid));

    if !(energy_per_len > 0.0) {
        return Err(Error::NumericalFailure {
            residual: residual_norm,
        });
    }

    Ok(FieldSolution {
        geometry: geom.clone(),
        metal,
        gaps,
        strip_charge,
        capacitance_per_len,
        energy_per_len,
        cell_energy_per_len,
        residual_norm,
    })
}

/// sqrt((x − a)(b − x)).
pub(crate) fn edge_weight(x: f64, a: f64, b: f64) -> f64 {
    ((x - a) * (b - x)).max(0.0).sqrt()
}

/// Angle coordinate of `x` on the segment [a, b].
fn segment_angle(x: f64, a: f64, b: f64) -> f64 {
    (1.0 - 2.0 * (x - a) / (b - a)).clamp(-1.0, 1.0).acos()
}

/// Integrals of sampled quantities that behave like f(x)/sqrt((x−a)(b−x))
/// on a segment [a, b], with f smooth.
///
/// Each sample carries its element bounds; the smooth factor is taken
/// constant per element, which keeps the edge singularity exact.
pub(crate) struct EdgeSingular {
    pub seg: (f64, f64),
    pub lo: f64,
    pub hi: f64,
    pub x: f64,
    pub value: f64,
}

impl EdgeSingular {
    fn amplitude(&self) -> f64 {
        self.value * edge_weight(self.x, self.seg.0, self.seg.1)
    }

    fn clip(&self, window: (f64, f64)) -> Option<(f64, f64)> {
        let lo = self.lo.max(window.0);
        let hi = self.hi.min(window.1);
        (hi > lo).then_some((lo, hi))
    }

    /// ∫ value dx over the element ∩ window (value·μm).
    pub fn integral(&self, window: (f64, f64)) -> f64 {
        let Some((lo, hi)) = self.clip(window) else {
            return 0.0;
        };
        let (a, b) = self.seg;
        self.amplitude() * (segment_angle(hi, a, b) - segment_angle(lo, a, b))
    }

    /// ∫ value² dx over the element ∩ window (value²·μm).
    pub fn square_integral(&self, window: (f64, f64)) -> f64 {
        let Some((lo, hi)) = self.clip(window) else {
            return 0.0;
        };
        let (a, b) = self.seg;
        let logit = |x: f64| ((x - a) / (b - x)).ln();
        let amp = self.amplitude();
        amp * amp * (logit(hi) - logit(lo)) / (b - a)
    }
}

impl FieldSolution {
    fn strip_segment(&self, strip: usize) -> (f64, f64) {
        let s = &self.geometry.strips[strip];
        (s.x_start, s.x_end())
    }

    fn gap_segment(&self, gap: usize) -> (f64, f64) {
        let g = &self.geometry.strips;
        (g[gap].x_end(), g[gap + 1].x_start)
    }

    /// ∫ f(sample)² dx over metal within `window`, excluding `cutoff` μm at
    /// every strip edge. Result in (unit of f)²·m.
    pub fn metal_square_integral(
        &self,
        field: impl Fn(&MetalSample) -> f64,
        window: (f64, f64),
        cutoff: f64,
    ) -> f64 {
        self.metal
            .iter()
            .map(|m| {
                let seg = self.strip_segment(m.strip);
                let w = (window.0.max(seg.0 + cutoff), window.1.min(seg.1 - cutoff));
                EdgeSingular {
                    seg,
                    lo: m.x_lo,
                    hi: m.x_hi,
                    x: m.x,
                    value: field(m),
                }
                .square_integral(w)
            })
            .sum::<f64>()
            * UM
    }

    /// ∫ f(sample)² dx over gaps within `window`, excluding `cutoff` μm next
    /// to each strip edge. Result in (unit of f)²·m.
    pub fn gap_square_integral(
        &self,
        field: impl Fn(&GapSample) -> f64,
        window: (f64, f64),
        cutoff: f64,
    ) -> f64 {
        self.gaps
            .iter()
            .map(|g| {
                let seg = self.gap_segment(g.gap);
                let w = (window.0.max(seg.0 + cutoff), window.1.min(seg.1 - cutoff));
                EdgeSingular {
                    seg,
                    lo: g.x_lo,
                    hi: g.x_hi,
                    x: g.x,
                    value: field(g),
                }
                .square_integral(w)
            })
            .sum::<f64>()
            * UM
    }

    /// Strip charges recovered from the sampled normal fields via Gauss's
    /// law, ε₀(ε_sub E_sub + ε_vac E_vac) integrated along each strip (C/m).
    pub fn charges_from_fields(&self) -> Vec<f64> {
        let eps_sub = self.geometry.eps_sub_rel;
        let eps_vac = self.geometry.eps_vac_rel;
        let mut q = vec![0.0; self.geometry.strips.len()];
        for m in &self.metal {
            let seg = self.strip_segment(m.strip);
            let d = EPS0 * (eps_sub * m.e_perp_sub + eps_vac * m.e_perp_vac);
            q[m.strip] += EdgeSingular {
                seg,
                lo: m.x_lo,
                hi: m.x_hi,
                x: m.x,
                value: d,
            }
            .integral(seg)
                * UM;
        }
        q
    }

    /// Potential drop across each gap from the line integral of the sampled
    /// tangential field (V).
    pub fn gap_voltages(&self) -> Vec<f64> {
        let mut v = vec![0.0; self.geometry.strips.len().saturating_sub(1)];
        for g in &self.gaps {
            let seg = self.gap_segment(g.gap);
            v[g.gap] += EdgeSingular {
                seg,
                lo: g.x_lo,
                hi: g.x_hi,
                x: g.x,
                value: g.e_par,
            }
            .integral(seg)
                * UM;
        }
        v
    }

    /// Electric energy per length rebuilt purely from the sampled fields:
    /// strip potentials from gap line integrals, charges from Gauss's law.
    pub fn energy_from_fields(&self) -> f64 {
        let charges = self.charges_from_fields();
        let drops = self.gap_voltages();
        let mut phi = self.geometry.strips[0].potential;
        let mut energy = 0.5 * charges[0] * phi;
        for (k, drop) in drops.iter().enumerate() {
            phi -= drop;
            energy += 0.5 * charges[k + 1] * phi;
        }
        energy
    }

    /// Writes the y = 0 field profile as CSV: x_um, sigma, e_perp_sub,
    /// e_perp_vac, e_par, sorted by x.
    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut rows: Vec<[f64; 5]> = self
            .metal
            .iter()
            .map(|m| [m.x, m.sigma, m.e_perp_sub, m.e_perp_vac, 0.0])
            .chain(
                self.gaps
                    .iter()
                    .map(|g| [g.x, 0.0, g.e_perp_sub, 0.0, g.e_par]),
            )
            .collect();
        rows.sort_by(|a, b| a[0].total_cmp(&b[0]));
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["x_um", "sigma", "e_perp_sub", "e_perp_vac", "e_par"])?;
        for r in rows {
            w.write_record(r.iter().map(|v| format!("{v:.9e}")))?;
        }
        w.flush()?;
        Ok(())
    }
}
