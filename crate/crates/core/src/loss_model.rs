//! Participation-weighted dielectric loss model, 1/Q = Σ P_i tanδ_i, and its
//! least-squares fits against measured quality factors.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Column-normalised condition number above which a design is rejected.
const MAX_CONDITION: f64 = 1e8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LossModel {
    /// 1/Q = P_SM tanδ_SM
    #[serde(rename = "sm")]
    SmOnly,
    /// 1/Q = P_SM tanδ_SM + 1/Q₀
    #[serde(rename = "sm+q0")]
    SmPlusQ0,
    /// 1/Q = P_SM tanδ_SM + P_J tanδ_J
    #[serde(rename = "sm+j")]
    SmPlusJ,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Weighting {
    #[serde(rename = "none")]
    None,
    /// w = 1/var(1/Q) with var(1/Q) = σ_Q²/Q⁴. Points without a usable σ_Q
    /// get the median weight of the others.
    #[default]
    #[serde(rename = "invvar")]
    InverseVariance,
}

/// One (possibly aggregated) measurement entering a loss fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossDataPoint {
    pub p_sm: f64,
    pub p_j: f64,
    /// Purcell-subtracted quality factor.
    pub q_mean: f64,
    pub q_std: Option<f64>,
    pub group_id: String,
    /// Devices aggregated into this point.
    #[serde(default = "one")]
    pub n_devices: usize,
}

fn one() -> usize {
    1
}

impl LossDataPoint {
    pub fn new(p_sm: f64, p_j: f64, q_mean: f64, q_std: Option<f64>) -> Self {
        Self {
            p_sm,
            p_j,
            q_mean,
            q_std,
            group_id: String::new(),
            n_devices: 1,
        }
    }

    pub fn inverse_q(&self) -> f64 {
        1.0 / self.q_mean
    }

    fn validate(&self, index: usize) -> Result<()> {
        let ok = self.p_sm >= 0.0
            && self.p_j >= 0.0
            && self.q_mean > 0.0
            && self.q_mean.is_finite()
            && self.q_std.is_none_or(|s| s >= 0.0);
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "data point {index} ({}) violates p >= 0, q_mean > 0, q_std >= 0",
                self.group_id
            )))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterEstimate {
    pub name: String,
    pub value: f64,
    /// `None` when the parameter was clamped or the fit has no spare degrees
    /// of freedom.
    pub stderr: Option<f64>,
    pub rel_stderr: Option<f64>,
    pub clamped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossFitResult {
    pub model: LossModel,
    pub weighting: Weighting,
    pub tan_d_sm: f64,
    pub tan_d_j: Option<f64>,
    /// Infinite when 1/Q₀ is clamped at zero.
    pub q0: Option<f64>,
    pub q0_stderr: Option<f64>,
    /// Linear parameters in design-column order: tanδ_SM, then 1/Q₀ or tanδ_J.
    pub parameters: Vec<ParameterEstimate>,
    pub covariance: Vec<Vec<f64>>,
    pub observed_inverse_q: Vec<f64>,
    pub fitted_inverse_q: Vec<f64>,
    /// observed − fitted, in 1/Q.
    pub residuals: Vec<f64>,
    pub weights: Vec<f64>,
    pub chi_squared: f64,
    pub dof: usize,
    pub condition_number: f64,
}

impl LossFitResult {
    /// Model 1/Q at the given participations.
    pub fn predict_inverse_q(&self, p_sm: f64, p_j: f64) -> f64 {
        let extra = match self.model {
            LossModel::SmOnly => 0.0,
            LossModel::SmPlusQ0 => self.parameters[1].value,
            LossModel::SmPlusJ => p_j * self.parameters[1].value,
        };
        p_sm * self.tan_d_sm + extra
    }

    pub fn predict_q(&self, p_sm: f64, p_j: f64) -> f64 {
        1.0 / self.predict_inverse_q(p_sm, p_j)
    }

    pub fn parameter(&self, name: &str) -> Option<&ParameterEstimate> {
        self.parameters.iter().find(|p| p.name == name)
    }
}

fn check_nonnegative(values: &[(&str, f64)]) -> Result<()> {
    for (name, v) in values {
        if !(*v >= 0.0) {
            return Err(Error::invalid(format!("{name} must be >= 0 (got {v})")));
        }
    }
    Ok(())
}

/// 1/Q = P_SM tanδ_SM + P_J tanδ_J.
pub fn predict_inverse_q(p_sm: f64, p_j: f64, tan_d_sm: f64, tan_d_j: f64) -> Result<f64> {
    check_nonnegative(&[
        ("p_sm", p_sm),
        ("p_j", p_j),
        ("tan_d_sm", tan_d_sm),
        ("tan_d_j", tan_d_j),
    ])?;
    Ok(p_sm * tan_d_sm + p_j * tan_d_j)
}

/// P_SM + (tanδ_J/tanδ_SM)·P_J; the two-term model reads
/// 1/Q = tanδ_SM · normalized_pr.
pub fn normalized_pr(p_sm: f64, p_j: f64, tan_d_sm: f64, tan_d_j: f64) -> Result<f64> {
    if !(tan_d_sm > 0.0) {
        return Err(Error::invalid("tan_d_sm must be > 0"));
    }
    Ok(p_sm + tan_d_j / tan_d_sm * p_j)
}

/// Fraction of 1/Q carried by the junction term.
pub fn junction_fraction(p_sm: f64, p_j: f64, tan_d_sm: f64, tan_d_j: f64) -> Result<f64> {
    let total = predict_inverse_q(p_sm, p_j, tan_d_sm, tan_d_j)?;
    if total == 0.0 {
        return Err(Error::invalid("zero modeled loss"));
    }
    Ok(p_j * tan_d_j / total)
}

pub fn fit_sm_only(points: &[LossDataPoint], weighting: Weighting) -> Result<LossFitResult> {
    fit_model(points, LossModel::SmOnly, weighting)
}

pub fn fit_sm_plus_q0(points: &[LossDataPoint], weighting: Weighting) -> Result<LossFitResult> {
    fit_model(points, LossModel::SmPlusQ0, weighting)
}

pub fn fit_sm_plus_j(points: &[LossDataPoint], weighting: Weighting) -> Result<LossFitResult> {
    fit_model(points, LossModel::SmPlusJ, weighting)
}

pub fn fit_model(
    points: &[LossDataPoint],
    model: LossModel,
    weighting: Weighting,
) -> Result<LossFitResult> {
    for (i, p) in points.iter().enumerate() {
        p.validate(i)?;
    }
    let (names, columns): (Vec<&str>, Vec<Vec<f64>>) = match model {
        LossModel::SmOnly => (
            vec!["tan_d_sm"],
            vec![points.iter().map(|p| p.p_sm).collect()],
        ),
        LossModel::SmPlusQ0 => (
            vec!["tan_d_sm", "inv_q0"],
            vec![
                points.iter().map(|p| p.p_sm).collect(),
                vec![1.0; points.len()],
            ],
        ),
        LossModel::SmPlusJ => (
            vec!["tan_d_sm", "tan_d_j"],
            vec![
                points.iter().map(|p| p.p_sm).collect(),
                points.iter().map(|p| p.p_j).collect(),
            ],
        ),
    };
    let observed: Vec<f64> = points.iter().map(LossDataPoint::inverse_q).collect();
    let weights = fit_weights(points, weighting);
    let fit = nonnegative_wls(&columns, &observed, &weights)?;

    let parameters: Vec<ParameterEstimate> = names
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let value = fit.beta[j];
            let stderr = if fit.clamped[j] {
                None
            } else {
                fit.covariance.as_ref().map(|c| c[(j, j)].max(0.0).sqrt())
            };
            ParameterEstimate {
                name: (*name).to_string(),
                value,
                stderr,
                rel_stderr: stderr.filter(|_| value != 0.0).map(|s| s / value.abs()),
                clamped: fit.clamped[j],
            }
        })
        .collect();

    let fitted: Vec<f64> = (0..points.len())
        .map(|i| columns.iter().zip(&fit.beta).map(|(c, b)| c[i] * b).sum())
        .collect();
    let residuals: Vec<f64> = observed.iter().zip(&fitted).map(|(o, f)| o - f).collect();

    let (tan_d_j, q0, q0_stderr) = match model {
        LossModel::SmOnly => (None, None, None),
        LossModel::SmPlusJ => (Some(parameters[1].value), None, None),
        LossModel::SmPlusQ0 => {
            let inv = &parameters[1];
            let q0 = if inv.value > 0.0 {
                1.0 / inv.value
            } else {
                f64::INFINITY
            };
            // δ(1/x) = δx / x²
            let se = inv.stderr.filter(|_| inv.value > 0.0).map(|s| s * q0 * q0);
            (None, Some(q0), se)
        }
    };

    let k = names.len();
    let covariance = (0..k)
        .map(|i| {
            (0..k)
                .map(|j| fit.covariance.as_ref().map_or(0.0, |c| c[(i, j)]))
                .collect()
        })
        .collect();

    Ok(LossFitResult {
        model,
        weighting,
        tan_d_sm: parameters[0].value,
        tan_d_j,
        q0,
        q0_stderr,
        parameters,
        covariance,
        observed_inverse_q: observed,
        fitted_inverse_q: fitted,
        residuals,
        weights,
        chi_squared: fit.chi_squared,
        dof: fit.dof,
        condition_number: fit.condition_number,
    })
}

pub fn fit_weights(points: &[LossDataPoint], weighting: Weighting) -> Vec<f64> {
    match weighting {
        Weighting::None => vec![1.0; points.len()],
        Weighting::InverseVariance => {
            let raw: Vec<Option<f64>> = points
                .iter()
                .map(|p| {
                    p.q_std
                        .filter(|s| *s > 0.0)
                        .map(|s| p.q_mean.powi(4) / (s * s))
                })
                .collect();
            let mut known: Vec<f64> = raw.iter().flatten().copied().collect();
            if known.is_empty() {
                return vec![1.0; points.len()];
            }
            known.sort_by(f64::total_cmp);
            let fill = median_sorted(&known);
            raw.into_iter().map(|w| w.unwrap_or(fill)).collect()
        }
    }
}

fn median_sorted(v: &[f64]) -> f64 {
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

struct WlsFit {
    beta: Vec<f64>,
    clamped: Vec<bool>,
    covariance: Option<DMatrix<f64>>,
    chi_squared: f64,
    dof: usize,
    condition_number: f64,
}

/// Condition number of the design after scaling each column to unit norm.
fn scaled_condition(design: &DMatrix<f64>) -> f64 {
    let mut scaled = design.clone();
    for mut col in scaled.column_iter_mut() {
        let norm = col.norm();
        if norm == 0.0 {
            return f64::INFINITY;
        }
        col /= norm;
    }
    let sv = scaled.singular_values();
    let max = sv.max();
    let min = sv.min();
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Weighted least squares with non-negative coefficients: any negative
/// unconstrained optimum is pinned at zero and the rest refit.
fn nonnegative_wls(columns: &[Vec<f64>], y: &[f64], w: &[f64]) -> Result<WlsFit> {
    let n = y.len();
    let k = columns.len();
    if n < k {
        return Err(Error::DegenerateFit {
            reason: format!("{n} points cannot determine {k} parameters"),
            condition_number: f64::INFINITY,
        });
    }
    let sw: Vec<f64> = w.iter().map(|v| v.sqrt()).collect();
    let design = DMatrix::from_fn(n, k, |i, j| sw[i] * columns[j][i]);
    let rhs = DVector::from_fn(n, |i, _| sw[i] * y[i]);
    let condition_number = scaled_condition(&design);
    if !(condition_number < MAX_CONDITION) {
        return Err(Error::DegenerateFit {
            reason: "design columns are collinear".into(),
            condition_number,
        });
    }

    let mut free: Vec<usize> = (0..k).collect();
    let mut beta = vec![0.0; k];
    loop {
        let sub = design.select_columns(&free);
        let svd = sub.clone().svd(true, true);
        let sol = svd.solve(&rhs, 0.0).map_err(|e| Error::DegenerateFit {
            reason: e.to_string(),
            condition_number,
        })?;
        beta.iter_mut().for_each(|b| *b = 0.0);
        for (pos, &j) in free.iter().enumerate() {
            beta[j] = sol[pos];
        }
        let worst = free
            .iter()
            .copied()
            .filter(|&j| beta[j] < 0.0)
            .min_by(|&a, &b| beta[a].total_cmp(&beta[b]));
        match worst {
            Some(j) => {
                beta[j] = 0.0;
                free.retain(|&f| f != j);
                if free.is_empty() {
                    break;
                }
            }
            None => break,
        }
    }

    let fitted = &design * DVector::from_column_slice(&beta);
    let chi_squared = (&rhs - fitted).norm_squared();
    let dof = n - free.len();
    let covariance = if dof > 0 && !free.is_empty() {
        let sub = design.select_columns(&free);
        let info = sub.transpose() * &sub;
        let inv = info.try_inverse().ok_or(Error::DegenerateFit {
            reason: "singular information matrix".into(),
            condition_number,
        })?;
        let s2 = chi_squared / dof as f64;
        let mut cov = DMatrix::zeros(k, k);
        for (a, &i) in free.iter().enumerate() {
            for (b, &j) in free.iter().enumerate() {
                cov[(i, j)] = inv[(a, b)] * s2;
            }
        }
        Some(cov)
    } else {
        None
    };

    let clamped = (0..k).map(|j| !free.contains(&j)).collect();
    Ok(WlsFit {
        beta,
        clamped,
        covariance,
        chi_squared,
        dof,
        condition_number,
    })
}

/// Pearson correlation coefficient.
pub fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len()) as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    sab / (saa * sbb).sqrt()
}
