//! Single-exponential T₁ fits, A·exp(−t/T₁) + B, by damped Gauss–Newton.

use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MIN_TRACE_LEN: usize = 8;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceMeta {
    #[serde(default)]
    pub device_id: String,
    #[serde(default)]
    pub round: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayTrace {
    pub delays_us: Vec<f64>,
    pub populations: Vec<f64>,
    #[serde(default)]
    pub meta: TraceMeta,
}

#[derive(Debug, Deserialize)]
struct TraceRow {
    delay_us: f64,
    population: f64,
}

impl DecayTrace {
    pub fn new(delays_us: Vec<f64>, populations: Vec<f64>) -> Result<Self> {
        let trace = Self {
            delays_us,
            populations,
            meta: TraceMeta::default(),
        };
        trace.validate()?;
        Ok(trace)
    }

    pub fn with_meta(mut self, meta: TraceMeta) -> Self {
        self.meta = meta;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.delays_us.len() != self.populations.len() {
            return Err(Error::invalid("delays and populations differ in length"));
        }
        if self.delays_us.len() < MIN_TRACE_LEN {
            return Err(Error::invalid(format!(
                "trace needs at least {MIN_TRACE_LEN} points"
            )));
        }
        if self.delays_us.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::invalid("delays must be strictly increasing"));
        }
        if self
            .delays_us
            .iter()
            .chain(&self.populations)
            .any(|v| !v.is_finite())
        {
            return Err(Error::invalid("trace contains non-finite values"));
        }
        Ok(())
    }

    /// Reads `delay_us,population` CSV.
    pub fn from_csv_reader<R: std::io::Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let mut delays = Vec::new();
        let mut pops = Vec::new();
        for (i, row) in rdr.deserialize::<TraceRow>().enumerate() {
            let row = row.map_err(|e| Error::Parse {
                row: i + 1,
                message: e.to_string(),
            })?;
            delays.push(row.delay_us);
            pops.push(row.population);
        }
        Self::new(delays, pops)
    }

    /// Reads a trace CSV plus its optional JSON sidecar (same path with a
    /// `.json` extension).
    pub fn load(path: &Path) -> Result<Self> {
        let trace = Self::from_csv_reader(std::fs::File::open(path)?)?;
        let sidecar = path.with_extension("json");
        if sidecar.exists() {
            let meta: TraceMeta = serde_json::from_reader(std::fs::File::open(sidecar)?)?;
            return Ok(trace.with_meta(meta));
        }
        Ok(trace)
    }

    /// Same trace with delays multiplied by `factor`.
    pub fn rescaled(&self, factor: f64) -> Self {
        let mut t = self.clone();
        t.delays_us.iter_mut().for_each(|d| *d *= factor);
        t
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct T1Estimate {
    /// Same time unit as the trace delays (μs for measured traces).
    pub t1: f64,
    /// 1σ uncertainty of `t1`.
    pub fit_err: f64,
    pub amplitude: f64,
    pub offset: f64,
    pub rms_residual: f64,
    pub iterations: usize,
}

impl T1Estimate {
    /// Estimate carrying only a T₁ value, for aggregating published numbers.
    pub fn from_t1(t1: f64) -> Self {
        Self {
            t1,
            fit_err: 0.0,
            amplitude: f64::NAN,
            offset: f64::NAN,
            rms_residual: f64::NAN,
            iterations: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum FitLoss {
    Linear,
    /// ρ(z) = 2(√(1+z) − 1) on z = (r/f_scale)², applied by reweighting.
    SoftL1 {
        f_scale: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayFitOptions {
    pub loss: FitLoss,
    pub max_iterations: usize,
}

impl Default for DecayFitOptions {
    fn default() -> Self {
        Self {
            loss: FitLoss::Linear,
            max_iterations: 200,
        }
    }
}

pub fn fit_exponential(trace: &DecayTrace) -> Result<T1Estimate> {
    fit_exponential_with(trace, &DecayFitOptions::default())
}

/// Noise level from second differences, which cancel slow trends.
fn noise_floor(y: &[f64]) -> f64 {
    let mut d2: Vec<f64> = y
        .windows(3)
        .map(|w| (w[2] - 2.0 * w[1] + w[0]).abs())
        .collect();
    d2.sort_by(f64::total_cmp);
    let mad = d2[d2.len() / 2];
    mad / 0.6745 / 6f64.sqrt()
}

/// A = first − last, B = last, T₁ = time for the signal to fall to 1/e of
/// its range (linearly interpolated).
fn initial_guess(t: &[f64], y: &[f64]) -> [f64; 3] {
    let first = y[0];
    let last = *y.last().unwrap();
    let amp = first - last;
    let t0 = t[0];
    let span = t.last().unwrap() - t0;
    let target = amp * (-1f64).exp();
    let mut tau = span / 3.0;
    for i in 1..t.len() {
        let prev = y[i - 1] - last;
        let cur = y[i] - last;
        if (amp > 0.0 && cur <= target) || (amp < 0.0 && cur >= target) {
            let frac = if cur != prev {
                ((prev - target) / (prev - cur)).clamp(0.0, 1.0)
            } else {
                0.0
            };
            tau = (t[i - 1] - t0) + frac * (t[i] - t[i - 1]);
            break;
        }
    }
    if !(tau > 0.0) {
        tau = span / 3.0;
    }
    [amp, last, tau]
}

fn residuals(t: &[f64], y: &[f64], p: &[f64; 3]) -> Vec<f64> {
    t.iter()
        .zip(y)
        .map(|(&ti, &yi)| yi - (p[0] * (-ti / p[2]).exp() + p[1]))
        .collect()
}

fn robust_weights(r: &[f64], loss: FitLoss) -> Vec<f64> {
    match loss {
        FitLoss::Linear => vec![1.0; r.len()],
        FitLoss::SoftL1 { f_scale } => r
            .iter()
            .map(|ri| 1.0 / (1.0 + (ri / f_scale).powi(2)).sqrt())
            .collect(),
    }
}

/// Returns (JᵀWJ, JᵀWr) for the model Jacobian at `p`.
fn normal_equations(t: &[f64], p: &[f64; 3], r: &[f64], w: &[f64]) -> (Matrix3<f64>, Vector3<f64>) {
    let mut jtj = Matrix3::zeros();
    let mut jtr = Vector3::zeros();
    for ((&ti, &ri), &wi) in t.iter().zip(r).zip(w) {
        let e = (-ti / p[2]).exp();
        let j = Vector3::new(e, 1.0, p[0] * e * ti / (p[2] * p[2]));
        jtj += wi * j * j.transpose();
        jtr += wi * ri * j;
    }
    (jtj, jtr)
}

fn weighted_cost(r: &[f64], w: &[f64]) -> f64 {
    r.iter().zip(w).map(|(ri, wi)| wi * ri * ri).sum()
}

pub fn fit_exponential_with(trace: &DecayTrace, options: &DecayFitOptions) -> Result<T1Estimate> {
    trace.validate()?;
    let t = &trace.delays_us;
    let y = &trace.populations;
    let max = y.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = y.iter().cloned().fold(f64::INFINITY, f64::min);
    let range = max - min;
    if !(range > 3.0 * noise_floor(y)) || range == 0.0 {
        return Err(Error::FitFailure {
            reason: "no visible decay above the noise floor".into(),
            cost_trace: Vec::new(),
        });
    }

    let mut p = initial_guess(t, y);
    let mut r = residuals(t, y, &p);
    let mut w = robust_weights(&r, options.loss);
    let mut cost = weighted_cost(&r, &w);
    let mut lambda = 1e-3;
    let mut cost_trace = vec![cost];
    let mut converged = cost == 0.0;
    let mut iterations = 0;

    while !converged && iterations < options.max_iterations {
        iterations += 1;
        let (jtj, jtr) = normal_equations(t, &p, &r, &w);
        let mut accepted = false;
        for _ in 0..30 {
            let mut damped = jtj;
            for k in 0..3 {
                damped[(k, k)] += lambda * jtj[(k, k)].max(f64::MIN_POSITIVE);
            }
            let Some(step) = damped.lu().solve(&jtr) else {
                lambda *= 10.0;
                continue;
            };
            let trial = [p[0] + step[0], p[1] + step[1], p[2] + step[2]];
            if !(trial[2] > 0.0) {
                lambda *= 10.0;
                continue;
            }
            let r_trial = residuals(t, y, &trial);
            let trial_cost = weighted_cost(&r_trial, &w);
            if trial_cost <= cost {
                let scale = [p[0].abs(), p[0].abs(), p[2].abs()];
                let small =
                    (0..3).all(|k| step[k].abs() <= 1e-12 * scale[k].max(f64::MIN_POSITIVE));
                let flat = cost - trial_cost <= 1e-15 * cost;
                p = trial;
                r = r_trial;
                w = robust_weights(&r, options.loss);
                cost = weighted_cost(&r, &w);
                lambda = (lambda / 10.0).max(1e-12);
                accepted = true;
                converged = small || flat || cost == 0.0;
                break;
            }
            lambda *= 10.0;
        }
        cost_trace.push(cost);
        if !accepted {
            // No downhill step at any damping: at a (numerical) minimum.
            converged = true;
        }
    }

    if !converged {
        return Err(Error::FitFailure {
            reason: format!("no convergence in {} iterations", options.max_iterations),
            cost_trace,
        });
    }
    if !(p[2] > 0.0) || !p[2].is_finite() {
        return Err(Error::FitFailure {
            reason: format!("non-physical T1 {}", p[2]),
            cost_trace,
        });
    }

    let n = t.len();
    let (jtj, _) = normal_equations(t, &p, &r, &w);
    let s2 = cost / (n - 3) as f64;
    let fit_err = jtj
        .try_inverse()
        .map(|inv| (inv[(2, 2)] * s2).max(0.0).sqrt())
        .ok_or_else(|| Error::FitFailure {
            reason: "singular Jacobian at optimum".into(),
            cost_trace: cost_trace.clone(),
        })?;
    let rms_residual = (r.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();

    Ok(T1Estimate {
        t1: p[2],
        fit_err,
        amplitude: p[0],
        offset: p[1],
        rms_residual,
        iterations,
    })
}
