use serde::{Deserialize, Serialize};

use super::decay::T1Estimate;
use super::purcell::{purcell_corrected_t1, purcell_subtract_q};
use crate::error::{Error, Result};

pub const DEFAULT_BINS: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub left: f64,
    pub right: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct T1Statistics {
    pub n: usize,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub median: f64,
    pub histogram: Vec<HistogramBin>,
}

/// Representative T₁ for a device.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregate {
    #[default]
    Mean,
    Median,
}

impl T1Statistics {
    pub fn representative(&self, aggregate: Aggregate) -> f64 {
        match aggregate {
            Aggregate::Mean => self.mean,
            Aggregate::Median => self.median,
        }
    }
}

/// Mean and population standard deviation (two-pass).
pub fn mean_std(values: &[f64]) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(Error::invalid("no values"));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Ok((mean, var.sqrt()))
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Equal-width bins spanning [min, max]; the last bin is closed.
pub fn histogram(values: &[f64], bins: usize) -> Vec<HistogramBin> {
    if values.is_empty() || bins == 0 {
        return Vec::new();
    }
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == min {
        return vec![HistogramBin {
            left: min,
            right: max,
            count: values.len(),
        }];
    }
    let width = (max - min) / bins as f64;
    let mut out: Vec<HistogramBin> = (0..bins)
        .map(|i| HistogramBin {
            left: min + width * i as f64,
            right: if i + 1 == bins {
                max
            } else {
                min + width * (i + 1) as f64
            },
            count: 0,
        })
        .collect();
    for v in values {
        let idx = (((v - min) / width) as usize).min(bins - 1);
        out[idx].count += 1;
    }
    out
}

pub fn t1_statistics(estimates: &[T1Estimate]) -> Result<T1Statistics> {
    t1_statistics_with_bins(estimates, DEFAULT_BINS)
}

pub fn t1_statistics_with_bins(estimates: &[T1Estimate], bins: usize) -> Result<T1Statistics> {
    if estimates.is_empty() {
        return Err(Error::invalid("no T1 estimates"));
    }
    let values: Vec<f64> = estimates.iter().map(|e| e.t1).collect();
    let (mean, std) = mean_std(&values)?;
    Ok(T1Statistics {
        n: values.len(),
        mean,
        std,
        median: median(&values),
        histogram: histogram(&values, bins),
    })
}

pub fn write_histogram_csv<W: std::io::Write>(bins: &[HistogramBin], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["bin_left", "count"])?;
    for b in bins {
        w.write_record([format!("{}", b.left), b.count.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Order of operations when turning repeated T₁ rounds into Q statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QAggregation {
    /// Subtract Purcell and convert each round, then average.
    #[default]
    MeanOfQ,
    /// Average T₁ first, then subtract and convert once (std propagated
    /// linearly through dQ/dT₁).
    QOfMeanT1,
}

/// (mean, std) of Q over rounds of T₁ (μs).
pub fn q_statistics(
    t1_rounds_us: &[f64],
    t_purcell_ms: f64,
    omega_q_ghz: f64,
    mode: QAggregation,
) -> Result<(f64, f64)> {
    match mode {
        QAggregation::MeanOfQ => {
            let qs = t1_rounds_us
                .iter()
                .map(|&t1| purcell_subtract_q(t1, t_purcell_ms, omega_q_ghz))
                .collect::<Result<Vec<_>>>()?;
            mean_std(&qs)
        }
        QAggregation::QOfMeanT1 => {
            let (mean_t1, std_t1) = mean_std(t1_rounds_us)?;
            let q = purcell_subtract_q(mean_t1, t_purcell_ms, omega_q_ghz)?;
            let t1c = purcell_corrected_t1(mean_t1, t_purcell_ms)?;
            // dT₁'/dT₁ = (T₁'/T₁)²
            let slope = (t1c / mean_t1).powi(2);
            Ok((q, q / t1c * slope * std_t1))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn est(v: &[f64]) -> Vec<T1Estimate> {
        v.iter().map(|&t| T1Estimate::from_t1(t)).collect()
    }

    #[test]
    fn d7_1_mean_and_std() {
        let s = t1_statistics(&est(&[291.7 - 68.6, 291.7 + 68.6])).unwrap();
        assert!((s.mean - 291.7).abs() < 1e-9);
        assert!((s.std - 68.6).abs() < 1e-9);
    }

    #[test]
    fn single_estimate_has_zero_spread() {
        let s = t1_statistics(&est(&[120.0])).unwrap();
        assert_eq!(s.std, 0.0);
        assert_eq!(s.histogram.len(), 1);
        assert_eq!(s.histogram[0].count, 1);
    }

    #[test]
    fn empty_rejected() {
        assert!(t1_statistics(&[]).is_err());
    }

    #[test]
    fn permutation_invariant() {
        let a = t1_statistics(&est(&[3.0, 1.0, 4.0, 1.5, 9.0, 2.6])).unwrap();
        let b = t1_statistics(&est(&[9.0, 2.6, 1.5, 4.0, 3.0, 1.0])).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn histogram_counts_everything() {
        let values: Vec<f64> = (0..100)
            .map(|i| (i as f64 * 0.37).sin() * 50.0 + 250.0)
            .collect();
        let h = histogram(&values, DEFAULT_BINS);
        assert_eq!(h.len(), 12);
        assert_eq!(h.iter().map(|b| b.count).sum::<usize>(), 100);
        let mut buf = Vec::new();
        write_histogram_csv(&h, &mut buf).unwrap();
        assert!(String::from_utf8(buf)
            .unwrap()
            .starts_with("bin_left,count\n"));
    }

    #[test]
    fn q_aggregation_modes_agree_for_constant_rounds() {
        let rounds = [150.0; 5];
        let (a, sa) = q_statistics(&rounds, 9.0, 4.2, QAggregation::MeanOfQ).unwrap();
        let (b, sb) = q_statistics(&rounds, 9.0, 4.2, QAggregation::QOfMeanT1).unwrap();
        assert!((a - b).abs() / a < 1e-12);
        assert!(sa.abs() < 1e-6 * a);
        assert!(sb.abs() < 1e-6 * a);
    }
}
