//! Measurement analysis: T₁ fits, repeated-round statistics and Purcell
//! subtraction into quality factors.

mod decay;
mod purcell;
mod stats;

pub use decay::{
    fit_exponential, fit_exponential_with, DecayFitOptions, DecayTrace, FitLoss, T1Estimate,
    TraceMeta, MIN_TRACE_LEN,
};
pub use purcell::{
    coupling_from_dispersive_shift, purcell_corrected_t1, purcell_limit, purcell_subtract_q,
    readd_purcell, PurcellLimit, PurcellParams, PurcellTime, DISPERSIVE_RATIO_WARN,
    UNBOUNDED_THRESHOLD_S,
};
pub use stats::{
    histogram, mean_std, q_statistics, t1_statistics, t1_statistics_with_bins, write_histogram_csv,
    Aggregate, HistogramBin, QAggregation, T1Statistics, DEFAULT_BINS,
};
