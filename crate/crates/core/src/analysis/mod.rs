//! Error-bound tracer, Cramér–Rao benchmark and estimation metrics.

mod bound;
mod crlb;
mod metrics;

pub use bound::{
    bound_coverage, bound_for_run, error_bound_trace, extract_bound_inputs, gamma, lambda_sigma, mu, tune_e,
    BoundInputs, BoundSettings, BoundStep, BoundTrace, NoiseBounds, TuneReport,
};
pub use crlb::{crlb_trace, information_step};
pub use metrics::{
    mean_square_error_curve, mean_std, metrics, signal_metrics, EstimateMetrics, MeanStd, SignalMetrics,
    DEFAULT_TRANSIENT,
};
