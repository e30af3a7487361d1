//! Throughput from synthetic traces, closed-form baselines and end-time
//! error statistics.

mod chrome;

pub use chrome::{chrome_trace_json, export_chrome_trace};

use serde::Serialize;
use thiserror::Error;

use crate::preprocess::SimProfile;
use crate::sim_engine::SyntheticTrace;
use crate::trace_model::ResourceKind;

/// Steps excluded from throughput while workers desynchronize.
pub const DEFAULT_WARMUP_STEPS: usize = 50;
/// Simulated steps per worker.
pub const DEFAULT_STEPS: usize = 1000;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("worker {worker} completed {completed} steps, need more than {warmup} warmup steps")]
    InsufficientSteps {
        worker: usize,
        completed: usize,
        warmup: usize,
    },
    #[error("trace has no workers")]
    EmptyTrace,
    #[error("predicted and measured lists cover different ops: {0}")]
    MismatchedOps(String),
    #[error("measured end time of `{0}` must be positive")]
    NonPositiveMeasurement(String),
    #[error("no samples")]
    NoSamples,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThroughputReport {
    pub examples_per_sec: f64,
    pub workers: usize,
    pub steps_counted: usize,
    pub warmup_excluded: usize,
    pub per_worker_rates: Vec<f64>,
}

/// Time-averaged examples/s after excluding each worker's first
/// `warmup_steps` steps. With no warmup the window opens at the trace's
/// earliest segment.
pub fn throughput(
    trace: &SyntheticTrace,
    batch_size: u64,
    warmup_steps: usize,
) -> Result<ThroughputReport, MetricsError> {
    let workers = trace.num_workers();
    if workers == 0 {
        return Err(MetricsError::EmptyTrace);
    }
    let origin = trace
        .events
        .iter()
        .map(|e| e.start_us)
        .fold(f64::INFINITY, f64::min);
    let origin = if origin.is_finite() { origin } else { 0.0 };

    let mut per_worker_rates = Vec::with_capacity(workers);
    let mut steps_counted = 0;
    for w in 0..workers {
        let mut times: Vec<f64> = trace.completions_of(w).map(|c| c.time_us).collect();
        times.sort_by(f64::total_cmp);
        if times.len() <= warmup_steps {
            return Err(MetricsError::InsufficientSteps {
                worker: w,
                completed: times.len(),
                warmup: warmup_steps,
            });
        }
        let boundary = if warmup_steps == 0 {
            origin
        } else {
            times[warmup_steps - 1]
        };
        let counted = times.len() - warmup_steps;
        let span_us = times[times.len() - 1] - boundary;
        steps_counted += counted;
        per_worker_rates.push(counted as f64 * batch_size as f64 * 1e6 / span_us);
    }
    Ok(ThroughputReport {
        examples_per_sec: per_worker_rates.iter().sum(),
        workers,
        steps_counted,
        warmup_excluded: warmup_steps * workers,
        per_worker_rates,
    })
}

/// Closed-form throughput `W·K / (T_P·max(1, W·U_1) + 2·T_C)`, with times in
/// seconds.
pub fn cynthia_throughput(
    workers: f64,
    batch_size: f64,
    t_p_sec: f64,
    t_c_sec: f64,
    u_1: f64,
) -> f64 {
    workers * batch_size / (t_p_sec * f64::max(1.0, workers * u_1) + 2.0 * t_c_sec)
}

/// A throughput predictor usable as a comparison column.
pub trait ThroughputBaseline {
    fn name(&self) -> &str;
    fn predict(&self, workers: usize) -> f64;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Cynthia {
    pub batch_size: f64,
    pub t_p_sec: f64,
    pub t_c_sec: f64,
    pub u_1: f64,
}

impl ThroughputBaseline for Cynthia {
    fn name(&self) -> &str {
        "cynthia"
    }

    fn predict(&self, workers: usize) -> f64 {
        cynthia_throughput(
            workers as f64,
            self.batch_size,
            self.t_p_sec,
            self.t_c_sec,
            self.u_1,
        )
    }
}

/// Upper bounds on cluster throughput (examples/s) for a preprocessed profile.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SaturationBound {
    /// `W·K / T_comp`, with `T_comp` the mean compute-only critical path.
    pub compute: f64,
    /// `K·B / (8·S)` for the busiest link, `S` its mean bytes per step.
    pub network: f64,
}

impl SaturationBound {
    pub fn min(&self) -> f64 {
        self.compute.min(self.network)
    }
}

pub fn saturation_bound(profile: &SimProfile, workers: usize, batch_size: u64) -> SaturationBound {
    let k = batch_size as f64;
    let t_comp = profile.mean_compute_critical_path_us();
    let compute = if t_comp > 0.0 {
        workers as f64 * k * 1e6 / t_comp
    } else {
        f64::INFINITY
    };
    let busiest = (0..profile.num_ps)
        .flat_map(|i| [ResourceKind::Downlink(i), ResourceKind::Uplink(i)])
        .map(|r| profile.mean_link_bytes(r))
        .fold(0.0, f64::max);
    let network = if busiest > 0.0 {
        k * profile.bandwidth_bps as f64 / (8.0 * busiest)
    } else {
        f64::INFINITY
    };
    SaturationBound { compute, network }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ErrorStats {
    pub average: f64,
    pub median: f64,
    pub p95: f64,
    pub max: f64,
}

impl ErrorStats {
    /// Lower median and nearest-rank 95th percentile.
    pub fn from_errors(errors: &[f64]) -> Result<Self, MetricsError> {
        if errors.is_empty() {
            return Err(MetricsError::NoSamples);
        }
        let mut sorted = errors.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let rank95 = ((0.95 * n as f64).ceil() as usize).clamp(1, n);
        Ok(ErrorStats {
            average: sorted.iter().sum::<f64>() / n as f64,
            median: sorted[(n - 1) / 2],
            p95: sorted[rank95 - 1],
            max: sorted[n - 1],
        })
    }
}

/// Relative end-time error `|pred − meas| / meas` per op, aggregated.
pub fn multiplex_error_stats(
    predicted: &[(String, f64)],
    measured: &[(String, f64)],
) -> Result<ErrorStats, MetricsError> {
    let mut pred: Vec<&(String, f64)> = predicted.iter().collect();
    let mut meas: Vec<&(String, f64)> = measured.iter().collect();
    pred.sort_by(|a, b| a.0.cmp(&b.0));
    meas.sort_by(|a, b| a.0.cmp(&b.0));
    if pred.len() != meas.len() || pred.iter().zip(&meas).any(|(p, m)| p.0 != m.0) {
        return Err(MetricsError::MismatchedOps(format!(
            "{} predicted vs {} measured",
            pred.len(),
            meas.len()
        )));
    }
    let errors = pred
        .iter()
        .zip(&meas)
        .map(|(p, m)| {
            if m.1 > 0.0 {
                Ok((p.1 - m.1).abs() / m.1)
            } else {
                Err(MetricsError::NonPositiveMeasurement(m.0.clone()))
            }
        })
        .collect::<Result<Vec<_>, _>>()?;
    ErrorStats::from_errors(&errors)
}
