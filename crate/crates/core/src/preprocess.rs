//! Turns profiled steps into simulation-ready steps.
//!
//! Every communication operation becomes a transmission, whose duration is
//! derived from its size and the target bandwidth, followed by a receiver-side
//! parsing-overhead computation of `alpha * size + beta` microseconds.

use std::collections::HashMap;
use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

use crate::trace_model::{validate_step, OpKind, ProfileBundle, ResourceKind, Step, Violation};

#[derive(Debug, Error)]
pub enum PreprocessError {
    #[error("overhead fit needs at least two samples with distinct sizes (got {samples} samples, {distinct} distinct sizes)")]
    InsufficientData { samples: usize, distinct: usize },
    #[error("target bandwidth must be positive")]
    ZeroBandwidth,
    #[error("step {step} does not validate: {}", violations.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
    InvalidStep {
        step: usize,
        violations: Vec<Violation>,
    },
    #[error("op `{0}` is already a transmission; the step has been split before")]
    AlreadySplit(String),
    #[error("generated overhead id `{0}` collides with an existing op")]
    IdCollision(String),
}

/// Linear parsing-overhead model, in microseconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OverheadModel {
    pub alpha_us_per_byte: f64,
    pub beta_us: f64,
}

impl OverheadModel {
    pub const ZERO: OverheadModel = OverheadModel {
        alpha_us_per_byte: 0.0,
        beta_us: 0.0,
    };

    pub fn new(alpha_us_per_byte: f64, beta_us: f64) -> Self {
        OverheadModel {
            alpha_us_per_byte,
            beta_us,
        }
    }

    pub fn overhead_us(&self, size_bytes: u64) -> f64 {
        self.alpha_us_per_byte * size_bytes as f64 + self.beta_us
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OverheadFit {
    pub model: OverheadModel,
    /// True when the raw least-squares slope or intercept was negative and
    /// has been clamped to zero.
    pub clamped: bool,
}

/// Ordinary least squares over `(size_bytes, latency_us)` samples.
pub fn fit_overhead(samples: &[(u64, f64)]) -> Result<OverheadFit, PreprocessError> {
    let mut sizes: Vec<u64> = samples.iter().map(|s| s.0).collect();
    sizes.sort_unstable();
    sizes.dedup();
    if samples.len() < 2 || sizes.len() < 2 {
        return Err(PreprocessError::InsufficientData {
            samples: samples.len(),
            distinct: sizes.len(),
        });
    }
    let n = samples.len() as f64;
    let mean_x = samples.iter().map(|s| s.0 as f64).sum::<f64>() / n;
    let mean_y = samples.iter().map(|s| s.1).sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for &(x, y) in samples {
        let dx = x as f64 - mean_x;
        sxy += dx * (y - mean_y);
        sxx += dx * dx;
    }
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_x;
    let clamped = slope < 0.0 || intercept < 0.0;
    Ok(OverheadFit {
        model: OverheadModel::new(slope.max(0.0), intercept.max(0.0)),
        clamped,
    })
}

/// Nominal full-bandwidth transmission time, rounded up to whole
/// microseconds and never below 1 µs.
pub fn transmission_us(size_bytes: u64, bandwidth_bps: u64) -> u64 {
    let bits_us = size_bytes as u128 * 8 * 1_000_000;
    let bw = bandwidth_bps as u128;
    (bits_us.div_ceil(bw) as u64).max(1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum OpRole {
    Computation,
    Transmission,
    Overhead,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum SimWork {
    Transmission { size_bytes: u64, nominal_us: u64 },
    Compute { duration_us: f64 },
}

impl SimWork {
    pub fn nominal_us(&self) -> f64 {
        match *self {
            SimWork::Transmission { nominal_us, .. } => nominal_us as f64,
            SimWork::Compute { duration_us } => duration_us,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimOp {
    pub id: Arc<str>,
    pub res: ResourceKind,
    pub role: OpRole,
    pub work: SimWork,
    /// Indices into the owning step's `ops`.
    pub waiting_for: Vec<usize>,
    pub dependents: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimStep {
    pub step_index: usize,
    pub ops: Vec<SimOp>,
}

impl SimStep {
    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.ops.iter().position(|op| &*op.id == id)
    }

    pub fn sources(&self) -> impl Iterator<Item = usize> + '_ {
        self.ops
            .iter()
            .enumerate()
            .filter(|(_, op)| op.waiting_for.is_empty())
            .map(|(i, _)| i)
    }

    /// Longest path through the DAG weighted by nominal work, ignoring
    /// resource contention.
    pub fn critical_path_us(&self) -> f64 {
        self.longest_path(|op| op.work.nominal_us())
    }

    /// Longest path counting only computation time (transmissions weigh 0).
    pub fn compute_critical_path_us(&self) -> f64 {
        self.longest_path(|op| match op.work {
            SimWork::Compute { duration_us } => duration_us,
            SimWork::Transmission { .. } => 0.0,
        })
    }

    fn longest_path(&self, weight: impl Fn(&SimOp) -> f64) -> f64 {
        // Ops are emitted in an order where every dep precedes its dependents.
        let mut finish = vec![0.0f64; self.ops.len()];
        for (i, op) in self.ops.iter().enumerate() {
            let start = op
                .waiting_for
                .iter()
                .map(|&d| finish[d])
                .fold(0.0, f64::max);
            finish[i] = start + weight(op);
        }
        finish.into_iter().fold(0.0, f64::max)
    }

    /// Bytes transmitted over `res` in one step.
    pub fn link_bytes(&self, res: ResourceKind) -> u64 {
        self.ops
            .iter()
            .filter(|op| op.res == res)
            .map(|op| match op.work {
                SimWork::Transmission { size_bytes, .. } => size_bytes,
                SimWork::Compute { .. } => 0,
            })
            .sum()
    }
}

/// Receiver of a transfer on `res`: the worker for downlinks, the owning
/// parameter server for uplinks.
fn receiver(res: ResourceKind) -> ResourceKind {
    match res {
        ResourceKind::Downlink(_) => ResourceKind::Worker,
        ResourceKind::Uplink(i) => ResourceKind::Ps(i),
        other => other,
    }
}

pub fn overhead_id(op_id: &str) -> String {
    format!("{op_id}/overhead")
}

/// Splits each communication op into a transmission and a receiver-side
/// overhead computation. Overhead ops of zero duration are elided.
pub fn split_comm_ops(
    step: &Step,
    model: OverheadModel,
    target_bandwidth_bps: u64,
) -> Result<SimStep, PreprocessError> {
    if target_bandwidth_bps == 0 {
        return Err(PreprocessError::ZeroBandwidth);
    }
    if let Some(op) = step.ops.iter().find(|op| op.transmission) {
        return Err(PreprocessError::AlreadySplit(op.id.clone()));
    }
    let violations = validate_step(step);
    if !violations.is_empty() {
        return Err(PreprocessError::InvalidStep {
            step: step.step_index,
            violations,
        });
    }
    let order = step
        .topological_order()
        .expect("validated steps are acyclic");

    let mut ops: Vec<SimOp> = Vec::with_capacity(step.ops.len() * 2);
    // Original id -> index of the op whose completion releases its dependents.
    let mut exit: HashMap<&str, usize> = HashMap::with_capacity(step.ops.len());

    for &orig in &order {
        let op = &step.ops[orig];
        let waiting_for: Vec<usize> = op.waiting_for.iter().map(|d| exit[d.as_str()]).collect();
        let index = ops.len();
        match op.kind {
            OpKind::Computation => {
                ops.push(SimOp {
                    id: Arc::from(op.id.as_str()),
                    res: op.res,
                    role: OpRole::Computation,
                    work: SimWork::Compute {
                        duration_us: op.duration_us.unwrap_or(0) as f64,
                    },
                    waiting_for,
                    dependents: Vec::new(),
                });
                exit.insert(&op.id, index);
            }
            OpKind::Communication => {
                let size_bytes = op.size_bytes.unwrap_or(0);
                ops.push(SimOp {
                    id: Arc::from(op.id.as_str()),
                    res: op.res,
                    role: OpRole::Transmission,
                    work: SimWork::Transmission {
                        size_bytes,
                        nominal_us: transmission_us(size_bytes, target_bandwidth_bps),
                    },
                    waiting_for,
                    dependents: Vec::new(),
                });
                let overhead = model.overhead_us(size_bytes);
                if overhead > 0.0 {
                    let id = overhead_id(&op.id);
                    if step.op(&id).is_some() {
                        return Err(PreprocessError::IdCollision(id));
                    }
                    ops.push(SimOp {
                        id: Arc::from(id),
                        res: receiver(op.res),
                        role: OpRole::Overhead,
                        work: SimWork::Compute {
                            duration_us: overhead,
                        },
                        waiting_for: vec![index],
                        dependents: Vec::new(),
                    });
                    exit.insert(&op.id, index + 1);
                } else {
                    exit.insert(&op.id, index);
                }
            }
        }
    }

    for i in 0..ops.len() {
        for d in ops[i].waiting_for.clone() {
            ops[d].dependents.push(i);
        }
    }
    Ok(SimStep {
        step_index: step.step_index,
        ops,
    })
}

/// A profile ready for simulation at one target bandwidth.
#[derive(Debug, Clone)]
pub struct SimProfile {
    pub steps: Vec<SimStep>,
    pub bandwidth_bps: u64,
    pub win_bytes: u64,
    pub num_ps: u8,
    pub model: OverheadModel,
}

impl SimProfile {
    pub fn mean_critical_path_us(&self) -> f64 {
        self.steps
            .iter()
            .map(SimStep::critical_path_us)
            .sum::<f64>()
            / self.steps.len() as f64
    }

    pub fn mean_compute_critical_path_us(&self) -> f64 {
        self.steps
            .iter()
            .map(SimStep::compute_critical_path_us)
            .sum::<f64>()
            / self.steps.len() as f64
    }

    pub fn mean_link_bytes(&self, res: ResourceKind) -> f64 {
        self.steps
            .iter()
            .map(|s| s.link_bytes(res) as f64)
            .sum::<f64>()
            / self.steps.len() as f64
    }
}

/// Applies [`split_comm_ops`] to every step using the bundle's overhead model.
pub fn preprocess(
    bundle: &ProfileBundle,
    target_bandwidth_bps: u64,
) -> Result<SimProfile, PreprocessError> {
    let model = OverheadModel::new(bundle.alpha_us_per_byte, bundle.beta_us);
    let steps = bundle
        .steps
        .iter()
        .map(|s| split_comm_ops(s, model, target_bandwidth_bps))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(SimProfile {
        steps,
        bandwidth_bps: target_bandwidth_bps,
        win_bytes: bundle.win_bytes,
        num_ps: bundle.num_ps,
        model,
    })
}
