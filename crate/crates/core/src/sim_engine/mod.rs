//! Discrete-event generation of synthetic multi-worker traces.
//!
//! Every worker runs one sampled step at a time. Each (worker, resource) pair
//! has its own scheduler and at most one chunk in flight. Link chunks progress
//! at the worker's bandwidth share, which is recomputed only at chunk
//! completions; computation chunks always progress at full rate.

mod partition;
mod share;

use std::collections::VecDeque;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::link_scheduler::{chunk_duration_us, LinkScheduler, SchedulerError, SchedulerPolicy};
use crate::preprocess::{preprocess, PreprocessError, SimProfile, SimWork};
use crate::trace_model::{ProfileBundle, ResourceKind};

pub use partition::{partition_parameters, ps_totals};
pub use share::{share, share_two_ps, ActiveSet, Direction};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid cluster configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
    #[error("scheduler failure: {0}")]
    Scheduler(#[from] SchedulerError),
    #[error("deadlock at t={time_us} µs: worker {worker} still waits on {}", pending.join(", "))]
    Deadlock {
        worker: usize,
        time_us: f64,
        pending: Vec<String>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterConfig {
    pub num_workers: usize,
    pub num_ps: u8,
    /// Per link direction per parameter server.
    pub bandwidth_bps: u64,
    pub policy: SchedulerPolicy,
    pub steps_per_worker: usize,
    pub seed: u64,
}

impl ClusterConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.num_workers == 0 {
            return Err(SimError::Config("at least one worker is required".into()));
        }
        if !(1..=2).contains(&self.num_ps) {
            return Err(SimError::Config(format!(
                "{} parameter servers requested; only 1 or 2 are supported",
                self.num_ps
            )));
        }
        if self.bandwidth_bps == 0 {
            return Err(SimError::Config("bandwidth must be positive".into()));
        }
        if self.steps_per_worker == 0 {
            return Err(SimError::Config(
                "steps per worker must be at least 1".into(),
            ));
        }
        if let SchedulerPolicy::Http2Multiplex { win_bytes: 0 } = self.policy {
            return Err(SimError::Config(
                "flow-control window must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Segment {
    pub worker: usize,
    /// 1-based ordinal of the step this chunk belongs to.
    pub step: usize,
    #[serde(serialize_with = "crate::serialize_display")]
    pub resource: ResourceKind,
    pub op: Arc<str>,
    pub start_us: f64,
    pub duration_us: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepCompletion {
    pub worker: usize,
    /// 1-based ordinal of the step on this worker.
    pub step: usize,
    /// Which profiled step was replayed.
    pub profile_step: usize,
    pub time_us: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct SyntheticTrace {
    pub events: Vec<Segment>,
    pub step_completions: Vec<StepCompletion>,
}

impl SyntheticTrace {
    pub fn completions_of(&self, worker: usize) -> impl Iterator<Item = &StepCompletion> {
        self.step_completions
            .iter()
            .filter(move |c| c.worker == worker)
    }

    pub fn num_workers(&self) -> usize {
        self.step_completions
            .iter()
            .map(|c| c.worker + 1)
            .chain(self.events.iter().map(|e| e.worker + 1))
            .max()
            .unwrap_or(0)
    }
}

/// A chunk in flight, as reported to a [`SimObserver`].
#[derive(Debug, Clone, Copy)]
pub struct ChunkView<'a> {
    pub id: u64,
    pub worker: usize,
    pub res: ResourceKind,
    pub op: &'a str,
    pub share: f64,
    /// Work assigned to this chunk at full rate, in µs.
    pub nominal_us: f64,
    pub is_last: bool,
}

/// Hooks into the event loop, used by property checks.
pub trait SimObserver {
    /// Called before the clock advances from `start_us` by `duration_us` with
    /// the chunks in flight during that interval and their shares.
    fn on_interval(&mut self, _start_us: f64, _duration_us: f64, _chunks: &[ChunkView<'_>]) {}

    fn on_chunk_done(&mut self, _chunk: &ChunkView<'_>, _end_us: f64) {}

    fn wants_intervals(&self) -> bool {
        false
    }
}

impl SimObserver for () {}

/// Runs a simulation on an already preprocessed profile.
pub fn generate_trace(
    profile: &SimProfile,
    config: &ClusterConfig,
) -> Result<SyntheticTrace, SimError> {
    Simulation::new(profile, config)?.run(&mut ())
}

/// Preprocesses `bundle` at the configured bandwidth, then simulates.
pub fn simulate(
    bundle: &ProfileBundle,
    config: &ClusterConfig,
) -> Result<SyntheticTrace, SimError> {
    let profile = preprocess(bundle, config.bandwidth_bps)?;
    generate_trace(&profile, config)
}

enum Queue {
    Link(LinkScheduler<usize>),
    Compute(VecDeque<usize>),
}

impl Queue {
    fn is_empty(&self) -> bool {
        match self {
            Queue::Link(s) => s.is_empty(),
            Queue::Compute(q) => q.is_empty(),
        }
    }
}

/// Per-template lookups, computed once per profiled step.
struct StepTables {
    slot: Vec<usize>,
    rank: Vec<Option<usize>>,
    indegree: Vec<u32>,
}

struct Chunk {
    id: u64,
    worker: usize,
    slot: usize,
    op: usize,
    remaining_us: f64,
    nominal_us: f64,
    is_last: bool,
    start_us: f64,
}

struct WorkerState {
    rng: ChaCha8Rng,
    step: usize,
    pending: Vec<u32>,
    emitted_us: Vec<f64>,
    done_ops: usize,
    completed_steps: usize,
    queues: Vec<Queue>,
    busy: Vec<bool>,
}

pub struct Simulation<'p> {
    profile: &'p SimProfile,
    config: ClusterConfig,
    tables: Vec<StepTables>,
    slots: Vec<ResourceKind>,
    workers: Vec<WorkerState>,
    in_flight: Vec<Chunk>,
    active: ActiveSet,
    now: f64,
    next_chunk_id: u64,
    record_segments: bool,
    trace: SyntheticTrace,
}

impl<'p> Simulation<'p> {
    pub fn new(profile: &'p SimProfile, config: &ClusterConfig) -> Result<Self, SimError> {
        config.validate()?;
        if config.num_ps != profile.num_ps {
            return Err(SimError::Config(format!(
                "cluster has {} parameter servers but the profile was taken with {}",
                config.num_ps, profile.num_ps
            )));
        }
        if config.bandwidth_bps != profile.bandwidth_bps {
            return Err(SimError::Config(format!(
                "profile was preprocessed for {} bps, cluster runs at {} bps",
                profile.bandwidth_bps, config.bandwidth_bps
            )));
        }
        if profile.steps.is_empty() {
            return Err(SimError::Config("profile has no steps".into()));
        }

        let m = config.num_ps;
        let mut slots: Vec<ResourceKind> = (0..m).map(ResourceKind::Downlink).collect();
        slots.extend((0..m).map(ResourceKind::Uplink));
        slots.push(ResourceKind::Worker);
        slots.extend((0..m).map(ResourceKind::Ps));
        let slot_of = |res: ResourceKind| slots.iter().position(|&r| r == res);

        let mut tables = Vec::with_capacity(profile.steps.len());
        for step in &profile.steps {
            let mut slot = Vec::with_capacity(step.ops.len());
            for op in &step.ops {
                slot.push(slot_of(op.res).ok_or_else(|| {
                    SimError::Config(format!(
                        "op `{}` uses {} outside this cluster",
                        op.id, op.res
                    ))
                })?);
            }
            tables.push(StepTables {
                slot,
                rank: step
                    .ops
                    .iter()
                    .map(|op| config.policy.rank(&op.id))
                    .collect(),
                indegree: step
                    .ops
                    .iter()
                    .map(|op| op.waiting_for.len() as u32)
                    .collect(),
            });
        }

        let workers = (0..config.num_workers)
            .map(|w| {
                let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
                rng.set_stream(w as u64);
                WorkerState {
                    rng,
                    step: 0,
                    pending: Vec::new(),
                    emitted_us: Vec::new(),
                    done_ops: 0,
                    completed_steps: 0,
                    queues: slots
                        .iter()
                        .map(|r| {
                            if r.is_link() {
                                Queue::Link(LinkScheduler::new(config.policy.clone()))
                            } else {
                                Queue::Compute(VecDeque::new())
                            }
                        })
                        .collect(),
                    busy: vec![false; slots.len()],
                }
            })
            .collect();

        Ok(Simulation {
            profile,
            config: config.clone(),
            tables,
            slots,
            workers,
            in_flight: Vec::new(),
            active: ActiveSet::new(m, config.num_workers),
            now: 0.0,
            next_chunk_id: 0,
            record_segments: true,
            trace: SyntheticTrace::default(),
        })
    }

    /// Skips per-chunk segments; step completions are still recorded.
    pub fn record_segments(mut self, on: bool) -> Self {
        self.record_segments = on;
        self
    }

    pub fn run(mut self, observer: &mut impl SimObserver) -> Result<SyntheticTrace, SimError> {
        for w in 0..self.config.num_workers {
            self.start_random_step(w)?;
        }
        let mut shares: Vec<f64> = Vec::new();
        let mut views: Vec<ChunkView<'p>> = Vec::new();

        while !self.in_flight.is_empty() {
            shares.clear();
            shares.extend(
                self.in_flight
                    .iter()
                    .map(|c| share(self.slots[c.slot], &self.active, c.worker)),
            );

            let mut best = 0;
            let mut best_ttf = f64::INFINITY;
            for (i, c) in self.in_flight.iter().enumerate() {
                let ttf = (c.remaining_us / shares[i]).max(0.0);
                if i == 0 || self.earlier(ttf, c, best_ttf, &self.in_flight[best]) {
                    best = i;
                    best_ttf = ttf;
                }
            }

            if observer.wants_intervals() {
                views.clear();
                views.extend(
                    self.in_flight
                        .iter()
                        .zip(&shares)
                        .map(|(c, &s)| self.view(c, s)),
                );
                observer.on_interval(self.now, best_ttf, &views);
            }

            self.now += best_ttf;
            for (c, &s) in self.in_flight.iter_mut().zip(&shares) {
                c.remaining_us = (c.remaining_us - best_ttf * s).max(0.0);
            }
            let done = self.in_flight.swap_remove(best);
            let done_share = shares[best];
            observer.on_chunk_done(&self.view(&done, done_share), self.now);
            self.complete(done)?;
        }

        if let Some(w) = self
            .workers
            .iter()
            .position(|ws| ws.completed_steps < self.config.steps_per_worker)
        {
            return Err(self.deadlock(w));
        }
        Ok(self.trace)
    }

    /// Event order: time to finish, then worker, then op id, then resource.
    fn earlier(&self, ttf: f64, c: &Chunk, best_ttf: f64, best: &Chunk) -> bool {
        ttf.total_cmp(&best_ttf)
            .then(c.worker.cmp(&best.worker))
            .then_with(|| self.op_id(c).cmp(self.op_id(best)))
            .then(c.slot.cmp(&best.slot))
            .is_lt()
    }

    fn op_id(&self, c: &Chunk) -> &'p str {
        let step = self.workers[c.worker].step;
        &self.profile.steps[step].ops[c.op].id
    }

    fn view(&self, c: &Chunk, share: f64) -> ChunkView<'p> {
        ChunkView {
            id: c.id,
            worker: c.worker,
            res: self.slots[c.slot],
            op: self.op_id(c),
            share,
            nominal_us: c.nominal_us,
            is_last: c.is_last,
        }
    }

    fn start_random_step(&mut self, w: usize) -> Result<(), SimError> {
        let ws = &mut self.workers[w];
        let step = ws.rng.random_range(0..self.profile.steps.len());
        let tables = &self.tables[step];
        ws.step = step;
        ws.pending.clear();
        ws.pending.extend_from_slice(&tables.indegree);
        ws.emitted_us.clear();
        ws.emitted_us.resize(tables.indegree.len(), 0.0);
        ws.done_ops = 0;
        for op in self.profile.steps[step].sources() {
            self.enqueue(w, op)?;
        }
        self.emit_idle(w)
    }

    fn enqueue(&mut self, w: usize, op: usize) -> Result<(), SimError> {
        let ws = &mut self.workers[w];
        let tables = &self.tables[ws.step];
        let sim_op = &self.profile.steps[ws.step].ops[op];
        match &mut ws.queues[tables.slot[op]] {
            Queue::Link(sched) => {
                let size = match sim_op.work {
                    SimWork::Transmission { size_bytes, .. } => size_bytes,
                    SimWork::Compute { .. } => 0,
                };
                sched.add(op, size, tables.rank[op])?;
            }
            Queue::Compute(q) => q.push_back(op),
        }
        Ok(())
    }

    /// Starts the next chunk on every idle resource of `w` with queued work.
    fn emit_idle(&mut self, w: usize) -> Result<(), SimError> {
        for slot in 0..self.slots.len() {
            if !self.workers[w].busy[slot] && !self.workers[w].queues[slot].is_empty() {
                self.emit(w, slot)?;
            }
        }
        Ok(())
    }

    fn emit(&mut self, w: usize, slot: usize) -> Result<(), SimError> {
        let bandwidth = self.config.bandwidth_bps;
        let ws = &mut self.workers[w];
        let step = &self.profile.steps[ws.step];
        let (op, work, is_last) = match &mut ws.queues[slot] {
            Queue::Link(sched) => {
                let spec = sched.remove_chunk()?;
                let nominal = step.ops[spec.op].work.nominal_us();
                let work = if spec.is_last {
                    (nominal - ws.emitted_us[spec.op]).max(0.0)
                } else {
                    chunk_duration_us(spec.bytes, bandwidth).min(nominal)
                };
                (spec.op, work, spec.is_last)
            }
            Queue::Compute(q) => {
                let op = q.pop_front().expect("caller checked the queue");
                (op, step.ops[op].work.nominal_us(), true)
            }
        };
        ws.emitted_us[op] += work;
        ws.busy[slot] = true;
        if let Some((dir, ps)) = Direction::of(self.slots[slot]) {
            self.active.insert(dir, ps, w);
        }
        self.in_flight.push(Chunk {
            id: self.next_chunk_id,
            worker: w,
            slot,
            op,
            remaining_us: work,
            nominal_us: work,
            is_last,
            start_us: self.now,
        });
        self.next_chunk_id += 1;
        Ok(())
    }

    fn complete(&mut self, chunk: Chunk) -> Result<(), SimError> {
        let w = chunk.worker;
        let res = self.slots[chunk.slot];
        if let Some((dir, ps)) = Direction::of(res) {
            self.active.remove(dir, ps, w);
        }
        if self.record_segments {
            self.trace.events.push(Segment {
                worker: w,
                step: self.workers[w].completed_steps + 1,
                resource: res,
                op: self.profile.steps[self.workers[w].step].ops[chunk.op]
                    .id
                    .clone(),
                start_us: chunk.start_us,
                duration_us: self.now - chunk.start_us,
            });
        }

        let ws = &mut self.workers[w];
        ws.busy[chunk.slot] = false;
        if let Queue::Link(sched) = &mut ws.queues[chunk.slot] {
            sched.finish_chunk();
        }
        if chunk.is_last {
            ws.done_ops += 1;
            let step = &self.profile.steps[ws.step];
            let mut released = Vec::new();
            for &d in &step.ops[chunk.op].dependents {
                ws.pending[d] -= 1;
                if ws.pending[d] == 0 {
                    released.push(d);
                }
            }
            for d in released {
                self.enqueue(w, d)?;
            }
        }
        self.emit_idle(w)?;

        let ws = &self.workers[w];
        if ws.busy.iter().any(|&b| b) {
            return Ok(());
        }
        let step = ws.step;
        if ws.done_ops < self.profile.steps[step].ops.len() {
            return Err(self.deadlock(w));
        }
        let ws = &mut self.workers[w];
        ws.completed_steps += 1;
        self.trace.step_completions.push(StepCompletion {
            worker: w,
            step: ws.completed_steps,
            profile_step: step,
            time_us: self.now,
        });
        if ws.completed_steps < self.config.steps_per_worker {
            self.start_random_step(w)?;
        }
        Ok(())
    }

    fn deadlock(&self, w: usize) -> SimError {
        let ws = &self.workers[w];
        let step = &self.profile.steps[ws.step];
        SimError::Deadlock {
            worker: w,
            time_us: self.now,
            pending: ws
                .pending
                .iter()
                .enumerate()
                .filter(|&(_, &n)| n > 0)
                .map(|(i, _)| step.ops[i].id.to_string())
                .collect(),
        }
    }
}
