//! Profile generators and reference computations shared by the integration
//! tests.
#![allow(dead_code)]

use std::collections::HashMap;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use syntrace::trace_model::{finalize, Operation, Step};
use syntrace::{ProfileBundle, ResourceKind};

pub const MB: u64 = 1_000_000;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn bundle(
    steps: Vec<Step>,
    bandwidth_bps: u64,
    alpha: f64,
    beta: f64,
    win_bytes: u64,
    num_ps: u8,
) -> ProfileBundle {
    finalize(ProfileBundle {
        steps,
        profile_bandwidth_bps: bandwidth_bps,
        alpha_us_per_byte: alpha,
        beta_us: beta,
        win_bytes,
        num_ps,
    })
    .expect("generated profile must be valid")
}

/// Blueprint for one op: magnitudes are re-sampled for every step so that
/// all steps share structure but differ in durations and sizes.
#[derive(Debug, Clone)]
pub struct Template {
    pub id: String,
    pub res: ResourceKind,
    /// Bytes for links, µs for computation.
    pub magnitude: u64,
    pub deps: Vec<String>,
}

impl Template {
    fn new(id: impl Into<String>, res: ResourceKind, magnitude: u64, deps: &[&str]) -> Self {
        Template {
            id: id.into(),
            res,
            magnitude,
            deps: deps.iter().map(|d| d.to_string()).collect(),
        }
    }

    fn op(&self, scale: f64) -> Operation {
        let m = (self.magnitude as f64 * scale).round() as u64;
        let op = if self.res.is_link() {
            Operation::communication(self.id.clone(), self.res, m)
        } else {
            Operation::computation(self.id.clone(), self.res, m)
        };
        op.after(self.deps.iter().cloned())
    }
}

/// `n` steps built from `templates`, each step with its own uniform scale in
/// [0.8, 1.2]. Uniform scaling keeps every magnitude ratio intact.
pub fn steps_from(templates: &[Template], n: usize, rng: &mut impl Rng) -> Vec<Step> {
    (0..n)
        .map(|i| {
            let scale = rng.random_range(0.8..1.2);
            Step::new(i, templates.iter().map(|t| t.op(scale)).collect())
        })
        .collect()
}

fn any_resource(rng: &mut impl Rng, num_ps: u8) -> ResourceKind {
    let ps = rng.random_range(0..num_ps);
    match rng.random_range(0..4) {
        0 => ResourceKind::Downlink(ps),
        1 => ResourceKind::Uplink(ps),
        2 => ResourceKind::Ps(ps),
        _ => ResourceKind::Worker,
    }
}

fn magnitude(rng: &mut impl Rng, res: ResourceKind) -> u64 {
    if res.is_link() {
        rng.random_range(1_000..2 * MB)
    } else {
        rng.random_range(10..50_000)
    }
}

/// A strict sequence of `n` ops on random resources.
pub fn chain(rng: &mut impl Rng, n: usize, num_ps: u8) -> Vec<Template> {
    (0..n)
        .map(|i| {
            let res = any_resource(rng, num_ps);
            let deps: Vec<String> = if i == 0 {
                vec![]
            } else {
                vec![format!("c{}", i - 1)]
            };
            Template {
                id: format!("c{i}"),
                res,
                magnitude: magnitude(rng, res),
                deps,
            }
        })
        .collect()
}

/// A series of fork-join diamonds. Parallel branches never share a resource,
/// including the receiver of a link's parsing overhead, and never put two
/// links of one direction in flight together.
pub fn diamonds(rng: &mut impl Rng, count: usize, num_ps: u8) -> Vec<Template> {
    let mut t = vec![Template::new(
        "x0",
        ResourceKind::Worker,
        rng.random_range(10..50_000),
        &[],
    )];
    for k in 0..count {
        let join = format!("x{k}");
        let ps = rng.random_range(0..num_ps);
        let a = format!("d{k}a");
        let a2 = format!("d{k}a2");
        let b = format!("d{k}b");
        let next = format!("x{}", k + 1);
        match rng.random_range(0..3) {
            // Upload and server update alongside worker compute.
            0 => {
                t.push(Template::new(
                    &a,
                    ResourceKind::Uplink(ps),
                    magnitude(rng, ResourceKind::Uplink(0)),
                    &[&join],
                ));
                t.push(Template::new(
                    &a2,
                    ResourceKind::Ps(ps),
                    rng.random_range(10..5_000),
                    &[&a],
                ));
                t.push(Template::new(
                    &b,
                    ResourceKind::Worker,
                    rng.random_range(10..50_000),
                    &[&join],
                ));
            }
            // Download (overhead lands on the worker) alongside server compute.
            1 => {
                t.push(Template::new(
                    &a,
                    ResourceKind::Downlink(ps),
                    magnitude(rng, ResourceKind::Downlink(0)),
                    &[&join],
                ));
                t.push(Template::new(
                    &a2,
                    ResourceKind::Worker,
                    rng.random_range(10..5_000),
                    &[&a],
                ));
                t.push(Template::new(
                    &b,
                    ResourceKind::Ps(ps),
                    rng.random_range(10..50_000),
                    &[&join],
                ));
            }
            // Upload alongside download.
            _ => {
                let other = rng.random_range(0..num_ps);
                t.push(Template::new(
                    &a,
                    ResourceKind::Uplink(ps),
                    magnitude(rng, ResourceKind::Uplink(0)),
                    &[&join],
                ));
                t.push(Template::new(
                    &a2,
                    ResourceKind::Ps(ps),
                    rng.random_range(10..5_000),
                    &[&a],
                ));
                t.push(Template::new(
                    &b,
                    ResourceKind::Downlink(other),
                    magnitude(rng, ResourceKind::Downlink(0)),
                    &[&join],
                ));
            }
        }
        t.push(Template::new(
            &next,
            ResourceKind::Worker,
            rng.random_range(10..50_000),
            &[&a2, &b],
        ));
    }
    t
}

/// One parameter-server SGD step over `sizes.len()` layers: per-layer
/// downloads, a forward chain, a backward chain with per-layer uploads and
/// server updates. Layer `i` lives on `placement[i]`.
pub fn layered(
    sizes: &[u64],
    placement: &[usize],
    fwd_us: &[u64],
    bwd_us: &[u64],
    update_us: u64,
) -> Vec<Template> {
    let l = sizes.len();
    let mut t = Vec::with_capacity(5 * l);
    for i in 0..l {
        t.push(Template::new(
            format!("dl{i}"),
            ResourceKind::Downlink(placement[i] as u8),
            sizes[i],
            &[],
        ));
    }
    for (i, &us) in fwd_us.iter().enumerate() {
        let mut deps = vec![format!("dl{i}")];
        if i > 0 {
            deps.push(format!("f{}", i - 1));
        }
        t.push(Template {
            id: format!("f{i}"),
            res: ResourceKind::Worker,
            magnitude: us,
            deps,
        });
    }
    for i in (0..l).rev() {
        let dep = if i == l - 1 {
            format!("f{i}")
        } else {
            format!("b{}", i + 1)
        };
        t.push(Template {
            id: format!("b{i}"),
            res: ResourceKind::Worker,
            magnitude: bwd_us[i],
            deps: vec![dep],
        });
        t.push(Template::new(
            format!("ul{i}"),
            ResourceKind::Uplink(placement[i] as u8),
            sizes[i],
            &[&format!("b{i}")],
        ));
        t.push(Template::new(
            format!("up{i}"),
            ResourceKind::Ps(placement[i] as u8),
            update_us,
            &[&format!("ul{i}")],
        ));
    }
    t
}

/// A random layered step with `layers` layers spread over `num_ps` servers.
pub fn random_layered(rng: &mut impl Rng, layers: usize, num_ps: u8) -> Vec<Template> {
    let sizes: Vec<u64> = (0..layers)
        .map(|_| rng.random_range(1_000..4 * MB))
        .collect();
    let placement: Vec<usize> = (0..layers)
        .map(|_| rng.random_range(0..num_ps as usize))
        .collect();
    let fwd: Vec<u64> = (0..layers).map(|_| rng.random_range(100..30_000)).collect();
    let bwd: Vec<u64> = (0..layers).map(|_| rng.random_range(100..60_000)).collect();
    layered(&sizes, &placement, &fwd, &bwd, rng.random_range(10..2_000))
}

/// Arbitrary DAG: every op waits on up to three random earlier ops. Sizes and
/// durations include zero.
pub fn random_dag(rng: &mut impl Rng, n: usize, num_ps: u8) -> Vec<Template> {
    let mut t: Vec<Template> = Vec::with_capacity(n);
    for i in 0..n {
        let res = any_resource(rng, num_ps);
        let magnitude = if rng.random_bool(0.1) {
            0
        } else {
            magnitude(rng, res)
        };
        let mut deps: Vec<String> = Vec::new();
        if i > 0 {
            for _ in 0..rng.random_range(0..=3) {
                let d = t.choose(rng).unwrap().id.clone();
                if !deps.contains(&d) {
                    deps.push(d);
                }
            }
        }
        t.push(Template {
            id: format!("n{i}"),
            res,
            magnitude,
            deps,
        });
    }
    t
}

/// Step duration on an uncontended worker: the longest path where a link op
/// costs its rounded-up transmission time plus its parsing overhead.
pub fn longest_path_us(step: &Step, bandwidth_bps: u64, alpha: f64, beta: f64) -> f64 {
    fn finish(
        id: &str,
        ops: &HashMap<&str, &Operation>,
        cost: &dyn Fn(&Operation) -> f64,
        memo: &mut HashMap<String, f64>,
    ) -> f64 {
        if let Some(&v) = memo.get(id) {
            return v;
        }
        let op = ops[id];
        let start = op
            .waiting_for
            .iter()
            .map(|d| finish(d, ops, cost, memo))
            .fold(0.0, f64::max);
        let v = start + cost(op);
        memo.insert(id.to_string(), v);
        v
    }
    let cost = |op: &Operation| -> f64 {
        match op.size_bytes {
            Some(size) if op.res.is_link() => {
                let bits = size as u128 * 8_000_000;
                let b = bandwidth_bps as u128;
                let tx = bits.div_ceil(b).max(1) as f64;
                tx + alpha * size as f64 + beta
            }
            _ => op.duration_us.unwrap() as f64,
        }
    };
    let ops: HashMap<&str, &Operation> = step.ops.iter().map(|o| (o.id.as_str(), o)).collect();
    let mut memo = HashMap::new();
    step.ops
        .iter()
        .map(|o| finish(&o.id, &ops, &cost, &mut memo))
        .fold(0.0, f64::max)
}

/// Per-layer float32 parameter bytes of VGG-11 (weights then biases, merged
/// per layer), in model order.
pub fn vgg11_layer_bytes() -> Vec<u64> {
    let convs = [
        (3, 64),
        (64, 128),
        (128, 256),
        (256, 256),
        (256, 512),
        (512, 512),
        (512, 512),
        (512, 512),
    ];
    let fcs = [(25_088, 4_096), (4_096, 4_096), (4_096, 1_000)];
    convs
        .iter()
        .map(|&(i, o)| (9 * i * o + o) * 4)
        .chain(fcs.iter().map(|&(i, o)| (i * o + o) * 4))
        .collect()
}

pub fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_syntrace")
}
