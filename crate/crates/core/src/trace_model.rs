//! Profiled SGD steps: operations, resources and dependency edges.
//!
//! A profile is a JSON document holding calibration metadata and one or more
//! steps, each a DAG of operations. Dependencies may be written in either
//! direction (`deps` or `dependents`); the loader symmetrizes them so that
//! `a ∈ b.waiting_for ⟺ b ∈ a.dependent_ops` always holds after load.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Resource used by an operation. Links and parameter-server cores carry the
/// index of the parameter server they belong to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ResourceKind {
    Downlink(u8),
    Worker,
    Uplink(u8),
    Ps(u8),
}

impl ResourceKind {
    pub fn is_link(self) -> bool {
        matches!(self, ResourceKind::Downlink(_) | ResourceKind::Uplink(_))
    }

    pub fn ps_index(self) -> Option<u8> {
        match self {
            ResourceKind::Downlink(i) | ResourceKind::Uplink(i) | ResourceKind::Ps(i) => Some(i),
            ResourceKind::Worker => None,
        }
    }
}

impl fmt::Display for ResourceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ResourceKind::Downlink(i) => write!(f, "downlink:{i}"),
            ResourceKind::Worker => f.write_str("worker"),
            ResourceKind::Uplink(i) => write!(f, "uplink:{i}"),
            ResourceKind::Ps(i) => write!(f, "ps:{i}"),
        }
    }
}

impl FromStr for ResourceKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "worker" {
            return Ok(ResourceKind::Worker);
        }
        let (name, index) = s
            .split_once(':')
            .ok_or_else(|| format!("unknown resource `{s}`"))?;
        let index: u8 = index
            .parse()
            .map_err(|_| format!("bad parameter-server index in resource `{s}`"))?;
        match name {
            "downlink" => Ok(ResourceKind::Downlink(index)),
            "uplink" => Ok(ResourceKind::Uplink(index)),
            "ps" => Ok(ResourceKind::Ps(index)),
            _ => Err(format!("unknown resource `{s}`")),
        }
    }
}

impl Serialize for ResourceKind {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ResourceKind {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OpKind {
    #[serde(rename = "comm")]
    Communication,
    #[serde(rename = "comp")]
    Computation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Operation {
    pub id: String,
    pub res: ResourceKind,
    pub kind: OpKind,
    pub duration_us: Option<u64>,
    pub size_bytes: Option<u64>,
    pub waiting_for: BTreeSet<String>,
    pub dependent_ops: BTreeSet<String>,
    /// Set on transmission operations produced by splitting; such steps must
    /// not be split again.
    pub transmission: bool,
}

impl Operation {
    pub fn computation(id: impl Into<String>, res: ResourceKind, duration_us: u64) -> Self {
        Operation {
            id: id.into(),
            res,
            kind: OpKind::Computation,
            duration_us: Some(duration_us),
            size_bytes: None,
            waiting_for: BTreeSet::new(),
            dependent_ops: BTreeSet::new(),
            transmission: false,
        }
    }

    pub fn communication(id: impl Into<String>, res: ResourceKind, size_bytes: u64) -> Self {
        Operation {
            id: id.into(),
            res,
            kind: OpKind::Communication,
            duration_us: None,
            size_bytes: Some(size_bytes),
            waiting_for: BTreeSet::new(),
            dependent_ops: BTreeSet::new(),
            transmission: false,
        }
    }

    /// Adds `deps` to `waiting_for`. Reverse edges are filled in by
    /// [`Step::symmetrize`].
    pub fn after<I, S>(mut self, deps: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.waiting_for.extend(deps.into_iter().map(Into::into));
        self
    }

    pub fn is_source(&self) -> bool {
        self.waiting_for.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub step_index: usize,
    pub ops: Vec<Operation>,
}

impl Step {
    pub fn new(step_index: usize, ops: Vec<Operation>) -> Self {
        Step { step_index, ops }
    }

    /// Makes `waiting_for` and `dependent_ops` mirror each other. Edges naming
    /// unknown ids are kept so validation can report them.
    pub fn symmetrize(&mut self) {
        let index: HashMap<String, usize> = self
            .ops
            .iter()
            .enumerate()
            .map(|(i, op)| (op.id.clone(), i))
            .collect();
        let mut forward = Vec::new();
        for op in &self.ops {
            for dep in &op.waiting_for {
                forward.push((dep.clone(), op.id.clone()));
            }
            for dependent in &op.dependent_ops {
                forward.push((op.id.clone(), dependent.clone()));
            }
        }
        for (from, to) in forward {
            if let Some(&i) = index.get(&from) {
                self.ops[i].dependent_ops.insert(to.clone());
            }
            if let Some(&j) = index.get(&to) {
                self.ops[j].waiting_for.insert(from);
            }
        }
    }

    pub fn op(&self, id: &str) -> Option<&Operation> {
        self.ops.iter().find(|op| op.id == id)
    }

    /// Kahn's algorithm over `waiting_for`. Returns `None` when the graph has a
    /// cycle or a dangling reference.
    pub fn topological_order(&self) -> Option<Vec<usize>> {
        let index: HashMap<&str, usize> = self
            .ops
            .iter()
            .enumerate()
            .map(|(i, op)| (op.id.as_str(), i))
            .collect();
        let mut indegree = vec![0usize; self.ops.len()];
        let mut dependents: Vec<Vec<usize>> = vec![Vec::new(); self.ops.len()];
        for (i, op) in self.ops.iter().enumerate() {
            for dep in &op.waiting_for {
                let &d = index.get(dep.as_str())?;
                indegree[i] += 1;
                dependents[d].push(i);
            }
        }
        let mut ready: Vec<usize> = (0..self.ops.len()).filter(|&i| indegree[i] == 0).collect();
        ready.reverse();
        let mut order = Vec::with_capacity(self.ops.len());
        while let Some(i) = ready.pop() {
            order.push(i);
            for &d in &dependents[i] {
                indegree[d] -= 1;
                if indegree[d] == 0 {
                    ready.push(d);
                }
            }
        }
        (order.len() == self.ops.len()).then_some(order)
    }

    /// Structural signature: everything except durations and sizes.
    fn structure(&self) -> BTreeMap<&str, (ResourceKind, OpKind, &BTreeSet<String>)> {
        self.ops
            .iter()
            .map(|op| (op.id.as_str(), (op.res, op.kind, &op.waiting_for)))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProfileBundle {
    pub steps: Vec<Step>,
    pub profile_bandwidth_bps: u64,
    pub alpha_us_per_byte: f64,
    pub beta_us: f64,
    pub win_bytes: u64,
    pub num_ps: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Rule {
    DuplicateId,
    FieldMismatch,
    KindResourceMismatch,
    DanglingRef,
    AsymmetricEdge,
    Cycle,
    NoSource,
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Rule::DuplicateId => "duplicate-id",
            Rule::FieldMismatch => "field-mismatch",
            Rule::KindResourceMismatch => "kind-resource-mismatch",
            Rule::DanglingRef => "dangling-ref",
            Rule::AsymmetricEdge => "asymmetric-edge",
            Rule::Cycle => "cycle",
            Rule::NoSource => "no-source",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub op_id: Option<String>,
    pub rule: Rule,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.op_id {
            Some(id) => write!(f, "{} (op `{id}`): {}", self.rule, self.detail),
            None => write!(f, "{}: {}", self.rule, self.detail),
        }
    }
}

fn violation(op_id: Option<&str>, rule: Rule, detail: impl Into<String>) -> Violation {
    Violation {
        op_id: op_id.map(str::to_owned),
        rule,
        detail: detail.into(),
    }
}

/// Checks every operation and step invariant, returning one record per breach.
pub fn validate_step(step: &Step) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut seen = HashMap::new();
    for op in &step.ops {
        if seen.insert(op.id.as_str(), ()).is_some() {
            out.push(violation(
                Some(&op.id),
                Rule::DuplicateId,
                "id appears more than once",
            ));
        }
    }
    let by_id: HashMap<&str, &Operation> = step.ops.iter().map(|op| (op.id.as_str(), op)).collect();

    for op in &step.ops {
        let id = Some(op.id.as_str());
        match op.kind {
            OpKind::Communication => {
                if op.duration_us.is_some() || op.size_bytes.is_none() {
                    out.push(violation(
                        id,
                        Rule::FieldMismatch,
                        "communication ops carry size_bytes and no duration_us",
                    ));
                }
                if !op.res.is_link() {
                    out.push(violation(
                        id,
                        Rule::KindResourceMismatch,
                        format!("communication op on non-link resource {}", op.res),
                    ));
                }
            }
            OpKind::Computation => {
                if op.size_bytes.is_some() || op.duration_us.is_none() {
                    out.push(violation(
                        id,
                        Rule::FieldMismatch,
                        "computation ops carry duration_us and no size_bytes",
                    ));
                }
                if op.res.is_link() {
                    out.push(violation(
                        id,
                        Rule::KindResourceMismatch,
                        format!("computation op on link resource {}", op.res),
                    ));
                }
            }
        }
        for dep in &op.waiting_for {
            match by_id.get(dep.as_str()) {
                None => out.push(violation(
                    id,
                    Rule::DanglingRef,
                    format!("waits for unknown op `{dep}`"),
                )),
                Some(other) if !other.dependent_ops.contains(&op.id) => out.push(violation(
                    id,
                    Rule::AsymmetricEdge,
                    format!("waits for `{dep}` but `{dep}` does not list it as dependent"),
                )),
                Some(_) => {}
            }
        }
        for dependent in &op.dependent_ops {
            match by_id.get(dependent.as_str()) {
                None => out.push(violation(
                    id,
                    Rule::DanglingRef,
                    format!("lists unknown dependent `{dependent}`"),
                )),
                Some(other) if !other.waiting_for.contains(&op.id) => out.push(violation(
                    id,
                    Rule::AsymmetricEdge,
                    format!("lists `{dependent}` as dependent but it does not wait for it"),
                )),
                Some(_) => {}
            }
        }
    }

    if !step.ops.iter().any(Operation::is_source) {
        out.push(violation(
            None,
            Rule::NoSource,
            "no operation has an empty waiting_for set",
        ));
    }
    if let Some(cycle) = find_cycle(step) {
        out.push(violation(
            cycle.first().map(String::as_str),
            Rule::Cycle,
            format!("dependency cycle {}", cycle.join(" -> ")),
        ));
    }
    out
}

/// Depth-first search over `waiting_for` edges restricted to known ids.
/// Returns the ops of one cycle in dependency order, if any.
pub fn find_cycle(step: &Step) -> Option<Vec<String>> {
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        New,
        Open,
        Done,
    }
    let index: HashMap<&str, usize> = step
        .ops
        .iter()
        .enumerate()
        .map(|(i, op)| (op.id.as_str(), i))
        .collect();
    let succ: Vec<Vec<usize>> = step
        .ops
        .iter()
        .map(|op| {
            op.waiting_for
                .iter()
                .filter_map(|d| index.get(d.as_str()).copied())
                .collect()
        })
        .collect();
    let mut mark = vec![Mark::New; step.ops.len()];
    for root in 0..step.ops.len() {
        if mark[root] != Mark::New {
            continue;
        }
        // (node, next successor position)
        let mut stack = vec![(root, 0usize)];
        mark[root] = Mark::Open;
        while let Some(&mut (node, ref mut pos)) = stack.last_mut() {
            if let Some(&next) = succ[node].get(*pos) {
                *pos += 1;
                match mark[next] {
                    Mark::New => {
                        mark[next] = Mark::Open;
                        stack.push((next, 0));
                    }
                    Mark::Open => {
                        let start = stack.iter().position(|&(n, _)| n == next).unwrap();
                        // Stack follows waiting_for edges; reverse for dependency order.
                        let mut cycle: Vec<String> = stack[start..]
                            .iter()
                            .map(|&(n, _)| step.ops[n].id.clone())
                            .collect();
                        cycle.reverse();
                        return Some(cycle);
                    }
                    Mark::Done => {}
                }
            } else {
                mark[node] = Mark::Done;
                stack.pop();
            }
        }
    }
    None
}

#[derive(Debug, Error)]
pub enum ProfileError {
    #[error("cannot read profile: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed profile document: {0}")]
    Parse(String),
    #[error("profile schema error: {0}")]
    Schema(String),
    #[error("step {step}: op `{op}` references unknown op `{missing}`")]
    DanglingRef {
        step: usize,
        op: String,
        missing: String,
    },
    #[error("step {step}: dependency cycle {}", cycle.join(" -> "))]
    Cycle { step: usize, cycle: Vec<String> },
    #[error("step {step} is invalid: {}", violations.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
    InvalidStep {
        step: usize,
        violations: Vec<Violation>,
    },
    #[error("step {step} has a different dependency structure than step 0")]
    StructureMismatch { step: usize },
    #[error("invalid profile metadata: {0}")]
    InvalidMeta(String),
}

// Wire format.

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProfileDoc {
    meta: MetaDoc,
    steps: Vec<StepDoc>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MetaDoc {
    profile_bandwidth_bps: u64,
    alpha_us_per_byte: f64,
    beta_us: f64,
    win_bytes: u64,
    num_ps: u8,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StepDoc {
    ops: Vec<OpDoc>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct OpDoc {
    id: String,
    res: ResourceKind,
    kind: OpKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    duration_us: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    size_bytes: Option<u64>,
    #[serde(default)]
    deps: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    dependents: Vec<String>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    transmission: bool,
}

pub fn load_profile(path: impl AsRef<Path>) -> Result<ProfileBundle, ProfileError> {
    let text = fs::read_to_string(path)?;
    parse_profile(&text)
}

/// Parses and validates a profile document.
pub fn parse_profile(text: &str) -> Result<ProfileBundle, ProfileError> {
    let doc: ProfileDoc = serde_json::from_str(text).map_err(|e| {
        use serde_json::error::Category;
        match e.classify() {
            Category::Data => ProfileError::Schema(e.to_string()),
            _ => ProfileError::Parse(e.to_string()),
        }
    })?;

    let meta = doc.meta;
    let steps = doc
        .steps
        .into_iter()
        .enumerate()
        .map(|(step_index, s)| {
            let ops = s
                .ops
                .into_iter()
                .map(|o| Operation {
                    id: o.id,
                    res: o.res,
                    kind: o.kind,
                    duration_us: o.duration_us,
                    size_bytes: o.size_bytes,
                    waiting_for: o.deps.into_iter().collect(),
                    dependent_ops: o.dependents.into_iter().collect(),
                    transmission: o.transmission,
                })
                .collect();
            Step::new(step_index, ops)
        })
        .collect();

    let bundle = ProfileBundle {
        steps,
        profile_bandwidth_bps: meta.profile_bandwidth_bps,
        alpha_us_per_byte: meta.alpha_us_per_byte,
        beta_us: meta.beta_us,
        win_bytes: meta.win_bytes,
        num_ps: meta.num_ps,
    };
    finalize(bundle)
}

/// Symmetrizes edges and checks every bundle invariant.
pub fn finalize(mut bundle: ProfileBundle) -> Result<ProfileBundle, ProfileError> {
    if bundle.steps.is_empty() {
        return Err(ProfileError::InvalidMeta("profile has no steps".into()));
    }
    if bundle.profile_bandwidth_bps == 0 {
        return Err(ProfileError::InvalidMeta(
            "profile_bandwidth_bps must be positive".into(),
        ));
    }
    if bundle.win_bytes == 0 {
        return Err(ProfileError::InvalidMeta(
            "win_bytes must be positive".into(),
        ));
    }
    if !(bundle.alpha_us_per_byte >= 0.0 && bundle.alpha_us_per_byte.is_finite()) {
        return Err(ProfileError::InvalidMeta(
            "alpha_us_per_byte must be finite and >= 0".into(),
        ));
    }
    if !(bundle.beta_us >= 0.0 && bundle.beta_us.is_finite()) {
        return Err(ProfileError::InvalidMeta(
            "beta_us must be finite and >= 0".into(),
        ));
    }
    if bundle.num_ps == 0 {
        return Err(ProfileError::InvalidMeta(
            "num_ps must be at least 1".into(),
        ));
    }

    for (i, step) in bundle.steps.iter_mut().enumerate() {
        step.step_index = i;
        let mut ids = BTreeSet::new();
        for op in &step.ops {
            if !ids.insert(op.id.as_str()) {
                return Err(ProfileError::Schema(format!(
                    "step {i}: duplicate op id `{}`",
                    op.id
                )));
            }
            if let Some(ps) = op.res.ps_index() {
                if ps >= bundle.num_ps {
                    return Err(ProfileError::Schema(format!(
                        "step {i}: op `{}` uses {} but num_ps is {}",
                        op.id, op.res, bundle.num_ps
                    )));
                }
            }
        }
        for op in &step.ops {
            if let Some(missing) = op
                .waiting_for
                .iter()
                .chain(&op.dependent_ops)
                .find(|d| !ids.contains(d.as_str()))
            {
                return Err(ProfileError::DanglingRef {
                    step: i,
                    op: op.id.clone(),
                    missing: missing.clone(),
                });
            }
        }
        step.symmetrize();
        if let Some(cycle) = find_cycle(step) {
            return Err(ProfileError::Cycle { step: i, cycle });
        }
        let violations = validate_step(step);
        if !violations.is_empty() {
            return Err(ProfileError::InvalidStep {
                step: i,
                violations,
            });
        }
    }

    let reference = bundle.steps[0].structure();
    if let Some(bad) = bundle
        .steps
        .iter()
        .skip(1)
        .find(|s| s.structure() != reference)
    {
        return Err(ProfileError::StructureMismatch {
            step: bad.step_index,
        });
    }
    Ok(bundle)
}

/// Serializes a bundle in the canonical format. Edges are written in the
/// `deps` direction only.
pub fn to_json(bundle: &ProfileBundle) -> String {
    let doc = ProfileDoc {
        meta: MetaDoc {
            profile_bandwidth_bps: bundle.profile_bandwidth_bps,
            alpha_us_per_byte: bundle.alpha_us_per_byte,
            beta_us: bundle.beta_us,
            win_bytes: bundle.win_bytes,
            num_ps: bundle.num_ps,
        },
        steps: bundle
            .steps
            .iter()
            .map(|s| StepDoc {
                ops: s
                    .ops
                    .iter()
                    .map(|op| OpDoc {
                        id: op.id.clone(),
                        res: op.res,
                        kind: op.kind,
                        duration_us: op.duration_us,
                        size_bytes: op.size_bytes,
                        deps: op.waiting_for.iter().cloned().collect(),
                        dependents: Vec::new(),
                        transmission: op.transmission,
                    })
                    .collect(),
            })
            .collect(),
    };
    serde_json::to_string_pretty(&doc).expect("profile serialization cannot fail")
}

pub fn save_profile(bundle: &ProfileBundle, path: impl AsRef<Path>) -> Result<(), ProfileError> {
    fs::write(path, to_json(bundle))?;
    Ok(())
}
