//! Bandwidth shares on parameter-server links.

use crate::trace_model::ResourceKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    Downlink,
    Uplink,
}

impl Direction {
    pub fn of(res: ResourceKind) -> Option<(Direction, u8)> {
        match res {
            ResourceKind::Downlink(i) => Some((Direction::Downlink, i)),
            ResourceKind::Uplink(i) => Some((Direction::Uplink, i)),
            _ => None,
        }
    }
}

/// Which workers currently have a chunk in flight on each (direction, ps) link.
#[derive(Debug, Clone)]
pub struct ActiveSet {
    num_ps: usize,
    members: Vec<Vec<bool>>,
    counts: Vec<usize>,
}

impl ActiveSet {
    pub fn new(num_ps: u8, num_workers: usize) -> Self {
        let links = 2 * num_ps as usize;
        ActiveSet {
            num_ps: num_ps as usize,
            members: vec![vec![false; num_workers]; links],
            counts: vec![0; links],
        }
    }

    pub fn num_ps(&self) -> u8 {
        self.num_ps as u8
    }

    fn link(&self, dir: Direction, ps: u8) -> usize {
        let base = match dir {
            Direction::Downlink => 0,
            Direction::Uplink => self.num_ps,
        };
        base + ps as usize
    }

    pub fn insert(&mut self, dir: Direction, ps: u8, worker: usize) {
        let l = self.link(dir, ps);
        if !std::mem::replace(&mut self.members[l][worker], true) {
            self.counts[l] += 1;
        }
    }

    pub fn remove(&mut self, dir: Direction, ps: u8, worker: usize) {
        let l = self.link(dir, ps);
        if std::mem::replace(&mut self.members[l][worker], false) {
            self.counts[l] -= 1;
        }
    }

    pub fn contains(&self, dir: Direction, ps: u8, worker: usize) -> bool {
        self.members[self.link(dir, ps)][worker]
    }

    pub fn count(&self, dir: Direction, ps: u8) -> usize {
        self.counts[self.link(dir, ps)]
    }
}

/// Fraction of `res` available to `worker`. Computation resources are never
/// shared; links are split equally among their active workers, with the
/// two-server cap applied when there are two parameter servers.
pub fn share(res: ResourceKind, active: &ActiveSet, worker: usize) -> f64 {
    match Direction::of(res) {
        None => 1.0,
        Some((dir, ps)) if active.num_ps() == 2 => share_two_ps(worker, ps, dir, active),
        Some((dir, ps)) => 1.0 / active.count(dir, ps).max(1) as f64,
    }
}

/// Share of link `(dir, ps_index)` for `worker` with two parameter servers.
///
/// Each server link is split equally among its active workers. A worker that
/// is active on both links of one direction cannot exceed its own bandwidth:
/// when the two equal shares add up to more than 1, the larger one is capped at
/// `1 - smaller`. If the worker is alone on both links, each gets 1/2.
pub fn share_two_ps(worker: usize, ps_index: u8, dir: Direction, active: &ActiveSet) -> f64 {
    let own = 1.0 / active.count(dir, ps_index).max(1) as f64;
    let other_ps = 1 - ps_index.min(1);
    if !active.contains(dir, other_ps, worker) {
        return own;
    }
    let other = 1.0 / active.count(dir, other_ps).max(1) as f64;
    if own + other <= 1.0 {
        own
    } else if own > other {
        1.0 - other
    } else if own < other {
        own
    } else {
        0.5
    }
}
