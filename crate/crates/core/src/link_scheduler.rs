//! Per-link stream schedulers.
//!
//! Under [`SchedulerPolicy::Http2Multiplex`] a stream's first service moves at
//! most `win_bytes`; a stream that had to stop is re-queued at the tail and
//! its second service runs to completion whatever its size. The two other
//! policies model flow control switched off: every stream is sent whole,
//! either in arrival order or in a configured order.

use std::collections::{HashMap, HashSet, VecDeque};
use std::hash::Hash;
use std::sync::Arc;

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SchedulerError {
    #[error("stream is already queued on this link")]
    DuplicateStream,
    #[error("no stream is queued on this link")]
    EmptyScheduler,
    #[error("a chunk from this link is still in flight")]
    ChunkInFlight,
    #[error("op `{0}` appears more than once in the enforced order")]
    DuplicateInOrder(String),
    #[error("flow-control window must be positive")]
    ZeroWindow,
}

/// Op-id order for [`SchedulerPolicy::EnforcedOrder`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EnforcedOrder {
    ids: Vec<String>,
    rank: HashMap<String, usize>,
}

impl EnforcedOrder {
    pub fn new<I, S>(ids: I) -> Result<Self, SchedulerError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let ids: Vec<String> = ids.into_iter().map(Into::into).collect();
        let mut rank = HashMap::with_capacity(ids.len());
        for (i, id) in ids.iter().enumerate() {
            if rank.insert(id.clone(), i).is_some() {
                return Err(SchedulerError::DuplicateInOrder(id.clone()));
            }
        }
        Ok(EnforcedOrder { ids, rank })
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn rank(&self, id: &str) -> Option<usize> {
        self.rank.get(id).copied()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SchedulerPolicy {
    Http2Multiplex { win_bytes: u64 },
    WholeStreamFifo,
    EnforcedOrder(Arc<EnforcedOrder>),
}

impl SchedulerPolicy {
    pub fn http2(win_bytes: u64) -> Result<Self, SchedulerError> {
        if win_bytes == 0 {
            return Err(SchedulerError::ZeroWindow);
        }
        Ok(SchedulerPolicy::Http2Multiplex { win_bytes })
    }

    pub fn enforced_order<I, S>(ids: I) -> Result<Self, SchedulerError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Ok(SchedulerPolicy::EnforcedOrder(Arc::new(
            EnforcedOrder::new(ids)?,
        )))
    }

    /// Position of `id` in the enforced order, if this policy has one.
    pub fn rank(&self, id: &str) -> Option<usize> {
        match self {
            SchedulerPolicy::EnforcedOrder(order) => order.rank(id),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StreamState<K> {
    pub op: K,
    pub remaining_bytes: u64,
    pub served_once: bool,
    rank: Option<usize>,
    arrival: u64,
}

/// One service of a stream, as selected by [`LinkScheduler::remove_chunk`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChunkSpec<K> {
    pub op: K,
    pub bytes: u64,
    pub is_last: bool,
}

#[derive(Debug, Clone)]
pub struct LinkScheduler<K> {
    policy: SchedulerPolicy,
    queue: VecDeque<StreamState<K>>,
    present: HashSet<K>,
    arrivals: u64,
    in_flight: bool,
}

impl<K: Clone + Eq + Hash> LinkScheduler<K> {
    pub fn new(policy: SchedulerPolicy) -> Self {
        LinkScheduler {
            policy,
            queue: VecDeque::new(),
            present: HashSet::new(),
            arrivals: 0,
            in_flight: false,
        }
    }

    pub fn policy(&self) -> &SchedulerPolicy {
        &self.policy
    }

    pub fn is_empty(&self) -> bool {
        self.queue.is_empty()
    }

    pub fn len(&self) -> usize {
        self.queue.len()
    }

    pub fn in_flight(&self) -> bool {
        self.in_flight
    }

    /// Streams in service order.
    pub fn queued(&self) -> impl Iterator<Item = &StreamState<K>> {
        self.queue.iter()
    }

    /// Enqueues a stream. `rank` is its position in an enforced order, if any;
    /// it is ignored by the other policies.
    pub fn add(
        &mut self,
        op: K,
        size_bytes: u64,
        rank: Option<usize>,
    ) -> Result<(), SchedulerError> {
        if !self.present.insert(op.clone()) {
            return Err(SchedulerError::DuplicateStream);
        }
        let state = StreamState {
            op,
            remaining_bytes: size_bytes,
            served_once: false,
            rank,
            arrival: self.arrivals,
        };
        self.arrivals += 1;
        match self.policy {
            SchedulerPolicy::EnforcedOrder(_) => {
                // Ranked streams in rank order, unranked ones after them by arrival.
                let key = |s: &StreamState<K>| (s.rank.is_none(), s.rank, s.arrival);
                let pos = self.queue.partition_point(|s| key(s) <= key(&state));
                self.queue.insert(pos, state);
            }
            _ => self.queue.push_back(state),
        }
        Ok(())
    }

    /// Selects the next chunk and marks the link busy until
    /// [`finish_chunk`](Self::finish_chunk).
    pub fn remove_chunk(&mut self) -> Result<ChunkSpec<K>, SchedulerError> {
        if self.in_flight {
            return Err(SchedulerError::ChunkInFlight);
        }
        let mut head = self
            .queue
            .pop_front()
            .ok_or(SchedulerError::EmptyScheduler)?;
        self.in_flight = true;
        if let SchedulerPolicy::Http2Multiplex { win_bytes } = self.policy {
            if !head.served_once && head.remaining_bytes > win_bytes {
                head.remaining_bytes -= win_bytes;
                head.served_once = true;
                let op = head.op.clone();
                self.queue.push_back(head);
                return Ok(ChunkSpec {
                    op,
                    bytes: win_bytes,
                    is_last: false,
                });
            }
        }
        self.present.remove(&head.op);
        Ok(ChunkSpec {
            op: head.op,
            bytes: head.remaining_bytes,
            is_last: true,
        })
    }

    pub fn finish_chunk(&mut self) {
        self.in_flight = false;
    }
}

/// Nominal full-bandwidth duration of `size_bytes`, in fractional µs.
pub fn chunk_duration_us(size_bytes: u64, bandwidth_bps: u64) -> f64 {
    size_bytes as f64 * 8.0 * 1e6 / bandwidth_bps as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct StreamStart {
    pub op: String,
    pub start_us: f64,
    pub size_bytes: u64,
}

/// Replays the HTTP/2 multiplexing model on one otherwise idle link and
/// returns each stream's predicted end time, in input order.
pub fn predict_stream_endtimes(
    streams: &[StreamStart],
    win_bytes: u64,
    bandwidth_bps: u64,
) -> Result<Vec<(String, f64)>, SchedulerError> {
    let mut sched = LinkScheduler::new(SchedulerPolicy::http2(win_bytes)?);
    let mut by_start: Vec<usize> = (0..streams.len()).collect();
    by_start.sort_by(|&a, &b| {
        streams[a]
            .start_us
            .total_cmp(&streams[b].start_us)
            .then(a.cmp(&b))
    });

    let index: HashMap<&str, usize> = streams
        .iter()
        .enumerate()
        .map(|(i, s)| (s.op.as_str(), i))
        .collect();
    if index.len() != streams.len() {
        return Err(SchedulerError::DuplicateStream);
    }
    let mut end = vec![f64::NAN; streams.len()];
    let mut next = 0;
    let mut now = f64::NEG_INFINITY;
    while next < by_start.len() || !sched.is_empty() {
        if sched.is_empty() {
            now = now.max(streams[by_start[next]].start_us);
        }
        while next < by_start.len() && streams[by_start[next]].start_us <= now {
            let s = &streams[by_start[next]];
            sched.add(s.op.clone(), s.size_bytes, None)?;
            next += 1;
        }
        let chunk = sched.remove_chunk()?;
        now += chunk_duration_us(chunk.bytes, bandwidth_bps);
        sched.finish_chunk();
        if chunk.is_last {
            end[index[chunk.op.as_str()]] = now;
        }
    }
    Ok(streams.iter().map(|s| s.op.clone()).zip(end).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn drain(sched: &mut LinkScheduler<&'static str>) -> Vec<(&'static str, u64, bool)> {
        let mut out = Vec::new();
        while !sched.is_empty() {
            let c = sched.remove_chunk().unwrap();
            sched.finish_chunk();
            out.push((c.op, c.bytes, c.is_last));
        }
        out
    }

    #[test]
    fn http2_keeps_arrival_order() {
        let mut s = LinkScheduler::new(SchedulerPolicy::http2(10).unwrap());
        s.add("A", 1, None).unwrap();
        s.add("B", 1, None).unwrap();
        let order: Vec<_> = s.queued().map(|st| st.op).collect();
        assert_eq!(order, vec!["A", "B"]);
    }

    #[test]
    fn enforced_order_dominates_arrival() {
        let policy = SchedulerPolicy::enforced_order(["A", "B"]).unwrap();
        let mut s = LinkScheduler::new(policy.clone());
        s.add("X", 1, policy.rank("X")).unwrap();
        s.add("B", 1, policy.rank("B")).unwrap();
        s.add("A", 1, policy.rank("A")).unwrap();
        s.add("Y", 1, policy.rank("Y")).unwrap();
        let order: Vec<_> = s.queued().map(|st| st.op).collect();
        assert_eq!(order, vec!["A", "B", "X", "Y"]);
    }

    #[test]
    fn duplicate_stream_rejected() {
        let mut s = LinkScheduler::new(SchedulerPolicy::WholeStreamFifo);
        s.add("A", 1, None).unwrap();
        assert_eq!(s.add("A", 1, None), Err(SchedulerError::DuplicateStream));
    }

    #[test]
    fn duplicate_in_order_rejected() {
        assert!(matches!(
            SchedulerPolicy::enforced_order(["A", "B", "A"]),
            Err(SchedulerError::DuplicateInOrder(id)) if id == "A"
        ));
        assert_eq!(SchedulerPolicy::http2(0), Err(SchedulerError::ZeroWindow));
    }

    #[test]
    fn http2_window_example() {
        let mut s = LinkScheduler::new(SchedulerPolicy::http2(3).unwrap());
        s.add("A", 5, None).unwrap();
        s.add("B", 2, None).unwrap();
        s.add("C", 4, None).unwrap();
        assert_eq!(
            drain(&mut s),
            vec![
                ("A", 3, false),
                ("B", 2, true),
                ("C", 3, false),
                ("A", 2, true),
                ("C", 1, true)
            ]
        );
    }

    #[test]
    fn small_stream_is_not_preempted() {
        let mut s = LinkScheduler::new(SchedulerPolicy::http2(3).unwrap());
        s.add("A", 2, None).unwrap();
        assert_eq!(drain(&mut s), vec![("A", 2, true)]);
    }

    #[test]
    fn fifo_sends_whole_streams() {
        let mut s = LinkScheduler::new(SchedulerPolicy::WholeStreamFifo);
        s.add("A", 5, None).unwrap();
        s.add("B", 2, None).unwrap();
        assert_eq!(drain(&mut s), vec![("A", 5, true), ("B", 2, true)]);
    }

    #[test]
    fn remove_errors() {
        let mut s: LinkScheduler<&str> = LinkScheduler::new(SchedulerPolicy::WholeStreamFifo);
        assert_eq!(s.remove_chunk(), Err(SchedulerError::EmptyScheduler));
        s.add("A", 5, None).unwrap();
        s.add("B", 5, None).unwrap();
        s.remove_chunk().unwrap();
        assert_eq!(s.remove_chunk(), Err(SchedulerError::ChunkInFlight));
        s.finish_chunk();
        assert_eq!(s.remove_chunk().unwrap().op, "B");
    }

    #[test]
    fn removed_stream_can_be_added_again() {
        let mut s = LinkScheduler::new(SchedulerPolicy::WholeStreamFifo);
        s.add("A", 5, None).unwrap();
        s.remove_chunk().unwrap();
        s.finish_chunk();
        assert!(s.add("A", 5, None).is_ok());
    }

    #[test]
    fn chunk_durations() {
        assert_eq!(chunk_duration_us(1_250_000, 10_000_000), 1_000_000.0);
        assert_eq!(chunk_duration_us(0, 10_000_000), 0.0);
        assert_eq!(chunk_duration_us(625_000, 10_000_000), 500_000.0);
    }

    fn start(op: &str, start_us: f64, size_bytes: u64) -> StreamStart {
        StreamStart {
            op: op.into(),
            start_us,
            size_bytes,
        }
    }

    #[test]
    fn endtime_single_stream() {
        let got =
            predict_stream_endtimes(&[start("A", 0.0, 1_250_000)], 28_000_000, 10_000_000).unwrap();
        assert_eq!(got, vec![("A".to_string(), 1_000_000.0)]);
    }

    #[test]
    fn endtime_two_streams_with_preemption() {
        // 8 Mbps moves one byte per µs. Chunks: A:3 [0,3], B:2 [3,5], A:2 [5,7].
        let got = predict_stream_endtimes(&[start("A", 0.0, 5), start("B", 0.0, 2)], 3, 8_000_000)
            .unwrap();
        assert_eq!(got, vec![("A".to_string(), 7.0), ("B".to_string(), 5.0)]);
    }

    #[test]
    fn endtime_after_idle_gap() {
        let got = predict_stream_endtimes(
            &[start("A", 0.0, 10), start("B", 100.0, 20)],
            1_000,
            8_000_000,
        )
        .unwrap();
        assert_eq!(got, vec![("A".to_string(), 10.0), ("B".to_string(), 120.0)]);
    }

    #[test]
    fn endtime_late_arrival_queues_behind_requeued_stream() {
        // A:3 [0,3] is requeued; B arrives at 1 behind it: A:3 [3,6], B:2 [6,8].
        let got = predict_stream_endtimes(&[start("A", 0.0, 6), start("B", 1.0, 2)], 3, 8_000_000)
            .unwrap();
        assert_eq!(got, vec![("A".to_string(), 6.0), ("B".to_string(), 8.0)]);
    }

    fn sizes_strategy() -> impl Strategy<Value = (u64, Vec<u64>)> {
        (1u64..20).prop_flat_map(|win| (Just(win), prop::collection::vec(1..=10 * win, 0..=6)))
    }

    proptest! {
        #[test]
        fn byte_conservation_and_service_counts((win, sizes) in sizes_strategy()) {
            let mut s = LinkScheduler::new(SchedulerPolicy::http2(win).unwrap());
            for (i, &size) in sizes.iter().enumerate() {
                s.add(i, size, None).unwrap();
            }
            let mut bytes = vec![0u64; sizes.len()];
            let mut services = vec![0usize; sizes.len()];
            let mut lasts = vec![0usize; sizes.len()];
            while !s.is_empty() {
                let c = s.remove_chunk().unwrap();
                s.finish_chunk();
                bytes[c.op] += c.bytes;
                services[c.op] += 1;
                lasts[c.op] += c.is_last as usize;
            }
            prop_assert_eq!(&bytes, &sizes);
            prop_assert!(services.iter().all(|&n| (1..=2).contains(&n)));
            prop_assert!(lasts.iter().all(|&n| n == 1));
        }

        #[test]
        fn unbounded_window_matches_fifo((_win, sizes) in sizes_strategy()) {
            let mut a = LinkScheduler::new(SchedulerPolicy::http2(u64::MAX).unwrap());
            let mut b = LinkScheduler::new(SchedulerPolicy::WholeStreamFifo);
            let order = SchedulerPolicy::enforced_order((0..sizes.len()).map(|i| i.to_string())).unwrap();
            let mut c = LinkScheduler::new(order.clone());
            for (i, &size) in sizes.iter().enumerate() {
                a.add(i, size, None).unwrap();
                b.add(i, size, None).unwrap();
                c.add(i, size, order.rank(&i.to_string())).unwrap();
            }
            for _ in 0..sizes.len() {
                let (x, y, z) = (a.remove_chunk().unwrap(), b.remove_chunk().unwrap(), c.remove_chunk().unwrap());
                prop_assert_eq!(&x, &y);
                prop_assert_eq!(&y, &z);
                a.finish_chunk();
                b.finish_chunk();
                c.finish_chunk();
            }
            prop_assert!(a.is_empty() && b.is_empty() && c.is_empty());
        }
    }
}
