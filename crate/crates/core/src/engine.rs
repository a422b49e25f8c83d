//! Deterministic discrete-event engine.
//!
//! A single simulated clock in seconds, a time-ordered queue whose ties are
//! broken by insertion order, and seeded random streams keyed by a label so
//! that every traffic source or predictor draws from its own sequence.

use alloc::collections::BinaryHeap;
use core::cmp::Ordering;
use core::hash::Hasher;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Simulated time in seconds.
pub type SimTime = f64;

/// Identifier of a simulated node (OLT, MFU, SFU or endpoint).
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub u32);

#[derive(Clone, Debug, PartialEq)]
pub struct SimEvent<P> {
    pub fire_time: SimTime,
    pub seq: u64,
    pub target: NodeId,
    pub payload: P,
}

#[derive(Debug, Clone, Copy, PartialEq, thiserror::Error)]
pub enum ScheduleError {
    #[error("event at t={at} scheduled before the current clock t={now}")]
    InThePast { at: SimTime, now: SimTime },
    #[error("event time {0} is not finite")]
    NotFinite(SimTime),
}

struct Entry<P>(SimEvent<P>);

impl<P> PartialEq for Entry<P> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl<P> Eq for Entry<P> {}

impl<P> PartialOrd for Entry<P> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<P> Ord for Entry<P> {
    // BinaryHeap is a max-heap; reverse so the earliest (time, seq) pops first.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .0
            .fire_time
            .total_cmp(&self.0.fire_time)
            .then_with(|| other.0.seq.cmp(&self.0.seq))
    }
}

/// Event queue plus the global clock.
pub struct Scheduler<P> {
    now: SimTime,
    next_seq: u64,
    heap: BinaryHeap<Entry<P>>,
    processed: u64,
}

impl<P> Default for Scheduler<P> {
    fn default() -> Self {
        Self::new()
    }
}

impl<P> Scheduler<P> {
    pub fn new() -> Self {
        Self {
            now: 0.0,
            next_seq: 0,
            heap: BinaryHeap::new(),
            processed: 0,
        }
    }

    #[inline]
    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn pending(&self) -> usize {
        self.heap.len()
    }

    /// Total number of events handed to a handler so far.
    pub fn processed(&self) -> u64 {
        self.processed
    }

    /// Enqueue `payload` for `target` at absolute time `at`. Returns the
    /// sequence number used as tie-break.
    pub fn schedule(&mut self, at: SimTime, target: NodeId, payload: P) -> Result<u64, ScheduleError> {
        if !at.is_finite() {
            return Err(ScheduleError::NotFinite(at));
        }
        if at < self.now {
            return Err(ScheduleError::InThePast { at, now: self.now });
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Entry(SimEvent {
            fire_time: at,
            seq,
            target,
            payload,
        }));
        Ok(seq)
    }

    /// Like [`Scheduler::schedule`] with a delay relative to the clock.
    pub fn schedule_in(&mut self, delay: SimTime, target: NodeId, payload: P) -> Result<u64, ScheduleError> {
        self.schedule(self.now + delay, target, payload)
    }

    /// Time of the next pending event, if any.
    pub fn peek_time(&self) -> Option<SimTime> {
        self.heap.peek().map(|e| e.0.fire_time)
    }

    /// Pop the next event if it fires at or before `t_end`, advancing the clock.
    pub fn pop_until(&mut self, t_end: SimTime) -> Option<SimEvent<P>> {
        match self.heap.peek() {
            Some(e) if e.0.fire_time <= t_end => {
                let ev = self.heap.pop().unwrap().0;
                debug_assert!(ev.fire_time >= self.now, "clock would move backwards");
                self.now = ev.fire_time;
                self.processed += 1;
                Some(ev)
            }
            _ => None,
        }
    }

    /// Process every event with `fire_time <= t_end`, then set the clock to
    /// `t_end`. Handlers may schedule further events, including at the
    /// current instant. Returns the number of events processed in this call.
    pub fn run_until<F>(&mut self, t_end: SimTime, mut handler: F) -> u64
    where
        F: FnMut(&mut Scheduler<P>, SimEvent<P>),
    {
        assert!(t_end >= self.now, "run_until target {t_end} is before clock {}", self.now);
        let mut count = 0;
        while let Some(ev) = self.pop_until(t_end) {
            handler(self, ev);
            count += 1;
        }
        self.now = t_end;
        count
    }
}

/// Seeded random stream. Identical `(seed, stream_id)` pairs produce
/// identical draw sequences; distinct labels are independent ChaCha streams.
#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, label: &str) -> Self {
        Self::with_stream_id(seed, stream_id_of(label))
    }

    pub fn with_stream_id(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        Self { seed, stream_id, rng }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Derive a child stream, e.g. one per SFU under a common source label.
    pub fn child(&self, label: &str) -> Self {
        let mut h = fnv::FnvHasher::default();
        h.write_u64(self.stream_id);
        h.write(label.as_bytes());
        Self::with_stream_id(self.seed, h.finish())
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

/// Stable 64-bit id for a stream label.
pub fn stream_id_of(label: &str) -> u64 {
    let mut h = fnv::FnvHasher::default();
    h.write(label.as_bytes());
    h.finish()
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec::Vec;
    use rand::Rng;

    #[test]
    fn fifo_tie_break() {
        let mut s = Scheduler::new();
        s.schedule(5.0, NodeId(0), 'A').unwrap();
        s.schedule(5.0, NodeId(0), 'B').unwrap();
        let mut out = Vec::new();
        s.run_until(10.0, |_, e| out.push(e.payload));
        assert_eq!(out, ['A', 'B']);
    }

    #[test]
    fn now_event_fires_before_later() {
        let mut s = Scheduler::new();
        s.run_until(1.0, |_, _: SimEvent<u8>| {});
        s.schedule(1.0 + 1e-12, NodeId(0), 2).unwrap();
        s.schedule(1.0, NodeId(0), 1).unwrap();
        let mut out = Vec::new();
        s.run_until(2.0, |_, e| out.push(e.payload));
        assert_eq!(out, [1, 2]);
    }

    #[test]
    fn past_scheduling_is_rejected() {
        let mut s = Scheduler::<()>::new();
        s.run_until(3.0, |_, _| {});
        assert!(matches!(
            s.schedule(2.0, NodeId(1), ()),
            Err(ScheduleError::InThePast { .. })
        ));
        assert!(s.schedule(f64::NAN, NodeId(1), ()).is_err());
    }

    #[test]
    fn run_until_on_empty_queue_moves_clock() {
        let mut s = Scheduler::<()>::new();
        assert_eq!(s.run_until(1.0, |_, _| {}), 0);
        assert_eq!(s.now(), 1.0);
    }

    #[test]
    fn run_until_counts_and_leaves_later_events() {
        let mut s = Scheduler::new();
        s.schedule(0.5, NodeId(0), ()).unwrap();
        s.schedule(1.5, NodeId(0), ()).unwrap();
        assert_eq!(s.run_until(1.0, |_, _| {}), 1);
        assert_eq!(s.pending(), 1);
        assert_eq!(s.now(), 1.0);
    }

    #[test]
    fn handlers_can_chain_events() {
        let mut s = Scheduler::new();
        s.schedule(0.0, NodeId(0), 0u32).unwrap();
        let n = s.run_until(1.0, |s, e| {
            if e.payload < 9 {
                s.schedule_in(0.1, e.target, e.payload + 1).unwrap();
            }
        });
        assert_eq!(n, 10);
    }

    #[test]
    fn dequeue_order_matches_sort_oracle() {
        let mut rng = RngStream::new(7, "events");
        let mut s = Scheduler::new();
        let mut oracle = Vec::new();
        for i in 0..100_000u32 {
            // coarse grid so that plenty of exact ties occur
            let t = (rng.random_range(0..5_000u32) as f64) * 1e-3;
            let seq = s.schedule(t, NodeId(0), i).unwrap();
            oracle.push((t, seq, i));
        }
        oracle.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut got = Vec::with_capacity(oracle.len());
        let mut last = f64::NEG_INFINITY;
        s.run_until(10.0, |s, e| {
            assert!(e.fire_time >= last);
            assert_eq!(s.now(), e.fire_time);
            last = e.fire_time;
            got.push(e.payload);
        });
        let want: Vec<u32> = oracle.into_iter().map(|o| o.2).collect();
        assert_eq!(got, want);
    }

    #[test]
    fn streams_are_reproducible_and_independent() {
        let mut a = RngStream::new(42, "xr/0");
        let mut b = RngStream::new(42, "xr/0");
        let mut c = RngStream::new(42, "xr/1");
        let va: Vec<u64> = (0..16).map(|_| a.next_u64()).collect();
        let vb: Vec<u64> = (0..16).map(|_| b.next_u64()).collect();
        let vc: Vec<u64> = (0..16).map(|_| c.next_u64()).collect();
        assert_eq!(va, vb);
        assert_ne!(va, vc);
        let mut d = RngStream::new(43, "xr/0");
        assert_ne!(va[0], d.next_u64());
    }
}
