use std::cmp::Ordering;
use std::collections::BinaryHeap;

use thiserror::Error;

use crate::time::SimTime;

#[derive(Debug, Error, PartialEq, Eq)]
#[error("event scheduled at {at} but the clock already reads {now}")]
pub struct PastSchedule {
    pub at: SimTime,
    pub now: SimTime,
}

struct Entry<E> {
    time: SimTime,
    seq: u64,
    event: E,
}

impl<E> PartialEq for Entry<E> {
    fn eq(&self, other: &Self) -> bool {
        self.time == other.time && self.seq == other.seq
    }
}
impl<E> Eq for Entry<E> {}

impl<E> PartialOrd for Entry<E> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

// Reversed so the max-heap pops the earliest (time, seq).
impl<E> Ord for Entry<E> {
    fn cmp(&self, other: &Self) -> Ordering {
        (other.time, other.seq).cmp(&(self.time, self.seq))
    }
}

/// Time-ordered event queue. Events at equal times dequeue in insertion order.
pub struct EventQueue<E> {
    heap: BinaryHeap<Entry<E>>,
    next_seq: u64,
    now: SimTime,
}

impl<E> Default for EventQueue<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E> EventQueue<E> {
    pub fn new() -> Self {
        EventQueue { heap: BinaryHeap::new(), next_seq: 0, now: SimTime::ZERO }
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn schedule(&mut self, time: SimTime, event: E) -> Result<(), PastSchedule> {
        if time < self.now {
            return Err(PastSchedule { at: time, now: self.now });
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Entry { time, seq, event });
        Ok(())
    }

    pub fn next_event(&mut self) -> Option<(SimTime, E)> {
        let e = self.heap.pop()?;
        self.now = e.time;
        Some((e.time, e.event))
    }

    pub fn peek_time(&self) -> Option<SimTime> {
        self.heap.peek().map(|e| e.time)
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn t(s: f64) -> SimTime {
        SimTime::from_secs_f64(s)
    }

    #[test]
    fn equal_times_keep_insertion_order() {
        let mut q = EventQueue::new();
        q.schedule(t(5.0), 'A').unwrap();
        q.schedule(t(5.0), 'B').unwrap();
        assert_eq!(q.next_event().unwrap().1, 'A');
        assert_eq!(q.next_event().unwrap().1, 'B');
    }

    #[test]
    fn earlier_time_first() {
        let mut q = EventQueue::new();
        q.schedule(t(5.0), 'A').unwrap();
        q.schedule(t(3.0), 'B').unwrap();
        assert_eq!(q.next_event().unwrap(), (t(3.0), 'B'));
    }

    #[test]
    fn past_schedule_rejected() {
        let mut q = EventQueue::new();
        q.schedule(t(5.0), 0).unwrap();
        q.next_event();
        assert_eq!(q.schedule(t(4.0), 1), Err(PastSchedule { at: t(4.0), now: t(5.0) }));
    }

    #[test]
    fn thousand_random_inserts_match_sort_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut q = EventQueue::new();
        let mut oracle = Vec::new();
        for i in 0..1000usize {
            let time = SimTime::from_micros(rng.gen_range(0..200));
            q.schedule(time, i).unwrap();
            oracle.push((time, i));
        }
        oracle.sort();
        let got: Vec<(SimTime, usize)> = std::iter::from_fn(|| q.next_event()).collect();
        assert_eq!(got, oracle);
    }
}
