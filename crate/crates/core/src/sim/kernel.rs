//! Discrete-event queue with integer microsecond time. Events at equal times
//! run in insertion order.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

#[derive(Debug)]
struct Entry<T> {
    time_us: u64,
    seq: u64,
    payload: T,
}

impl<T> PartialEq for Entry<T> {
    fn eq(&self, other: &Self) -> bool {
        (self.time_us, self.seq) == (other.time_us, other.seq)
    }
}

impl<T> Eq for Entry<T> {}

impl<T> PartialOrd for Entry<T> {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl<T> Ord for Entry<T> {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.time_us, self.seq).cmp(&(other.time_us, other.seq))
    }
}

#[derive(Debug)]
pub struct EventQueue<T> {
    heap: BinaryHeap<Reverse<Entry<T>>>,
    now_us: u64,
    next_seq: u64,
    executed: u64,
}

impl<T> Default for EventQueue<T> {
    fn default() -> Self {
        EventQueue { heap: BinaryHeap::new(), now_us: 0, next_seq: 0, executed: 0 }
    }
}

impl<T> EventQueue<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn now_us(&self) -> u64 {
        self.now_us
    }

    pub fn executed(&self) -> u64 {
        self.executed
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    /// Schedules `payload` to run `delay_us` after the current time.
    pub fn schedule_in(&mut self, delay_us: u64, payload: T) {
        self.schedule_at(self.now_us + delay_us, payload);
    }

    /// # Panics
    /// If `time_us` lies in the past.
    pub fn schedule_at(&mut self, time_us: u64, payload: T) {
        assert!(time_us >= self.now_us, "event scheduled in the past: {time_us} < {}", self.now_us);
        self.heap.push(Reverse(Entry { time_us, seq: self.next_seq, payload }));
        self.next_seq += 1;
    }

    pub fn peek_time(&self) -> Option<u64> {
        self.heap.peek().map(|Reverse(e)| e.time_us)
    }

    /// Pops the next event and advances the clock to it.
    pub fn pop(&mut self) -> Option<(u64, T)> {
        let Reverse(e) = self.heap.pop()?;
        debug_assert!(e.time_us >= self.now_us);
        self.now_us = e.time_us;
        self.executed += 1;
        Some((e.time_us, e.payload))
    }
}
