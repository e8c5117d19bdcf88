use std::cmp::Ordering;
use std::collections::BinaryHeap;

use super::SimTime;

struct Entry<E> {
    at: SimTime,
    seq: u64,
    event: E,
}

impl<E> PartialEq for Entry<E> {
    fn eq(&self, other: &Self) -> bool {
        self.at == other.at && self.seq == other.seq
    }
}

impl<E> Eq for Entry<E> {}

impl<E> PartialOrd for Entry<E> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<E> Ord for Entry<E> {
    // BinaryHeap is a max-heap; invert so the earliest (at, seq) pops first.
    fn cmp(&self, other: &Self) -> Ordering {
        (other.at, other.seq).cmp(&(self.at, self.seq))
    }
}

/// Deterministic discrete-event queue. Events pop in `(time, insertion)` order.
pub struct Scheduler<E> {
    now: SimTime,
    seq: u64,
    processed: u64,
    queue: BinaryHeap<Entry<E>>,
}

impl<E> Default for Scheduler<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E> Scheduler<E> {
    pub fn new() -> Self {
        Self {
            now: SimTime::ZERO,
            seq: 0,
            processed: 0,
            queue: BinaryHeap::new(),
        }
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn processed(&self) -> u64 {
        self.processed
    }

    pub fn pending(&self) -> usize {
        self.queue.len()
    }

    pub fn peek_time(&self) -> Option<SimTime> {
        self.queue.peek().map(|e| e.at)
    }

    /// # Panics
    ///
    /// Scheduling before the current time is a logic error in the caller.
    pub fn schedule(&mut self, event: E, at: SimTime) {
        assert!(
            at >= self.now,
            "event scheduled in the past: {at} < now {}",
            self.now
        );
        self.queue.push(Entry {
            at,
            seq: self.seq,
            event,
        });
        self.seq += 1;
    }

    pub fn schedule_in(&mut self, event: E, delay: SimTime) {
        let at = self.now + delay;
        self.schedule(event, at);
    }

    /// Next event with `time <= t_end`, advancing the clock to it.
    pub fn pop_until(&mut self, t_end: SimTime) -> Option<(SimTime, E)> {
        if self.queue.peek()?.at > t_end {
            return None;
        }
        let e = self.queue.pop()?;
        self.now = e.at;
        self.processed += 1;
        Some((e.at, e.event))
    }

    pub fn pop(&mut self) -> Option<(SimTime, E)> {
        self.pop_until(SimTime::MAX)
    }

    /// Drives `handler` over every event up to `t_end`; returns how many ran.
    /// The clock ends at `t_end` (or stays put if it is already later).
    pub fn run_until<F>(&mut self, t_end: SimTime, mut handler: F) -> u64
    where
        F: FnMut(&mut Self, SimTime, E),
    {
        let mut count = 0;
        while let Some((t, e)) = self.pop_until(t_end) {
            handler(self, t, e);
            count += 1;
        }
        self.advance_to(t_end);
        count
    }

    /// Moves the clock forward without processing anything.
    pub fn advance_to(&mut self, t: SimTime) {
        if t > self.now && t != SimTime::MAX {
            self.now = t;
        }
    }

    /// Drops every pending event.
    pub fn clear(&mut self) {
        self.queue.clear();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(x: u64) -> SimTime {
        SimTime::from_secs(x)
    }

    #[test]
    fn time_order() {
        let mut sch = Scheduler::new();
        sch.schedule("A", s(5));
        sch.schedule("B", s(3));
        let mut seen = vec![];
        let n = sch.run_until(s(10), |_, _, e| seen.push(e));
        assert_eq!(n, 2);
        assert_eq!(seen, vec!["B", "A"]);
        assert_eq!(sch.now(), s(10));
    }

    #[test]
    fn ties_in_insertion_order() {
        let mut sch = Scheduler::new();
        for name in ["first", "second", "third"] {
            sch.schedule(name, s(3));
        }
        let mut seen = vec![];
        sch.run_until(s(3), |_, _, e| seen.push(e));
        assert_eq!(seen, vec!["first", "second", "third"]);
    }

    #[test]
    fn horizon_respected() {
        let mut sch = Scheduler::new();
        sch.schedule(1, s(1));
        sch.schedule(2, s(2));
        sch.schedule(3, s(3));
        let mut seen = vec![];
        sch.run_until(s(2), |_, _, e| seen.push(e));
        assert_eq!(seen, vec![1, 2]);
        assert_eq!(sch.pending(), 1);
    }

    #[test]
    fn handler_can_schedule_follow_ups() {
        let mut sch = Scheduler::new();
        sch.schedule(0u32, s(0));
        let mut seen = vec![];
        sch.run_until(s(100), |sch, _, e| {
            seen.push(e);
            if e < 3 {
                sch.schedule_in(e + 1, s(1));
            }
        });
        assert_eq!(seen, vec![0, 1, 2, 3]);
    }

    #[test]
    #[should_panic(expected = "in the past")]
    fn past_events_are_fatal() {
        let mut sch = Scheduler::new();
        sch.schedule((), s(5));
        sch.pop();
        sch.schedule((), s(4));
    }
}
