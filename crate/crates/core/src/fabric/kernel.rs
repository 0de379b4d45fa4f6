//! Deterministic discrete-event kernel.

use alloc::collections::BinaryHeap;
use core::cmp::{Ordering, Reverse};

use crate::time::SimTime;

struct Entry<E> {
    time: SimTime,
    seq: u64,
    event: E,
}

impl<E> PartialEq for Entry<E> {
    fn eq(&self, other: &Self) -> bool {
        (self.time, self.seq) == (other.time, other.seq)
    }
}
impl<E> Eq for Entry<E> {}
impl<E> PartialOrd for Entry<E> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl<E> Ord for Entry<E> {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.time, self.seq).cmp(&(other.time, other.seq))
    }
}

/// Stop condition for [`Kernel::run_until`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Until {
    /// Run every event stamped at or before this time.
    Time(SimTime),
    Quiescent,
}

pub trait Handler<E> {
    fn handle(&mut self, now: SimTime, event: E, kernel: &mut Kernel<E>);
}

/// Events fire in `(time, insertion sequence)` order; the clock never
/// moves backward.
pub struct Kernel<E> {
    now: SimTime,
    seq: u64,
    executed: u64,
    queue: BinaryHeap<Reverse<Entry<E>>>,
}

impl<E> Default for Kernel<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E> Kernel<E> {
    pub fn new() -> Self {
        Kernel { now: SimTime::ZERO, seq: 0, executed: 0, queue: BinaryHeap::new() }
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn pending(&self) -> usize {
        self.queue.len()
    }

    pub fn executed(&self) -> u64 {
        self.executed
    }

    pub fn peek_time(&self) -> Option<SimTime> {
        self.queue.peek().map(|Reverse(e)| e.time)
    }

    /// Panics if `at` is in the past.
    pub fn schedule_at(&mut self, at: SimTime, event: E) {
        assert!(at >= self.now, "event scheduled in the past: {at} < {}", self.now);
        let seq = self.seq;
        self.seq += 1;
        self.queue.push(Reverse(Entry { time: at, seq, event }));
    }

    pub fn schedule_in(&mut self, delay: SimTime, event: E) {
        self.schedule_at(self.now + delay, event);
    }

    /// Pops the next event and advances the clock to it.
    pub fn pop(&mut self) -> Option<(SimTime, E)> {
        let Reverse(e) = self.queue.pop()?;
        self.now = e.time;
        self.executed += 1;
        Some((e.time, e.event))
    }

    pub fn run_until<H: Handler<E>>(&mut self, handler: &mut H, until: Until) -> u64 {
        let mut count = 0;
        loop {
            match (until, self.peek_time()) {
                (_, None) => break,
                (Until::Time(end), Some(t)) if t > end => break,
                _ => {}
            }
            let (now, event) = self.pop().expect("peeked");
            handler.handle(now, event, self);
            count += 1;
        }
        count
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec::Vec;

    struct Log(Vec<(u64, u32)>);

    impl Handler<u32> for Log {
        fn handle(&mut self, now: SimTime, event: u32, kernel: &mut Kernel<u32>) {
            self.0.push((now.as_ps(), event));
            if event == 100 {
                kernel.schedule_in(SimTime::from_ps(5), 101);
            }
        }
    }

    #[test]
    fn empty_queue_runs_nothing() {
        let mut k = Kernel::<u32>::new();
        let mut log = Log(Vec::new());
        assert_eq!(k.run_until(&mut log, Until::Quiescent), 0);
        assert_eq!(k.now(), SimTime::ZERO);
    }

    #[test]
    fn equal_times_fire_in_insertion_order() {
        let mut k = Kernel::new();
        for e in [3, 1, 2] {
            k.schedule_at(SimTime::from_ps(10), e);
        }
        k.schedule_at(SimTime::from_ps(5), 0);
        let mut log = Log(Vec::new());
        assert_eq!(k.run_until(&mut log, Until::Quiescent), 4);
        assert_eq!(log.0, [(5, 0), (10, 3), (10, 1), (10, 2)]);
    }

    #[test]
    fn run_until_time_stops_at_boundary() {
        let mut k = Kernel::new();
        k.schedule_at(SimTime::from_ps(10), 100);
        k.schedule_at(SimTime::from_ps(20), 7);
        let mut log = Log(Vec::new());
        assert_eq!(k.run_until(&mut log, Until::Time(SimTime::from_ps(15))), 2);
        assert_eq!(log.0, [(10, 100), (15, 101)]);
        assert_eq!(k.pending(), 1);
    }

    #[test]
    #[should_panic]
    fn past_events_are_rejected() {
        let mut k = Kernel::new();
        k.schedule_at(SimTime::from_ps(10), 1);
        k.pop();
        k.schedule_at(SimTime::from_ps(9), 2);
    }
}
