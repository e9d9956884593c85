use std::cell::RefCell;
use std::rc::Rc;
use std::time::Instant;

use crate::model::Opcode;

/// A monotonic tick source.
pub trait Clock {
    fn now(&mut self) -> u64;
}

/// Nanoseconds since construction.
#[derive(Debug, Clone, Copy)]
pub struct MonotonicClock {
    start: Instant,
}

impl MonotonicClock {
    pub fn new() -> Self {
        MonotonicClock { start: Instant::now() }
    }
}

impl Default for MonotonicClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for MonotonicClock {
    fn now(&mut self) -> u64 {
        self.start.elapsed().as_nanos() as u64
    }
}

/// Advances by a fixed step on every read.
#[derive(Debug, Clone, Copy)]
pub struct FakeClock {
    ticks: u64,
    step: u64,
}

impl FakeClock {
    pub fn new(step: u64) -> Self {
        FakeClock { ticks: 0, step }
    }
}

impl Clock for FakeClock {
    fn now(&mut self) -> u64 {
        self.ticks += self.step;
        self.ticks
    }
}

/// Timing of one op, or of a whole invoke when `op_index` is `None`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ProfileEvent {
    pub op_index: Option<usize>,
    pub opcode: Option<Opcode>,
    pub duration: u64,
}

pub trait ProfileSink {
    fn record(&mut self, event: ProfileEvent);
}

/// A cloneable, shared event log.
#[derive(Debug, Clone, Default)]
pub struct ProfileLog {
    events: Rc<RefCell<Vec<ProfileEvent>>>,
}

impl ProfileLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn events(&self) -> Vec<ProfileEvent> {
        self.events.borrow().clone()
    }

    pub fn take(&self) -> Vec<ProfileEvent> {
        std::mem::take(&mut *self.events.borrow_mut())
    }

    pub fn len(&self) -> usize {
        self.events.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl ProfileSink for ProfileLog {
    fn record(&mut self, event: ProfileEvent) {
        self.events.borrow_mut().push(event);
    }
}

/// Clock, sink and a per-op buffer so events are emitted only after the
/// invoke's own timing has stopped.
pub(crate) struct Profiler {
    pub clock: Box<dyn Clock>,
    pub sink: Box<dyn ProfileSink>,
    pub op_ticks: Vec<u64>,
}
