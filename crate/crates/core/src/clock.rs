use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Instant;

/// Millisecond timestamps for round and stage logs.
pub trait Clock: Send + Sync {
    fn now_ms(&self) -> u64;
}

/// Wall-clock milliseconds since construction.
pub struct SystemClock {
    start: Instant,
}

impl SystemClock {
    pub fn new() -> Self {
        Self { start: Instant::now() }
    }
}

impl Default for SystemClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for SystemClock {
    fn now_ms(&self) -> u64 {
        self.start.elapsed().as_millis() as u64
    }
}

/// Deterministic clock: every read advances by one tick. Used for offline
/// runs so that logs are byte-identical across executions.
#[derive(Default)]
pub struct LogicalClock {
    tick: AtomicU64,
}

impl Clock for LogicalClock {
    fn now_ms(&self) -> u64 {
        self.tick.fetch_add(1, Ordering::SeqCst)
    }
}
