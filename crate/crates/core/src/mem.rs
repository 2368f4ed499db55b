//! Byte accounting for transient buffers inside the training paths.
//!
//! Allocation sites that matter for peak memory report to a tracker; the
//! tracker keeps the running total and its high-water mark. Measuring here
//! instead of at the OS level keeps the numbers deterministic and portable.

use std::sync::atomic::{AtomicUsize, Ordering};

#[derive(Debug, Default)]
pub struct MemTracker {
    live: AtomicUsize,
    peak: AtomicUsize,
}

impl MemTracker {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn alloc(&self, bytes: usize) {
        let now = self.live.fetch_add(bytes, Ordering::Relaxed) + bytes;
        self.peak.fetch_max(now, Ordering::Relaxed);
    }

    pub fn free(&self, bytes: usize) {
        self.live.fetch_sub(bytes, Ordering::Relaxed);
    }

    pub fn live(&self) -> usize {
        self.live.load(Ordering::Relaxed)
    }

    pub fn peak(&self) -> usize {
        self.peak.load(Ordering::Relaxed)
    }

    pub fn reset(&self) {
        self.live.store(0, Ordering::Relaxed);
        self.peak.store(0, Ordering::Relaxed);
    }
}

/// Bytes occupied by `n` doubles.
#[inline]
pub fn f64_bytes(n: usize) -> usize {
    n * std::mem::size_of::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tracks_high_water_mark() {
        let t = MemTracker::new();
        t.alloc(100);
        t.alloc(50);
        t.free(100);
        t.alloc(20);
        assert_eq!(t.live(), 70);
        assert_eq!(t.peak(), 150);
    }
}
