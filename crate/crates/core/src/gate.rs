//! Counting gate bounding the number of concurrent in-flight requests.

use std::sync::{Condvar, Mutex};

#[derive(Debug)]
pub struct InFlightGate {
    capacity: usize,
    active: Mutex<usize>,
    freed: Condvar,
}

/// Released on drop.
pub struct Permit<'a> {
    gate: &'a InFlightGate,
}

impl InFlightGate {
    pub fn new(capacity: usize) -> Self {
        Self { capacity: capacity.max(1), active: Mutex::new(0), freed: Condvar::new() }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn acquire(&self) -> Permit<'_> {
        let mut active = self.active.lock().unwrap_or_else(|e| e.into_inner());
        while *active >= self.capacity {
            active = self.freed.wait(active).unwrap_or_else(|e| e.into_inner());
        }
        *active += 1;
        Permit { gate: self }
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut active = self.gate.active.lock().unwrap_or_else(|e| e.into_inner());
        *active -= 1;
        self.gate.freed.notify_one();
    }
}
