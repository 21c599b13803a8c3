use std::sync::Arc;
use std::time::Instant;

use parking_lot::{Condvar, Mutex};

/// Write-once cell that any number of threads can wait on.
#[derive(Debug)]
pub struct Completion<T> {
    slot: Mutex<Option<T>>,
    ready: Condvar,
}

impl<T: Clone> Completion<T> {
    pub fn new() -> Arc<Self> {
        Arc::new(Self {
            slot: Mutex::new(None),
            ready: Condvar::new(),
        })
    }

    pub fn completed(v: T) -> Arc<Self> {
        Arc::new(Self {
            slot: Mutex::new(Some(v)),
            ready: Condvar::new(),
        })
    }

    /// Stores `v` unless a value is already present. Returns whether this
    /// call won.
    pub fn complete(&self, v: T) -> bool {
        let mut slot = self.slot.lock();
        if slot.is_some() {
            return false;
        }
        *slot = Some(v);
        self.ready.notify_all();
        true
    }

    pub fn try_get(&self) -> Option<T> {
        self.slot.lock().clone()
    }

    pub fn is_done(&self) -> bool {
        self.slot.lock().is_some()
    }

    pub fn wait(&self) -> T {
        let mut slot = self.slot.lock();
        loop {
            if let Some(v) = slot.as_ref() {
                return v.clone();
            }
            self.ready.wait(&mut slot);
        }
    }

    pub fn wait_until(&self, deadline: Instant) -> Option<T> {
        let mut slot = self.slot.lock();
        loop {
            if let Some(v) = slot.as_ref() {
                return Some(v.clone());
            }
            if self.ready.wait_until(&mut slot, deadline).timed_out() {
                return slot.clone();
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::thread;
    use std::time::Duration;

    #[test]
    fn first_value_wins_for_every_waiter() {
        let c = Completion::<u32>::new();
        let waiters: Vec<_> = (0..8)
            .map(|_| {
                let c = c.clone();
                thread::spawn(move || c.wait())
            })
            .collect();
        let racers: Vec<_> = (0..8)
            .map(|i| {
                let c = c.clone();
                thread::spawn(move || c.complete(i))
            })
            .collect();
        let wins = racers.into_iter().map(|h| h.join().unwrap()).filter(|w| *w).count();
        assert_eq!(wins, 1);
        let v = c.try_get().unwrap();
        for w in waiters {
            assert_eq!(w.join().unwrap(), v);
        }
    }

    #[test]
    fn timeout_leaves_cell_empty() {
        let c = Completion::<u8>::new();
        assert_eq!(c.wait_until(Instant::now() + Duration::from_millis(10)), None);
        assert!(c.complete(3));
        assert_eq!(c.wait_until(Instant::now()), Some(3));
    }
}
