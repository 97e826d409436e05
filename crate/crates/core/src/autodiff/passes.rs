//! Pass instrumentation.
//!
//! Every numeric forward evaluation and every reverse sweep bumps a
//! thread-local counter. One gradient costs one forward plus one backward
//! sweep; the backward count is the number of gradient-equivalent passes.

use std::cell::Cell;
use std::ops::{Add, AddAssign};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PassCount {
    pub forward: u64,
    pub backward: u64,
}

impl PassCount {
    /// Gradient-equivalent passes: reverse sweeps, each paired with a forward.
    pub fn gradient_equivalents(&self) -> u64 {
        self.backward
    }
}

impl Add for PassCount {
    type Output = PassCount;
    fn add(self, o: PassCount) -> PassCount {
        PassCount {
            forward: self.forward + o.forward,
            backward: self.backward + o.backward,
        }
    }
}

impl AddAssign for PassCount {
    fn add_assign(&mut self, o: PassCount) {
        *self = *self + o;
    }
}

impl std::iter::Sum for PassCount {
    fn sum<I: Iterator<Item = PassCount>>(iter: I) -> PassCount {
        iter.fold(PassCount::default(), Add::add)
    }
}

thread_local! {
    static COUNTER: Cell<PassCount> = const { Cell::new(PassCount { forward: 0, backward: 0 }) };
}

/// Running total for the current thread.
pub fn current() -> PassCount {
    COUNTER.with(Cell::get)
}

/// Adds `count` to the current thread's total.
pub fn record(count: PassCount) {
    COUNTER.with(|c| c.set(c.get() + count));
}

/// Runs `f` and returns the passes it consumed, leaving the thread total
/// untouched. Used by parallel sections, which `record` the merged count.
pub fn isolated<R>(f: impl FnOnce() -> R) -> (R, PassCount) {
    let saved = COUNTER.with(|c| c.replace(PassCount::default()));
    let r = f();
    let used = COUNTER.with(|c| c.replace(saved));
    (r, used)
}

/// Runs `f` and returns the passes it consumed; the thread total includes them.
pub fn measure<R>(f: impl FnOnce() -> R) -> (R, PassCount) {
    let (r, used) = isolated(f);
    record(used);
    (r, used)
}

pub(crate) fn bump_forward() {
    record(PassCount {
        forward: 1,
        backward: 0,
    });
}

pub(crate) fn bump_backward() {
    record(PassCount {
        forward: 0,
        backward: 1,
    });
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn isolated_does_not_leak_into_parent() {
        let (_, outer) = measure(|| {
            bump_forward();
            let (_, inner) = isolated(|| {
                bump_backward();
                bump_backward();
            });
            assert_eq!(inner.backward, 2);
        });
        assert_eq!(outer, PassCount { forward: 1, backward: 0 });
    }
}
