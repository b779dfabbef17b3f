//! Instrumented multiply-accumulate counter.
//!
//! Kernels add their analytic MAC count on the calling thread before doing
//! the work, so the tally is exact even when the rows run on the rayon pool.

use std::cell::Cell;

thread_local! {
    static MACS: Cell<u64> = const { Cell::new(0) };
}

pub fn record_macs(n: u64) {
    MACS.with(|c| c.set(c.get() + n));
}

/// Runs `f` and returns its result with the number of MACs it recorded.
/// Nested calls compose: the outer scope still sees the inner MACs.
pub fn measure_macs<R>(f: impl FnOnce() -> R) -> (R, u64) {
    let saved = MACS.with(|c| c.replace(0));
    let out = f();
    let inner = MACS.with(|c| c.get());
    MACS.with(|c| c.set(saved + inner));
    (out, inner)
}
