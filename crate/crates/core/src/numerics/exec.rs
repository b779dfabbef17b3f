//! Row-parallel execution helper.
//!
//! With the `parallel` feature, rows of an output buffer are filled on the
//! rayon pool; without it (or after `set_parallel(false)`) the same closure
//! runs sequentially. Each row is written by exactly one invocation with a
//! fixed inner loop order, so results are bitwise identical either way.

use std::sync::atomic::{AtomicBool, Ordering};

static PARALLEL: AtomicBool = AtomicBool::new(true);

/// Outputs smaller than this many elements are always filled sequentially.
#[cfg_attr(not(feature = "parallel"), allow(dead_code))]
const MIN_PARALLEL_LEN: usize = 4096;

/// Runtime switch for the rayon path. No effect without the `parallel` feature.
pub fn set_parallel(enabled: bool) {
    PARALLEL.store(enabled, Ordering::Relaxed);
}

pub fn parallel_enabled() -> bool {
    cfg!(feature = "parallel") && PARALLEL.load(Ordering::Relaxed)
}

/// Calls `f(row_index, row)` for each `row_len`-sized chunk of `out`.
pub fn for_each_row<F>(out: &mut [f64], row_len: usize, f: F)
where
    F: Fn(usize, &mut [f64]) + Sync + Send,
{
    if row_len == 0 || out.is_empty() {
        return;
    }
    #[cfg(feature = "parallel")]
    if parallel_enabled() && out.len() >= MIN_PARALLEL_LEN {
        use rayon::prelude::*;
        out.par_chunks_mut(row_len)
            .enumerate()
            .for_each(|(i, row)| f(i, row));
        return;
    }
    out.chunks_mut(row_len)
        .enumerate()
        .for_each(|(i, row)| f(i, row));
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_row_visited_once() {
        let mut buf = vec![0.0; 10_000];
        for_each_row(&mut buf, 100, |i, row| {
            for v in row.iter_mut() {
                *v += i as f64;
            }
        });
        for (i, row) in buf.chunks(100).enumerate() {
            assert!(row.iter().all(|&v| v == i as f64));
        }
    }

    #[test]
    fn empty_rows_are_noop() {
        let mut buf: Vec<f64> = vec![];
        for_each_row(&mut buf, 0, |_, _| panic!("should not run"));
    }
}
