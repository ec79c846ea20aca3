//! Deterministic work splitting.
//!
//! Work is cut into a fixed number of contiguous blocks that depends only on
//! the problem size and the worker count of the current rayon pool. Partial
//! results are combined in block order, so reductions are reproducible for a
//! fixed worker count and sequential with one worker.

use std::ops::Range;

use rayon::prelude::*;

/// Number of workers of the rayon pool the caller runs in.
pub fn workers() -> usize {
    rayon::current_num_threads()
}

/// Splits `0..n` into at most `workers()` contiguous blocks of at least
/// `min_block` items (the last block may be shorter).
pub fn blocks(n: usize, min_block: usize) -> Vec<Range<usize>> {
    if n == 0 {
        return Vec::new();
    }
    let nb = (n / min_block.max(1)).clamp(1, workers());
    (0..nb).map(|b| (b * n / nb)..((b + 1) * n / nb)).collect()
}

/// Maps each block in parallel and returns the results in block order.
pub fn map_blocks<T, F>(n: usize, min_block: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(Range<usize>) -> T + Sync + Send,
{
    let bl = blocks(n, min_block);
    if bl.len() <= 1 {
        return bl.into_iter().map(f).collect();
    }
    bl.into_par_iter().map(f).collect()
}

/// Raw pointer that may be shared between workers writing disjoint elements.
#[derive(Clone, Copy)]
pub(crate) struct SharedMut<T>(*mut T);

unsafe impl<T: Send> Send for SharedMut<T> {}
unsafe impl<T: Send> Sync for SharedMut<T> {}

impl<T> SharedMut<T> {
    pub(crate) fn new(slice: &mut [T]) -> Self {
        Self(slice.as_mut_ptr())
    }

    /// # Safety
    /// `idx` must be in bounds of the slice this was created from, the slice
    /// must outlive every use, and no two workers may touch the same `idx`.
    #[inline]
    pub(crate) unsafe fn get(self, idx: usize) -> *mut T {
        self.0.add(idx)
    }
}
