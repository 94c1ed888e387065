//! Execution policy for the data-parallel loops.
//!
//! With the `parallel` feature the helpers below dispatch to rayon; without
//! it, or after [`set_parallel(false)`](set_parallel), they run as plain
//! sequential loops. Both paths visit work items in a partition that does
//! not depend on the thread count, so results are bitwise identical either
//! way.

use std::sync::atomic::{AtomicBool, Ordering};

static PARALLEL: AtomicBool = AtomicBool::new(true);

/// Enables or disables the rayon path at runtime.
pub fn set_parallel(enabled: bool) {
    PARALLEL.store(enabled, Ordering::Relaxed);
}

pub fn is_parallel() -> bool {
    cfg!(feature = "parallel") && PARALLEL.load(Ordering::Relaxed)
}

/// Evaluates `f(i)` for `i in 0..n`, returning results in index order.
pub fn map_range<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if is_parallel() && n > 1 {
        use rayon::prelude::*;
        return (0..n).into_par_iter().map(f).collect();
    }
    (0..n).map(f).collect()
}

/// Maps `f` over `items`, preserving order.
pub fn map_slice<I, T, F>(items: &[I], f: F) -> Vec<T>
where
    I: Sync,
    T: Send,
    F: Fn(&I) -> T + Sync + Send,
{
    map_range(items.len(), |i| f(&items[i]))
}

/// Calls `f(chunk_index, chunk)` on consecutive `chunk_len`-sized chunks.
pub fn for_each_chunk_mut<T, F>(data: &mut [T], chunk_len: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    let chunk_len = chunk_len.max(1);
    #[cfg(feature = "parallel")]
    if is_parallel() && data.len() > chunk_len {
        use rayon::prelude::*;
        data.par_chunks_mut(chunk_len)
            .enumerate()
            .for_each(|(i, c)| f(i, c));
        return;
    }
    data.chunks_mut(chunk_len)
        .enumerate()
        .for_each(|(i, c)| f(i, c));
}

/// Splits `0..n` into fixed blocks of `block` items, computes one partial
/// result per block and folds the partials left to right. The block layout
/// is independent of the thread count, so floating-point sums are
/// reproducible.
pub fn blocked_reduce<T, F, R>(n: usize, block: usize, partial: F, mut combine: R) -> Option<T>
where
    T: Send,
    F: Fn(std::ops::Range<usize>) -> T + Sync + Send,
    R: FnMut(&mut T, T),
{
    let block = block.max(1);
    let n_blocks = n.div_ceil(block);
    let parts = map_range(n_blocks, |b| partial(b * block..((b + 1) * block).min(n)));
    let mut iter = parts.into_iter();
    let mut acc = iter.next()?;
    for p in iter {
        combine(&mut acc, p);
    }
    Some(acc)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blocked_reduce_matches_sequential_sum() {
        let xs: Vec<f64> = (0..1000).map(|i| (i as f64).sin()).collect();
        let par = blocked_reduce(xs.len(), 64, |r| xs[r].iter().sum::<f64>(), |a, b| *a += b)
            .unwrap();
        set_parallel(false);
        let seq = blocked_reduce(xs.len(), 64, |r| xs[r].iter().sum::<f64>(), |a, b| *a += b)
            .unwrap();
        set_parallel(true);
        assert_eq!(par.to_bits(), seq.to_bits());
        assert!(blocked_reduce(0, 8, |_| 0.0, |a: &mut f64, b| *a += b).is_none());
    }
}
