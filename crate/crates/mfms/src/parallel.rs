//! Order-preserving parallel map helpers.
//!
//! With the `parallel` feature (default) these fan work out over rayon;
//! without it they degrade to plain sequential iteration. Every helper
//! preserves input order, so results are identical either way and all
//! downstream reductions stay deterministic.

#[cfg(feature = "parallel")]
pub fn map_slice<T: Sync, U: Send, F>(items: &[T], f: F) -> Vec<U>
where
    F: Fn(&T) -> U + Sync + Send,
{
    use rayon::prelude::*;
    items.par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_slice<T: Sync, U: Send, F>(items: &[T], f: F) -> Vec<U>
where
    F: Fn(&T) -> U + Sync + Send,
{
    items.iter().map(f).collect()
}

#[cfg(feature = "parallel")]
pub fn map_vec<T: Send, U: Send, F>(items: Vec<T>, f: F) -> Vec<U>
where
    F: Fn(T) -> U + Sync + Send,
{
    use rayon::prelude::*;
    items.into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_vec<T: Send, U: Send, F>(items: Vec<T>, f: F) -> Vec<U>
where
    F: Fn(T) -> U + Sync + Send,
{
    items.into_iter().map(f).collect()
}

/// Maps `f` over index ranges `[start, end)` chunked by `chunk`, in order.
pub fn map_ranges<U: Send, F>(len: usize, chunk: usize, f: F) -> Vec<U>
where
    F: Fn(std::ops::Range<usize>) -> U + Sync + Send,
{
    assert!(chunk > 0);
    let ranges: Vec<std::ops::Range<usize>> = (0..len)
        .step_by(chunk)
        .map(|s| s..(s + chunk).min(len))
        .collect();
    map_vec(ranges, f)
}
