//! Data-parallel helpers with a sequential fallback.
//!
//! With the default `parallel` feature these fan work out over rayon;
//! without it they degrade to plain iteration. Callers rely on results
//! coming back in input order, which both paths guarantee, so outputs are
//! identical regardless of feature or thread count.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Maps `f` over the slice, in parallel when available.
#[cfg(feature = "parallel")]
pub fn map_slice<T: Sync, U: Send>(items: &[T], f: impl Fn(&T) -> U + Sync + Send) -> Vec<U> {
    items.par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_slice<T, U>(items: &[T], f: impl Fn(&T) -> U) -> Vec<U> {
    items.iter().map(f).collect()
}

/// Maps `f` over mutable elements, in parallel when available.
#[cfg(feature = "parallel")]
pub fn map_slice_mut<T: Send + Sync, U: Send>(
    items: &mut [T],
    f: impl Fn(&mut T) -> U + Sync + Send,
) -> Vec<U> {
    items.par_iter_mut().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_slice_mut<T, U>(items: &mut [T], f: impl Fn(&mut T) -> U) -> Vec<U> {
    items.iter_mut().map(f).collect()
}
