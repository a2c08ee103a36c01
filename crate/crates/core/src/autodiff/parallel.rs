//! Optional data parallelism over independent output planes.
//!
//! Every kernel is written as "compute one output plane"; planes never share
//! accumulators, so the parallel path produces bit-identical results to the
//! sequential reference path. `MININET_THREADS` caps the pool size, and `0`
//! (or an unset variable) selects the sequential reference mode.

use std::sync::OnceLock;

use rayon::prelude::*;

static POOL: OnceLock<Option<rayon::ThreadPool>> = OnceLock::new();

pub const THREADS_ENV: &str = "MININET_THREADS";

fn pool() -> Option<&'static rayon::ThreadPool> {
    POOL.get_or_init(|| {
        let threads = std::env::var(THREADS_ENV)
            .ok()
            .and_then(|v| v.trim().parse::<usize>().ok())
            .unwrap_or(0);
        if threads <= 1 {
            return None;
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .ok()
    })
    .as_ref()
}

/// Worker count in effect; `1` means reference mode.
pub fn threads() -> usize {
    pool().map_or(1, |p| p.current_num_threads())
}

/// Runs `f(plane_index, plane)` over consecutive `plane_len` chunks of `out`.
pub(crate) fn for_each_plane<F>(out: &mut [f32], plane_len: usize, f: F)
where
    F: Fn(usize, &mut [f32]) + Send + Sync,
{
    if plane_len == 0 {
        return;
    }
    match pool() {
        Some(pool) if out.len() > plane_len => pool.install(|| {
            out.par_chunks_mut(plane_len)
                .enumerate()
                .for_each(|(i, plane)| f(i, plane))
        }),
        _ => out
            .chunks_mut(plane_len)
            .enumerate()
            .for_each(|(i, plane)| f(i, plane)),
    }
}

/// Maps `f` over `items`, keeping input order in the result.
pub(crate) fn map<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Send + Sync,
{
    match pool() {
        Some(pool) if items.len() > 1 => pool.install(|| items.par_iter().map(&f).collect()),
        _ => items.iter().map(f).collect(),
    }
}
