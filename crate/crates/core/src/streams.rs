//! Reproducible random streams and order-stable parallel reduction.
//!
//! Stream derivation: `ChaCha8Rng::seed_from_u64(seed)` followed by
//! `set_stream(index)`. ChaCha's 64-bit stream counter gives independent,
//! non-overlapping sequences for every `(seed, index)` pair, so a replicate
//! always sees the same numbers no matter which worker runs it.
//!
//! Independent sub-experiments of one run use `sub_seed(seed, tag)`.
//!
//! Two-level work (grid point `a`, chunk `b`) uses `index = (a << 32) | b`.
//! Partial results are collected in index order and merged sequentially,
//! which makes floating-point totals independent of the worker count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

pub type StreamRng = ChaCha8Rng;

/// Replicates per chunk in chunked Monte Carlo loops.
pub const CHUNK: u64 = 4096;

pub fn stream(seed: u64, index: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Root seed for an independent sub-experiment `tag` of a run seeded with `seed`.
pub fn sub_seed(seed: u64, tag: u64) -> u64 {
    seed ^ tag.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

pub fn stream_index(outer: u32, inner: u32) -> u64 {
    (u64::from(outer) << 32) | u64::from(inner)
}

/// Splits `n` replicates into fixed-size chunks, runs `work(chunk, len, rng)`
/// in parallel with stream `stream_index(outer, chunk)`, and returns the
/// partial results in chunk order.
pub fn chunked<T, F>(seed: u64, outer: u32, n: u64, work: F) -> Vec<T>
where
    T: Send,
    F: Fn(u64, u64, &mut StreamRng) -> T + Sync,
{
    let chunks = n.div_ceil(CHUNK);
    (0..chunks)
        .into_par_iter()
        .map(|c| {
            let len = CHUNK.min(n - c * CHUNK);
            let mut rng = stream(seed, stream_index(outer, c as u32));
            work(c, len, &mut rng)
        })
        .collect()
}

/// Runs `work(i, rng)` for replicates `0..n` with stream `i` each.
pub fn replicates<T, F>(seed: u64, n: u64, work: F) -> Vec<T>
where
    T: Send,
    F: Fn(u64, &mut StreamRng) -> T + Sync,
{
    (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(seed, i);
            work(i, &mut rng)
        })
        .collect()
}
