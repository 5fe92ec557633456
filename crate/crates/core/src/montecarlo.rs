//! Deterministic parallel reductions over independent paths.
//!
//! Paths are grouped into fixed-size chunks in path-id order. Chunks run in
//! parallel, each folding its paths sequentially, and chunk results are
//! merged sequentially in chunk order. The floating-point summation order
//! therefore depends only on the path count, never on the worker count.

use rayon::prelude::*;

use crate::error::Result;

pub const CHUNK: usize = 32;

/// Folds `step(acc, path_id)` over `0..paths`.
pub fn fold_paths<A, I, S, M>(paths: usize, init: I, step: S, merge: M) -> Result<A>
where
    A: Send,
    I: Fn() -> A + Sync,
    S: Fn(&mut A, u64) -> Result<()> + Sync,
    M: Fn(&mut A, A),
{
    let chunks = paths.div_ceil(CHUNK);
    let parts: Vec<Result<A>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut acc = init();
            for id in c * CHUNK..((c + 1) * CHUNK).min(paths) {
                step(&mut acc, id as u64)?;
            }
            Ok(acc)
        })
        .collect();
    let mut total = init();
    for part in parts {
        merge(&mut total, part?);
    }
    Ok(total)
}

/// Evaluates `f` on every path id, returning results in path-id order.
pub fn map_paths<R, F>(paths: usize, f: F) -> Result<Vec<R>>
where
    R: Send,
    F: Fn(u64) -> Result<R> + Sync,
{
    (0..paths as u64).into_par_iter().map(&f).collect()
}
