use rayon::prelude::*;

use crate::error::{Error, Result};

/// Runs `f` over every row, writing into disjoint output rows.
///
/// Results are gathered in row order, so the outcome does not depend on
/// `workers`. `workers == 1` stays on the calling thread.
pub(crate) fn for_each_row<T, F>(
    workers: usize,
    cols: usize,
    input: &[f64],
    out_w: &mut [f64],
    out_mask: &mut [bool],
    f: F,
) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize, &[f64], &mut [f64], &mut [bool]) -> Result<T> + Sync + Send,
{
    if cols == 0 || input.is_empty() {
        return Ok(Vec::new());
    }
    if workers <= 1 {
        return input
            .chunks(cols)
            .zip(out_w.chunks_mut(cols))
            .zip(out_mask.chunks_mut(cols))
            .enumerate()
            .map(|(r, ((w, ow), om))| f(r, w, ow, om))
            .collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Numerical(format!("cannot start worker pool: {e}")))?;
    pool.install(|| {
        input
            .par_chunks(cols)
            .zip(out_w.par_chunks_mut(cols))
            .zip(out_mask.par_chunks_mut(cols))
            .enumerate()
            .map(|(r, ((w, ow), om))| f(r, w, ow, om))
            .collect()
    })
}
