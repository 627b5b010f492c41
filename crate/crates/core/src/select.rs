//! Sort-based selection baselines.

use std::cmp::Ordering;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::ewma::PruneOutcome;
use crate::metrics::{score_row, Metric, RowContext};
use crate::oracle;
use crate::pool::for_each_row;
use crate::report::{GuardFlags, PruneStats};
use crate::tensor::{MaskMatrix, MatrixBuffer};

/// Total order used for every selection: lower score first, then lower index.
#[inline]
pub fn score_order(scores: &[f64], a: usize, b: usize) -> Ordering {
    scores[a].total_cmp(&scores[b]).then(a.cmp(&b))
}

/// Number of weights pruned per row for a target sparsity.
pub fn prune_count(target: f64, cols: usize) -> usize {
    ((target * cols as f64).round() as usize).min(cols)
}

/// Marks the `k` smallest scores as pruned (`false`) by a full sort.
pub fn topk_mask_row(scores: &[f64], k: usize, order: &mut Vec<usize>, mask: &mut [bool]) {
    order.clear();
    order.extend(0..scores.len());
    order.sort_unstable_by(|&a, &b| score_order(scores, a, b));
    mask.iter_mut().for_each(|m| *m = true);
    for &i in &order[..k.min(scores.len())] {
        mask[i] = false;
    }
}

fn check_shape(w: &MatrixBuffer, ctx: &RowContext) -> Result<()> {
    if w.cols() != ctx.n() {
        return Err(Error::Dimension(format!(
            "matrix has {} columns, calibration has {}",
            w.cols(),
            ctx.n()
        )));
    }
    Ok(())
}

fn check_target(target: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&target) {
        return Err(Error::Range(format!("target sparsity must lie in [0, 1], got {target}")));
    }
    Ok(())
}

fn finish(
    w: &MatrixBuffer,
    out: Vec<f64>,
    bits: Vec<bool>,
    pruned_per_row: Vec<usize>,
    elapsed: f64,
    guards: GuardFlags,
) -> Result<PruneOutcome> {
    Ok(PruneOutcome {
        pruned: MatrixBuffer::new(w.rows(), w.cols(), w.dtype(), out)?,
        mask: MaskMatrix::new(w.rows(), w.cols(), bits)?,
        stats: PruneStats::new(w.cols(), pruned_per_row, elapsed, guards),
        trace: None,
    })
}

/// Per-row top-k: prunes `round(target * cols)` lowest-scoring weights per
/// row, scoring with `S` fixed at `S0`.
pub fn prune_matrix_topk(
    w: &MatrixBuffer,
    ctx: &RowContext,
    metric: Metric,
    target: f64,
    workers: usize,
) -> Result<PruneOutcome> {
    check_shape(w, ctx)?;
    check_target(target)?;
    let (rows, cols) = (w.rows(), w.cols());
    let k = prune_count(target, cols);
    let mut out = vec![0.0; rows * cols];
    let mut bits = vec![true; rows * cols];
    let start = Instant::now();
    let per_row = for_each_row(workers, cols, w.data(), &mut out, &mut bits, |_, wr, ow, om| {
        let mut scores = Vec::with_capacity(cols);
        score_row(metric, wr, ctx, &mut scores)?;
        let mut order = Vec::with_capacity(cols);
        topk_mask_row(&scores, k, &mut order, om);
        for ((o, &v), &keep) in ow.iter_mut().zip(wr).zip(om.iter()) {
            *o = if keep { v } else { 0.0 };
        }
        let guards = if metric == Metric::SwiftPrune {
            scores.iter().filter(|s| s.is_infinite()).count()
        } else {
            0
        };
        Ok((k, guards))
    })?;
    let elapsed = start.elapsed().as_secs_f64();
    let guards = GuardFlags {
        denominator: per_row.iter().map(|(_, g)| g).sum(),
        ..GuardFlags::default()
    };
    finish(w, out, bits, per_row.into_iter().map(|(k, _)| k).collect(), elapsed, guards)
}

/// Top-k with exact OBS scores taken from a dense Hessian inverse.
///
/// All rows share the calibration vector, so one inversion serves the whole
/// matrix. Cost is dominated by the `O(n^3)` inverse.
pub fn prune_matrix_topk_oracle(w: &MatrixBuffer, ctx: &RowContext, target: f64) -> Result<PruneOutcome> {
    check_shape(w, ctx)?;
    check_target(target)?;
    let (rows, cols) = (w.rows(), w.cols());
    let k = prune_count(target, cols);
    let start = Instant::now();
    let hinv = oracle::hqq_inv_brute_all_capped(ctx, usize::MAX)?;
    let mut out = vec![0.0; rows * cols];
    let mut bits = vec![true; rows * cols];
    let mut scores = Vec::with_capacity(cols);
    let mut order = Vec::with_capacity(cols);
    for r in 0..rows {
        let wr = w.row(r);
        scores.clear();
        scores.extend(wr.iter().zip(&hinv).map(|(&v, &h)| 0.5 * v * v / h));
        let om = &mut bits[r * cols..(r + 1) * cols];
        topk_mask_row(&scores, k, &mut order, om);
        for (c, (&v, &keep)) in wr.iter().zip(om.iter()).enumerate() {
            out[r * cols + c] = if keep { v } else { 0.0 };
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    finish(w, out, bits, vec![k; rows], elapsed, GuardFlags::default())
}

/// Layer-wide threshold. Weights scoring strictly below `threshold` are
/// pruned; without an explicit threshold the `round(target * total)`
/// lowest-scoring weights of the whole matrix are pruned.
pub fn prune_matrix_threshold(
    w: &MatrixBuffer,
    ctx: &RowContext,
    metric: Metric,
    target: f64,
    threshold: Option<f64>,
) -> Result<PruneOutcome> {
    check_shape(w, ctx)?;
    check_target(target)?;
    let (rows, cols) = (w.rows(), w.cols());
    let start = Instant::now();
    let mut scores = Vec::with_capacity(rows * cols);
    let mut row_scores = Vec::with_capacity(cols);
    for r in 0..rows {
        score_row(metric, w.row(r), ctx, &mut row_scores)?;
        scores.extend_from_slice(&row_scores);
    }
    let mut bits = vec![true; rows * cols];
    match threshold {
        Some(t) => bits.iter_mut().zip(&scores).for_each(|(b, &s)| *b = s >= t || s.is_nan()),
        None => {
            let k = prune_count(target, rows * cols);
            let mut order = Vec::with_capacity(scores.len());
            topk_mask_row(&scores, k, &mut order, &mut bits);
        }
    }
    let out: Vec<f64> = w.data().iter().zip(&bits).map(|(&v, &keep)| if keep { v } else { 0.0 }).collect();
    let pruned_per_row = (0..rows)
        .map(|r| bits[r * cols..(r + 1) * cols].iter().filter(|b| !**b).count())
        .collect();
    let elapsed = start.elapsed().as_secs_f64();
    let guards = GuardFlags {
        denominator: if metric == Metric::SwiftPrune { scores.iter().filter(|s| s.is_infinite()).count() } else { 0 },
        ..GuardFlags::default()
    };
    finish(w, out, bits, pruned_per_row, elapsed, guards)
}
