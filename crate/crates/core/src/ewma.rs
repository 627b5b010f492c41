//! Single-pass streaming pruning.
//!
//! Each row is walked left to right. A running estimate `est` of the mean
//! contribution score and `dev` of its mean absolute deviation are kept with
//! exponential smoothing (the TCP RTT estimator recipe), and a weight is
//! pruned when its score falls below `est - la * dev`. Pruning a weight also
//! removes `w^2` from the running pool `S` used to score the next weights.
//!
//! Per step, in order:
//!
//! 1. `L = w^2 / (2 (1 - x^2 / S))`; on the first step `est = L`.
//! 2. prune iff `L < est - la * dev` (strict, using the current est/dev);
//!    on prune `S -= w^2`.
//! 3. `est = (1 - alpha) est + alpha L`.
//! 4. `dev = (1 - beta) dev + beta |est - L|`, with the est from step 3.
//!
//! Scores whose denominator guard fired are kept and do not move `est` or
//! `dev`.

use std::time::Instant;

use crate::error::{Error, Result};
use crate::metrics::{contribution_unchecked, RowContext};
use crate::pool::for_each_row;
use crate::report::{GuardFlags, PruneStats};
use crate::tensor::{MaskMatrix, MatrixBuffer};
use crate::trace::TraceRecord;

/// `S` never drops below this fraction of `S0`.
pub const S_UNDERFLOW_FRACTION: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EwmaParams {
    pub alpha: f64,
    pub beta: f64,
    pub la: f64,
    /// Apply `S -= w^2` on prune.
    pub s_update: bool,
}

impl Default for EwmaParams {
    fn default() -> Self {
        Self { alpha: 0.125, beta: 0.125, la: 4.0, s_update: true }
    }
}

impl EwmaParams {
    pub fn with_la(la: f64) -> Self {
        Self { la, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) || !(self.beta > 0.0 && self.beta < 1.0) {
            return Err(Error::Range(format!(
                "alpha and beta must lie in (0, 1), got {} and {}",
                self.alpha, self.beta
            )));
        }
        if self.la.is_nan() {
            return Err(Error::Range("la is NaN".into()));
        }
        Ok(())
    }
}

/// Per-row streaming state.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorState {
    pub s: f64,
    pub est: f64,
    pub dev: f64,
    pub started: bool,
    s_floor: f64,
    /// Set once `S` has been clamped at its floor.
    pub s_underflow: bool,
}

impl TensorState {
    pub fn new(ctx: &RowContext) -> Self {
        Self::from_s0(ctx.s0())
    }

    fn from_s0(s0: f64) -> Self {
        Self {
            s: s0,
            est: 0.0,
            dev: 0.0,
            started: false,
            s_floor: S_UNDERFLOW_FRACTION * s0,
            s_underflow: false,
        }
    }

    /// Prune threshold `est - la * dev` under the current state.
    pub fn threshold(&self, la: f64) -> f64 {
        self.est - la * self.dev
    }
}

pub fn init_state(ctx: &RowContext) -> TensorState {
    TensorState::new(ctx)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    Keep,
    Prune,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Step {
    pub decision: Decision,
    pub score: f64,
    /// False when the denominator guard fired.
    pub well_posed: bool,
}

/// Advances `state` by one weight.
#[inline]
pub fn ewma_step(state: &mut TensorState, w: f64, x: f64, p: &EwmaParams) -> Result<Step> {
    let score = contribution_unchecked(w, x, state.s);
    let l = score.value;
    if !score.well_posed {
        return Ok(Step { decision: Decision::Keep, score: l, well_posed: false });
    }
    if !l.is_finite() {
        return Err(Error::Numerical(format!("contribution overflowed for w = {w}, x = {x}")));
    }
    if !state.started {
        state.est = l;
        state.started = true;
    }
    let prune = l < state.est - p.la * state.dev;
    if prune && p.s_update {
        let next = state.s - w * w;
        if next <= state.s_floor {
            state.s = state.s_floor;
            state.s_underflow = true;
        } else {
            state.s = next;
        }
    }
    state.est = (1.0 - p.alpha) * state.est + p.alpha * l;
    state.dev = (1.0 - p.beta) * state.dev + p.beta * (state.est - l).abs();
    let decision = if prune { Decision::Prune } else { Decision::Keep };
    Ok(Step { decision, score: l, well_posed: true })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RowResult {
    pub kept_weights: Vec<f64>,
    pub mask_row: Vec<bool>,
    pub pruned_count: usize,
    pub trace: Option<Vec<TraceRecord>>,
    pub denominator_guards: usize,
    pub s_underflow: bool,
}

#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct RowStats {
    pub pruned: usize,
    pub denominator_guards: usize,
    pub s_underflow: bool,
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn prune_row_into(
    row: usize,
    w_row: &[f64],
    x: &[f64],
    s0: f64,
    p: &EwmaParams,
    out_w: &mut [f64],
    out_mask: &mut [bool],
    mut trace: Option<&mut Vec<TraceRecord>>,
) -> Result<RowStats> {
    let mut state = TensorState::from_s0(s0);
    let mut stats = RowStats::default();
    for (i, ((&w, &xi), (ow, om))) in w_row
        .iter()
        .zip(x)
        .zip(out_w.iter_mut().zip(out_mask.iter_mut()))
        .enumerate()
    {
        let step = ewma_step(&mut state, w, xi, p)
            .map_err(|e| Error::Numerical(format!("row {row}, element {i}: {e}")))?;
        let pruned = step.decision == Decision::Prune;
        *ow = if pruned { 0.0 } else { w };
        *om = !pruned;
        stats.pruned += pruned as usize;
        stats.denominator_guards += (!step.well_posed) as usize;
        if let Some(t) = trace.as_deref_mut() {
            t.push(TraceRecord {
                row,
                i,
                l: step.score,
                est: state.est,
                dev: state.dev,
                pruned,
            });
        }
    }
    stats.s_underflow = state.s_underflow;
    Ok(stats)
}

/// Streams one row through [`ewma_step`].
pub fn prune_row(w_row: &[f64], ctx: &RowContext, p: &EwmaParams, trace: bool) -> Result<RowResult> {
    prune_row_indexed(0, w_row, ctx, p, trace)
}

/// As [`prune_row`], stamping trace records with `row`.
pub fn prune_row_indexed(
    row: usize,
    w_row: &[f64],
    ctx: &RowContext,
    p: &EwmaParams,
    trace: bool,
) -> Result<RowResult> {
    if w_row.len() != ctx.n() {
        return Err(Error::Dimension(format!(
            "row has {} weights, calibration has {}",
            w_row.len(),
            ctx.n()
        )));
    }
    p.validate()?;
    let mut kept = vec![0.0; w_row.len()];
    let mut mask = vec![true; w_row.len()];
    let mut records = trace.then(|| Vec::with_capacity(w_row.len()));
    let stats = prune_row_into(row, w_row, ctx.x(), ctx.s0(), p, &mut kept, &mut mask, records.as_mut())?;
    Ok(RowResult {
        kept_weights: kept,
        mask_row: mask,
        pruned_count: stats.pruned,
        trace: records,
        denominator_guards: stats.denominator_guards,
        s_underflow: stats.s_underflow,
    })
}

/// Anchor points `(target sparsity, la)`.
pub const LA_ANCHORS: [(f64, f64); 5] = [(0.5, 0.5), (0.6, 0.2), (0.7, -0.2), (0.8, -0.9), (0.9, -1.5)];

/// Threshold multiplier for a target sparsity in `[0.5, 0.9]`, piecewise
/// linear between the anchors.
pub fn la_for_sparsity(target: f64) -> Result<f64> {
    let (lo, hi) = (LA_ANCHORS[0].0, LA_ANCHORS[LA_ANCHORS.len() - 1].0);
    if !(lo..=hi).contains(&target) {
        return Err(Error::Range(format!(
            "no la anchor for target sparsity {target}; supported span is [{lo}, {hi}], set la manually"
        )));
    }
    for pair in LA_ANCHORS.windows(2) {
        let ((t0, l0), (t1, l1)) = (pair[0], pair[1]);
        if target <= t1 {
            if target == t0 {
                return Ok(l0);
            }
            if target == t1 {
                return Ok(l1);
            }
            return Ok(l0 + (target - t0) / (t1 - t0) * (l1 - l0));
        }
    }
    unreachable!("target within anchor span")
}

#[derive(Debug, Clone)]
pub struct PruneOutcome {
    pub pruned: MatrixBuffer,
    pub mask: MaskMatrix,
    pub stats: PruneStats,
    /// Trace of every row in row order, when requested.
    pub trace: Option<Vec<TraceRecord>>,
}

/// Prunes every row independently; output is identical for any `workers`.
pub fn prune_matrix(
    w: &MatrixBuffer,
    ctx: &RowContext,
    p: &EwmaParams,
    workers: usize,
    trace: bool,
) -> Result<PruneOutcome> {
    if w.cols() != ctx.n() {
        return Err(Error::Dimension(format!(
            "matrix has {} columns, calibration has {}",
            w.cols(),
            ctx.n()
        )));
    }
    p.validate()?;
    let (rows, cols) = (w.rows(), w.cols());
    let mut out = vec![0.0; rows * cols];
    let mut bits = vec![true; rows * cols];
    let x = ctx.x();
    let s0 = ctx.s0();

    let start = Instant::now();
    let per_row = for_each_row(workers, cols, w.data(), &mut out, &mut bits, |r, wr, ow, om| {
        let mut records = trace.then(|| Vec::with_capacity(cols));
        let stats = prune_row_into(r, wr, x, s0, p, ow, om, records.as_mut())?;
        Ok((stats, records))
    })?;
    let elapsed = start.elapsed().as_secs_f64();

    let mut guards = GuardFlags::default();
    let mut pruned_per_row = Vec::with_capacity(rows);
    let mut all_records = trace.then(|| Vec::with_capacity(rows * cols));
    for (stats, records) in per_row {
        pruned_per_row.push(stats.pruned);
        guards.denominator += stats.denominator_guards;
        guards.s_underflow_rows += stats.s_underflow as usize;
        if let (Some(all), Some(rec)) = (all_records.as_mut(), records) {
            all.extend(rec);
        }
    }
    let pruned = MatrixBuffer::new(rows, cols, w.dtype(), out)?;
    let mask = MaskMatrix::new(rows, cols, bits)?;
    Ok(PruneOutcome {
        pruned,
        mask,
        stats: PruneStats::new(cols, pruned_per_row, elapsed, guards),
        trace: all_records,
    })
}
