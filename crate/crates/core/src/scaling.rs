//! Timing helpers for the scaling benchmarks.

use std::str::FromStr;

use crate::error::{Error, Result};
use crate::ewma::{prune_matrix, EwmaParams};
use crate::metrics::{Metric, RowContext};
use crate::select::{prune_matrix_topk, prune_matrix_topk_oracle};
use crate::synth::{synth_fixture, Family};
use crate::tensor::{Calibration, Dtype, MatrixBuffer};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BenchMode {
    /// Streaming EWMA pruning.
    Ewma,
    /// Per-row sort of contribution scores.
    TopK,
    /// Dense Hessian inverse + top-k.
    Oracle,
}

impl BenchMode {
    pub fn name(self) -> &'static str {
        match self {
            BenchMode::Ewma => "ewma",
            BenchMode::TopK => "topk",
            BenchMode::Oracle => "oracle",
        }
    }
}

impl FromStr for BenchMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ewma" => Ok(BenchMode::Ewma),
            "topk" => Ok(BenchMode::TopK),
            "oracle" => Ok(BenchMode::Oracle),
            other => Err(Error::Config(format!("unknown bench mode `{other}`"))),
        }
    }
}

/// Least-squares slope of `ln t` against `ln n`.
pub fn loglog_slope(points: &[(usize, f64)]) -> f64 {
    let logs: Vec<(f64, f64)> = points.iter().map(|&(n, t)| ((n as f64).ln(), t.max(1e-12).ln())).collect();
    let k = logs.len() as f64;
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / k;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / k;
    let sxy: f64 = logs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = logs.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

/// Synthetic Gaussian layer with `rows x n` weights.
pub fn bench_fixture(rows: usize, n: usize, seed: u64) -> Result<(MatrixBuffer, RowContext)> {
    let (w, x) = synth_fixture(rows, n, seed, Family::Gaussian, Dtype::F32)?;
    Ok((w, RowContext::from_calibration(&Calibration::from_vector(&x))?))
}

/// Median over `reps` runs of the pruning compute time recorded by the
/// pruner itself, so output allocation and packing are excluded. The median
/// is used because isolated fast runs would otherwise skew the minimum. One
/// untimed warm-up run comes first.
pub fn time_mode(mode: BenchMode, w: &MatrixBuffer, ctx: &RowContext, reps: usize) -> Result<f64> {
    let p = EwmaParams::with_la(0.5);
    let mut times = Vec::with_capacity(reps.max(1) + 1);
    for _ in 0..=reps.max(1) {
        let outcome = match mode {
            BenchMode::Ewma => prune_matrix(w, ctx, &p, 1, false)?,
            BenchMode::TopK => prune_matrix_topk(w, ctx, Metric::SwiftPrune, 0.5, 1)?,
            BenchMode::Oracle => prune_matrix_topk_oracle(w, ctx, 0.5)?,
        };
        times.push(outcome.stats.wall_time_s);
    }
    times.remove(0);
    times.sort_by(f64::total_cmp);
    let mid = times.len() / 2;
    Ok(if times.len() % 2 == 1 { times[mid] } else { 0.5 * (times[mid - 1] + times[mid]) })
}

/// `(n, seconds)` for each width in `sizes`.
pub fn scaling_series(mode: BenchMode, sizes: &[usize], rows: usize, reps: usize, seed: u64) -> Result<Vec<(usize, f64)>> {
    sizes
        .iter()
        .map(|&n| {
            let (w, ctx) = bench_fixture(rows, n, seed)?;
            Ok((n, time_mode(mode, &w, &ctx, reps)?))
        })
        .collect()
}
