//! Agreement between two pruning configurations on the same layer.

use std::cmp::Ordering;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{Mode, RunConfig};
use crate::error::{Error, Result};
use crate::metrics::{layer_loss, score_row, Metric, RowContext};
use crate::tensor::MatrixBuffer;

/// Rows longer than this have their tau computed on a position sample.
pub const TAU_EXACT_MAX: usize = 4096;

fn pairs_tied(sorted: &[f64]) -> u64 {
    let mut total = 0u64;
    let mut run = 1u64;
    for w in sorted.windows(2) {
        if w[0].total_cmp(&w[1]) == Ordering::Equal {
            run += 1;
        } else {
            total += run * (run - 1) / 2;
            run = 1;
        }
    }
    total + run * (run - 1) / 2
}

/// Merge sort that returns the number of inversions.
fn sort_count_swaps(v: &mut [f64], buf: &mut [f64]) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut swaps = sort_count_swaps(&mut v[..mid], &mut buf[..mid]);
    swaps += sort_count_swaps(&mut v[mid..], &mut buf[mid..]);
    let (mut i, mut j, mut k) = (0, mid, 0);
    while i < mid && j < n {
        if v[j].total_cmp(&v[i]) == Ordering::Less {
            buf[k] = v[j];
            swaps += (mid - i) as u64;
            j += 1;
        } else {
            buf[k] = v[i];
            i += 1;
        }
        k += 1;
    }
    buf[k..k + mid - i].copy_from_slice(&v[i..mid]);
    let k = k + mid - i;
    buf[k..k + n - j].copy_from_slice(&v[j..n]);
    v.copy_from_slice(&buf[..n]);
    swaps
}

/// Kendall tau-b in `O(n log n)` (Knight's algorithm).
///
/// Two fully tied sequences count as perfect agreement; a fully tied
/// sequence against a non-tied one gives 0.
pub fn kendall_tau(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Dimension(format!("tau inputs differ in length: {} vs {}", a.len(), b.len())));
    }
    let n = a.len() as u64;
    if n < 2 {
        return Ok(1.0);
    }
    let mut pairs: Vec<(f64, f64)> = a.iter().copied().zip(b.iter().copied()).collect();
    pairs.sort_unstable_by(|p, q| p.0.total_cmp(&q.0).then(p.1.total_cmp(&q.1)));

    let total = n * (n - 1) / 2;
    let xs: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let tied_a = pairs_tied(&xs);
    let mut tied_both = 0u64;
    let mut run = 1u64;
    for w in pairs.windows(2) {
        if w[0].0.total_cmp(&w[1].0) == Ordering::Equal && w[0].1.total_cmp(&w[1].1) == Ordering::Equal {
            run += 1;
        } else {
            tied_both += run * (run - 1) / 2;
            run = 1;
        }
    }
    tied_both += run * (run - 1) / 2;

    let mut ys: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let mut buf = vec![0.0; ys.len()];
    let swaps = sort_count_swaps(&mut ys, &mut buf);
    let tied_b = pairs_tied(&ys);

    let denom_a = total - tied_a;
    let denom_b = total - tied_b;
    if denom_a == 0 || denom_b == 0 {
        return Ok(if denom_a == denom_b { 1.0 } else { 0.0 });
    }
    let concordant_minus_discordant =
        total as f64 - tied_a as f64 - tied_b as f64 + tied_both as f64 - 2.0 * swaps as f64;
    Ok(concordant_minus_discordant / ((denom_a as f64) * (denom_b as f64)).sqrt())
}

/// Scores a configuration ranks by, with `S = S0`.
pub fn method_metric(cfg: &RunConfig) -> Metric {
    match cfg.mode {
        Mode::Ewma => Metric::SwiftPrune,
        _ => cfg.metric,
    }
}

pub fn method_label(cfg: &RunConfig) -> String {
    match cfg.mode {
        Mode::Nm => format!("nm({}:{})/{}", cfg.nm_n, cfg.nm_m, cfg.metric.name()),
        Mode::Ewma => format!("ewma(la={})/{}", cfg.la, Metric::SwiftPrune.name()),
        m => format!("{}/{}", m.name(), cfg.metric.name()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CompareOptions {
    /// Rows used for the rank correlation.
    pub sample_rows: usize,
    pub seed: u64,
}

impl Default for CompareOptions {
    fn default() -> Self {
        Self { sample_rows: 32, seed: 42 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareReport {
    pub methods: (String, String),
    pub mask_overlap: f64,
    /// Mean Kendall tau over the sampled rows.
    pub rank_correlation: f64,
    pub loss_a: f64,
    pub loss_b: f64,
    pub loss_delta: f64,
    pub tau_rows: Vec<usize>,
    /// Positions per row entering tau (the full row when not sampled).
    pub tau_positions: usize,
    pub seed: u64,
}

impl CompareReport {
    pub fn to_kv(&self) -> String {
        let rows: Vec<String> = self.tau_rows.iter().map(|r| r.to_string()).collect();
        format!(
            "method_a={}\nmethod_b={}\nmask_overlap={}\nrank_correlation={}\nloss_a={}\nloss_b={}\nloss_delta={}\ntau_rows={}\ntau_positions={}\nseed={}\n",
            self.methods.0,
            self.methods.1,
            self.mask_overlap,
            self.rank_correlation,
            self.loss_a,
            self.loss_b,
            self.loss_delta,
            rows.join(","),
            self.tau_positions,
            self.seed,
        )
    }
}

pub fn compare(
    w: &MatrixBuffer,
    ctx: &RowContext,
    a: &RunConfig,
    b: &RunConfig,
    opts: CompareOptions,
) -> Result<CompareReport> {
    let out_a = crate::prune(w, ctx, a)?;
    let out_b = crate::prune(w, ctx, b)?;
    let mask_overlap = out_a.mask.overlap(&out_b.mask)?;
    let loss_a = layer_loss(w, &out_a.pruned, ctx.x())?;
    let loss_b = layer_loss(w, &out_b.pruned, ctx.x())?;

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut rows: Vec<usize> = (0..w.rows()).collect();
    rows.shuffle(&mut rng);
    rows.truncate(opts.sample_rows.max(1).min(w.rows()));
    rows.sort_unstable();

    let cols = w.cols();
    let positions: Option<Vec<usize>> = (cols > TAU_EXACT_MAX).then(|| {
        let mut p: Vec<usize> = (0..cols).collect();
        p.shuffle(&mut rng);
        p.truncate(TAU_EXACT_MAX);
        p.sort_unstable();
        p
    });

    let (ma, mb) = (method_metric(a), method_metric(b));
    let (mut sa, mut sb) = (Vec::new(), Vec::new());
    let mut tau_sum = 0.0;
    for &r in &rows {
        score_row(ma, w.row(r), ctx, &mut sa)?;
        score_row(mb, w.row(r), ctx, &mut sb)?;
        tau_sum += match &positions {
            Some(p) => {
                let pa: Vec<f64> = p.iter().map(|&j| sa[j]).collect();
                let pb: Vec<f64> = p.iter().map(|&j| sb[j]).collect();
                kendall_tau(&pa, &pb)?
            }
            None => kendall_tau(&sa, &sb)?,
        };
    }
    let rank_correlation = if rows.is_empty() { 1.0 } else { tau_sum / rows.len() as f64 };

    Ok(CompareReport {
        methods: (method_label(a), method_label(b)),
        mask_overlap,
        rank_correlation,
        loss_a,
        loss_b,
        loss_delta: loss_a - loss_b,
        tau_rows: rows,
        tau_positions: positions.as_ref().map_or(cols, Vec::len),
        seed: opts.seed,
    })
}
