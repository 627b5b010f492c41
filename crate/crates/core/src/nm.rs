//! N:M fine-grained structured sparsity.
//!
//! Every aligned group of `M` consecutive weights in a row keeps exactly `N`.
//! Selection inside a group is a partial selection scan: the cheaper of
//! "find the `M - N` smallest" or "find the `N` largest", each pass being a
//! linear min/max scan over the not-yet-picked members. For 2:4 that is
//! 3 + 2 = 5 comparisons per group.

use std::cmp::Ordering;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::ewma::{PruneOutcome, S_UNDERFLOW_FRACTION};
use crate::metrics::{contribution_unchecked, score_row, Metric, RowContext};
use crate::pool::for_each_row;
use crate::report::{GuardFlags, PruneStats};
use crate::select::score_order;
use crate::tensor::{Dtype, MaskMatrix, MatrixBuffer};

/// Largest supported group size.
pub const MAX_GROUP: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NmPattern {
    n_keep: usize,
    m_group: usize,
}

impl NmPattern {
    pub const TWO_FOUR: NmPattern = NmPattern { n_keep: 2, m_group: 4 };
    pub const FOUR_EIGHT: NmPattern = NmPattern { n_keep: 4, m_group: 8 };

    pub fn new(n_keep: usize, m_group: usize) -> Result<Self> {
        if !(n_keep > 0 && n_keep < m_group) {
            return Err(Error::Range(format!("N:M needs 0 < N < M, got {n_keep}:{m_group}")));
        }
        if m_group > MAX_GROUP {
            return Err(Error::Range(format!("group size {m_group} exceeds {MAX_GROUP}")));
        }
        Ok(Self { n_keep, m_group })
    }

    pub fn n_keep(self) -> usize {
        self.n_keep
    }

    pub fn m_group(self) -> usize {
        self.m_group
    }

    pub fn sparsity(self) -> f64 {
        (self.m_group - self.n_keep) as f64 / self.m_group as f64
    }

    /// Bits needed for a within-group position.
    pub fn index_bits(self) -> u8 {
        (usize::BITS - (self.m_group - 1).leading_zeros()).max(1) as u8
    }
}

impl std::fmt::Display for NmPattern {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}:{}", self.n_keep, self.m_group)
    }
}

/// Writes the keep decision for one group into `keep` and returns the number
/// of score comparisons made. Lower scores are pruned first; equal scores
/// prune the lower index first.
pub fn select_nm_group_into(scores: &[f64], pattern: NmPattern, keep: &mut [bool]) -> usize {
    let m = pattern.m_group;
    debug_assert_eq!(scores.len(), m);
    let n_prune = m - pattern.n_keep;
    let (passes, want_min) = if n_prune <= pattern.n_keep {
        (n_prune, true)
    } else {
        (pattern.n_keep, false)
    };
    let mut picked: u64 = 0;
    let mut comparisons = 0;
    for _ in 0..passes {
        let mut best = usize::MAX;
        for i in 0..m {
            if picked >> i & 1 == 1 {
                continue;
            }
            if best == usize::MAX {
                best = i;
                continue;
            }
            comparisons += 1;
            let ord = score_order(scores, i, best);
            if (want_min && ord == Ordering::Less) || (!want_min && ord == Ordering::Greater) {
                best = i;
            }
        }
        picked |= 1 << best;
    }
    for (i, k) in keep.iter_mut().enumerate().take(m) {
        let was_picked = picked >> i & 1 == 1;
        // Picked minima are pruned; picked maxima are kept.
        *k = was_picked != want_min;
    }
    comparisons
}

/// Indices kept within one group, ascending.
pub fn select_nm_group(scores: &[f64], pattern: NmPattern) -> Result<Vec<usize>> {
    if scores.len() != pattern.m_group {
        return Err(Error::Dimension(format!(
            "group has {} scores, pattern needs {}",
            scores.len(),
            pattern.m_group
        )));
    }
    let mut keep = vec![false; pattern.m_group];
    select_nm_group_into(scores, pattern, &mut keep);
    Ok(keep.iter().enumerate().filter(|(_, k)| **k).map(|(i, _)| i).collect())
}

/// True when every aligned full group of every row keeps exactly `N`.
pub fn check_nm_mask(mask: &MaskMatrix, pattern: NmPattern) -> bool {
    let m = pattern.m_group;
    (0..mask.rows()).all(|r| {
        mask.row(r)
            .chunks_exact(m)
            .all(|g| g.iter().filter(|b| **b).count() == pattern.n_keep)
    })
}

/// Structured pruning of a whole matrix.
///
/// Scores use `S = S0` unless `streaming` is set (contribution metric only),
/// in which case each pruned weight removes `w^2` from `S` before the next
/// group is scored. A trailing partial group is left dense and counted in
/// the report.
pub fn prune_matrix_nm(
    w: &MatrixBuffer,
    ctx: &RowContext,
    pattern: NmPattern,
    metric: Metric,
    streaming: bool,
    workers: usize,
) -> Result<PruneOutcome> {
    if w.cols() != ctx.n() {
        return Err(Error::Dimension(format!(
            "matrix has {} columns, calibration has {}",
            w.cols(),
            ctx.n()
        )));
    }
    let (rows, cols) = (w.rows(), w.cols());
    let m = pattern.m_group;
    let full_groups = cols / m;
    let partial = cols % m != 0;
    let streaming = streaming && metric == Metric::SwiftPrune;
    let x = ctx.x();
    let s0 = ctx.s0();

    let mut out = vec![0.0; rows * cols];
    let mut bits = vec![true; rows * cols];
    let start = Instant::now();
    let per_row = for_each_row(workers, cols, w.data(), &mut out, &mut bits, |_, wr, ow, om| {
        let mut pruned = 0;
        let mut guards = 0;
        let mut underflow = false;
        if streaming {
            let floor = S_UNDERFLOW_FRACTION * s0;
            let mut s = s0;
            let mut scores = [0.0; MAX_GROUP];
            for g in 0..full_groups {
                let span = g * m..(g + 1) * m;
                for (k, j) in span.clone().enumerate() {
                    let c = contribution_unchecked(wr[j], x[j], s);
                    guards += (!c.well_posed) as usize;
                    scores[k] = c.value;
                }
                select_nm_group_into(&scores[..m], pattern, &mut om[span.clone()]);
                for j in span {
                    if !om[j] {
                        let next = s - wr[j] * wr[j];
                        if next <= floor {
                            s = floor;
                            underflow = true;
                        } else {
                            s = next;
                        }
                    }
                }
            }
        } else {
            let mut scores = Vec::with_capacity(cols);
            score_row(metric, wr, ctx, &mut scores)?;
            if metric == Metric::SwiftPrune {
                guards = scores.iter().filter(|s| s.is_infinite()).count();
            }
            for (sg, kg) in scores.chunks_exact(m).zip(om.chunks_exact_mut(m)) {
                select_nm_group_into(sg, pattern, kg);
            }
        }
        for ((o, &v), &keep) in ow.iter_mut().zip(wr).zip(om.iter()) {
            *o = if keep { v } else { 0.0 };
            pruned += (!keep) as usize;
        }
        Ok((pruned, guards, underflow))
    })?;
    let elapsed = start.elapsed().as_secs_f64();

    let guards = GuardFlags {
        denominator: per_row.iter().map(|r| r.1).sum(),
        s_underflow_rows: per_row.iter().filter(|r| r.2).count(),
        partial_groups: if partial { rows } else { 0 },
    };
    Ok(PruneOutcome {
        pruned: MatrixBuffer::new(rows, cols, w.dtype(), out)?,
        mask: MaskMatrix::new(rows, cols, bits)?,
        stats: PruneStats::new(cols, per_row.iter().map(|r| r.0).collect(), elapsed, guards),
        trace: None,
    })
}

/// Compressed N:M matrix: kept values plus their within-group positions,
/// both laid out row-major, group by group.
#[derive(Debug, Clone, PartialEq)]
pub struct PackedNm {
    rows: usize,
    cols: usize,
    pattern: NmPattern,
    dtype: Dtype,
    values: Vec<f64>,
    indices: Vec<u8>,
}

impl PackedNm {
    pub fn new(
        rows: usize,
        cols: usize,
        pattern: NmPattern,
        dtype: Dtype,
        values: Vec<f64>,
        indices: Vec<u8>,
    ) -> Result<Self> {
        let m = pattern.m_group;
        if !cols.is_multiple_of(m) {
            return Err(Error::Structure(format!("{cols} columns are not a multiple of group size {m}")));
        }
        let kept = rows * (cols / m) * pattern.n_keep;
        if values.len() != kept || indices.len() != kept {
            return Err(Error::Structure(format!(
                "expected {kept} kept values and indices, got {} and {}",
                values.len(),
                indices.len()
            )));
        }
        for (g, group) in indices.chunks_exact(pattern.n_keep).enumerate() {
            if group.iter().any(|&i| i as usize >= m) {
                return Err(Error::Structure(format!("group {g}: position out of range in {group:?}")));
            }
            if group.windows(2).any(|p| p[0] >= p[1]) {
                return Err(Error::Structure(format!("group {g}: positions {group:?} not strictly increasing")));
            }
        }
        let values = values.into_iter().map(|v| dtype.quantize(v)).collect();
        Ok(Self { rows, cols, pattern, dtype, values, indices })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn pattern(&self) -> NmPattern {
        self.pattern
    }

    pub fn dtype(&self) -> Dtype {
        self.dtype
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn indices(&self) -> &[u8] {
        &self.indices
    }

    fn groups_per_row(&self) -> usize {
        self.cols / self.pattern.m_group
    }

    pub fn mask(&self) -> MaskMatrix {
        let mut bits = vec![false; self.rows * self.cols];
        let m = self.pattern.m_group;
        for (g, idx) in self.indices.chunks_exact(self.pattern.n_keep).enumerate() {
            for &i in idx {
                bits[g * m + i as usize] = true;
            }
        }
        MaskMatrix::new(self.rows, self.cols, bits).expect("packed dims are consistent")
    }
}

pub fn pack_nm(pruned: &MatrixBuffer, mask: &MaskMatrix, pattern: NmPattern) -> Result<PackedNm> {
    if mask.rows() != pruned.rows() || mask.cols() != pruned.cols() {
        return Err(Error::Dimension("mask and matrix shapes differ".into()));
    }
    let m = pattern.m_group;
    if !pruned.cols().is_multiple_of(m) {
        return Err(Error::Structure(format!(
            "{} columns are not a multiple of group size {m}",
            pruned.cols()
        )));
    }
    let kept = pruned.rows() * pruned.cols() / m * pattern.n_keep;
    let mut values = Vec::with_capacity(kept);
    let mut indices = Vec::with_capacity(kept);
    for (g, (vg, mg)) in pruned.data().chunks_exact(m).zip(mask.bits().chunks_exact(m)).enumerate() {
        let count = mg.iter().filter(|b| **b).count();
        if count != pattern.n_keep {
            return Err(Error::Structure(format!(
                "group {g} keeps {count} weights, pattern {pattern} needs {}",
                pattern.n_keep
            )));
        }
        for (i, (&v, &keep)) in vg.iter().zip(mg).enumerate() {
            if keep {
                values.push(v);
                indices.push(i as u8);
            }
        }
    }
    PackedNm::new(pruned.rows(), pruned.cols(), pattern, pruned.dtype(), values, indices)
}

/// Dense matrix with pruned positions set to zero.
pub fn unpack_nm(p: &PackedNm) -> MatrixBuffer {
    let m = p.pattern.m_group;
    let mut data = vec![0.0; p.rows * p.cols];
    for (g, (vals, idx)) in p
        .values
        .chunks_exact(p.pattern.n_keep)
        .zip(p.indices.chunks_exact(p.pattern.n_keep))
        .enumerate()
    {
        for (&v, &i) in vals.iter().zip(idx) {
            data[g * m + i as usize] = v;
        }
    }
    MatrixBuffer::new(p.rows, p.cols, p.dtype, data).expect("packed dims are consistent")
}

/// `unpack_nm(p) * v` computed straight from the packed form.
pub fn masked_matvec(p: &PackedNm, v: &[f64]) -> Result<Vec<f64>> {
    if v.len() != p.cols {
        return Err(Error::Dimension(format!("vector has {} entries, matrix has {} columns", v.len(), p.cols)));
    }
    let n = p.pattern.n_keep;
    let m = p.pattern.m_group;
    let per_row = p.groups_per_row() * n;
    if per_row == 0 {
        return Ok(vec![0.0; p.rows]);
    }
    Ok(p.values
        .chunks_exact(per_row)
        .zip(p.indices.chunks_exact(per_row))
        .map(|(vals, idx)| {
            vals.iter()
                .zip(idx)
                .enumerate()
                .map(|(k, (&val, &i))| val * v[(k / n) * m + i as usize])
                .sum()
        })
        .collect())
}
