//! Run summaries written next to pruned outputs.

use std::fmt::Write as _;

use crate::config::RunConfig;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct GuardFlags {
    /// Scores where `1 - x^2/S` fell under the denominator guard.
    pub denominator: usize,
    /// Rows where the running `S` was clamped.
    pub s_underflow_rows: usize,
    /// Trailing N:M groups left dense because `cols % M != 0`.
    pub partial_groups: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PruneStats {
    pub per_row_sparsity: Vec<f64>,
    pub pruned: usize,
    pub total: usize,
    pub global_sparsity: f64,
    pub wall_time_s: f64,
    pub guard_flags: GuardFlags,
}

impl PruneStats {
    pub(crate) fn new(cols: usize, pruned_per_row: Vec<usize>, wall_time_s: f64, guard_flags: GuardFlags) -> Self {
        let total = cols * pruned_per_row.len();
        let pruned: usize = pruned_per_row.iter().sum();
        let per_row_sparsity = pruned_per_row
            .iter()
            .map(|&p| if cols == 0 { 0.0 } else { p as f64 / cols as f64 })
            .collect();
        Self {
            per_row_sparsity,
            pruned,
            total,
            global_sparsity: if total == 0 { 0.0 } else { pruned as f64 / total as f64 },
            // Sub-resolution runs still report a positive time.
            wall_time_s: wall_time_s.max(1e-9),
            guard_flags,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PruneReport {
    pub rows: usize,
    pub cols: usize,
    pub stats: PruneStats,
    pub config_echo: RunConfig,
}

impl PruneReport {
    /// `key=value` text: the effective configuration first, then results.
    pub fn to_kv(&self) -> String {
        let mut out = self.config_echo.to_kv();
        let s = &self.stats;
        let _ = writeln!(out, "rows={}", self.rows);
        let _ = writeln!(out, "cols={}", self.cols);
        let _ = writeln!(out, "pruned={}", s.pruned);
        let _ = writeln!(out, "total={}", s.total);
        let _ = writeln!(out, "global_sparsity={}", s.global_sparsity);
        let _ = writeln!(out, "wall_time_s={}", s.wall_time_s);
        let _ = writeln!(out, "guard_denominator={}", s.guard_flags.denominator);
        let _ = writeln!(out, "guard_s_underflow_rows={}", s.guard_flags.s_underflow_rows);
        let _ = writeln!(out, "guard_partial_groups={}", s.guard_flags.partial_groups);
        let per_row: Vec<String> = s.per_row_sparsity.iter().map(|v| v.to_string()).collect();
        let _ = writeln!(out, "per_row_sparsity={}", per_row.join(","));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn global_sparsity_is_exact_ratio() {
        let s = PruneStats::new(4, vec![1, 2, 0], 0.0, GuardFlags::default());
        assert_eq!(s.pruned, 3);
        assert_eq!(s.total, 12);
        assert_eq!(s.global_sparsity, 0.25);
        assert_eq!(s.per_row_sparsity, vec![0.25, 0.5, 0.0]);
        assert!(s.wall_time_s > 0.0);
    }

    #[test]
    fn report_echoes_config_first() {
        let r = PruneReport {
            rows: 1,
            cols: 4,
            stats: PruneStats::new(4, vec![2], 0.5, GuardFlags::default()),
            config_echo: RunConfig::default(),
        };
        let text = r.to_kv();
        assert!(text.starts_with("mode=ewma\n"));
        assert!(text.contains("\nalpha=0.125\nbeta=0.125\nla=4\n"));
        assert!(text.contains("\nglobal_sparsity=0.5\n"));
        assert!(text.ends_with("per_row_sparsity=0.5\n"));
    }
}
