/// One streaming step of a traced row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRecord {
    pub row: usize,
    pub i: usize,
    /// Contribution score of weight `i`.
    pub l: f64,
    /// Estimator state after the step.
    pub est: f64,
    pub dev: f64,
    pub pruned: bool,
}

/// True mean and mean absolute deviation of the finite scores in `records`.
pub fn score_summary(records: &[TraceRecord]) -> (f64, f64) {
    let finite: Vec<f64> = records.iter().map(|r| r.l).filter(|l| l.is_finite()).collect();
    if finite.is_empty() {
        return (0.0, 0.0);
    }
    let n = finite.len() as f64;
    let mean = crate::metrics::pairwise_sum(&finite) / n;
    let mad: Vec<f64> = finite.iter().map(|l| (l - mean).abs()).collect();
    (mean, crate::metrics::pairwise_sum(&mad) / n)
}
