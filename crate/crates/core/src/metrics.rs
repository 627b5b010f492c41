//! Per-weight saliency scores and the layerwise reconstruction loss.
//!
//! The row Hessian of `||w x - w' x||^2` is `2 x x^T`. It is dampened with the
//! mean of its diagonal, `H = 2 x x^T + (2S/n) I` where `S = sum x_i^2`, which
//! gives closed forms for `det(H)`, the cofactors and `(H^-1)_qq`. The
//! Hessian-free score replaces `(H^-1)_qq` by `1 - x_q^2 / S`; the two differ
//! by a factor that tends to the constant `n / (2S)` as `n` grows.

use std::str::FromStr;

use crate::error::{Error, Result};

/// Scores with `1 - x_q^2/S` at or below this are treated as unprunable.
pub const DENOMINATOR_EPS: f64 = 1e-12;

/// Saliency criterion used to rank weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Metric {
    /// `w^2 / (2 (1 - x_q^2/S))`, no Hessian.
    SwiftPrune,
    /// `|w|`.
    Magnitude,
    /// `|w| * ||X_j||_2`.
    Wanda,
    /// `w^2 / (2 (H^-1)_qq)` using the closed-form inverse diagonal.
    Exact,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::SwiftPrune => "swiftprune",
            Metric::Magnitude => "magnitude",
            Metric::Wanda => "wanda",
            Metric::Exact => "exact",
        }
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "swiftprune" => Ok(Metric::SwiftPrune),
            "magnitude" => Ok(Metric::Magnitude),
            "wanda" => Ok(Metric::Wanda),
            "exact" => Ok(Metric::Exact),
            other => Err(Error::Config(format!("unknown metric `{other}`"))),
        }
    }
}

/// Pairwise (cascade) summation.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    const BLOCK: usize = 32;
    if values.len() <= BLOCK {
        values.iter().sum()
    } else {
        let (a, b) = values.split_at(values.len() / 2);
        pairwise_sum(a) + pairwise_sum(b)
    }
}

fn pairwise_sum_sq(values: &[f64]) -> f64 {
    const BLOCK: usize = 32;
    if values.len() <= BLOCK {
        values.iter().map(|v| v * v).sum()
    } else {
        let (a, b) = values.split_at(values.len() / 2);
        pairwise_sum_sq(a) + pairwise_sum_sq(b)
    }
}

/// Calibration vector of one layer together with its squared sum.
#[derive(Debug, Clone, PartialEq)]
pub struct RowContext {
    x: Vec<f64>,
    s0: f64,
    samples: usize,
}

impl RowContext {
    pub fn new(x: Vec<f64>) -> Result<Self> {
        Self::with_samples(x, 1)
    }

    /// `samples` is the calibration batch size `x` was reduced from; it only
    /// affects the Wanda column norm.
    pub fn with_samples(x: Vec<f64>, samples: usize) -> Result<Self> {
        if x.is_empty() {
            return Err(Error::Domain("calibration vector is empty".into()));
        }
        if let Some(bad) = x.iter().find(|v| !v.is_finite()) {
            return Err(Error::Data(format!("non-finite calibration element {bad}")));
        }
        let s0 = pairwise_sum_sq(&x);
        if !s0.is_finite() || s0 <= 0.0 {
            return Err(Error::Domain(format!("calibration squared sum must be positive and finite, got {s0}")));
        }
        Ok(Self { x, s0, samples: samples.max(1) })
    }

    pub fn from_calibration(c: &crate::tensor::Calibration) -> Result<Self> {
        Self::with_samples(c.x.clone(), c.samples)
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn s0(&self) -> f64 {
        self.s0
    }

    pub fn n(&self) -> usize {
        self.x.len()
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    /// `||X_j||_2` over the original calibration samples.
    pub fn column_norm(&self, j: usize) -> f64 {
        self.x[j].abs() * (self.samples as f64).sqrt()
    }

    fn check_index(&self, q: usize) -> Result<()> {
        if q >= self.n() {
            Err(Error::Dimension(format!("index {q} out of range for n = {}", self.n())))
        } else {
            Ok(())
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContributionScore {
    pub value: f64,
    /// False when the denominator guard fired; `value` is then `+inf`.
    pub well_posed: bool,
}

/// Hessian-free contribution `L = w^2 / (2 (1 - x^2/S))`.
#[inline]
pub fn contribution(w: f64, x: f64, s: f64) -> Result<ContributionScore> {
    if s.is_nan() || s <= 0.0 {
        return Err(Error::Domain(format!("S must be positive, got {s}")));
    }
    Ok(contribution_unchecked(w, x, s))
}

#[inline(always)]
pub(crate) fn contribution_unchecked(w: f64, x: f64, s: f64) -> ContributionScore {
    let den = 1.0 - x * x / s;
    if den > DENOMINATOR_EPS {
        ContributionScore { value: 0.5 * w * w / den, well_posed: true }
    } else {
        ContributionScore { value: f64::INFINITY, well_posed: false }
    }
}

/// `(H^-1)_qq = (S/n + S - x_q^2) / ((2S/n)(S/n + S))`.
pub fn hqq_inv_closed(ctx: &RowContext, q: usize) -> Result<f64> {
    ctx.check_index(q)?;
    let s = ctx.s0;
    let n = ctx.n() as f64;
    let xq = ctx.x[q];
    let sn = s / n;
    Ok((sn + (-xq).mul_add(xq, s)) / (2.0 * sn * (sn + s)))
}

/// `det(H) = 2 (2S/n)^(n-1) (S/n + S)`.
pub fn det_closed(ctx: &RowContext) -> f64 {
    let s = ctx.s0;
    let n = ctx.n() as f64;
    2.0 * (2.0 * s / n).powi(ctx.n() as i32 - 1) * (s / n + s)
}

/// Cofactor `H*_qq = 2 (2S/n)^(n-2) (S/n + S - x_q^2)`.
pub fn cofactor_closed(ctx: &RowContext, q: usize) -> Result<f64> {
    ctx.check_index(q)?;
    let s = ctx.s0;
    let n = ctx.n() as f64;
    let xq = ctx.x[q];
    Ok(2.0 * (2.0 * s / n).powi(ctx.n() as i32 - 2) * (s / n + (-xq).mul_add(xq, s)))
}

/// OBS-style saliency `w^2 / (2 (H^-1)_qq)`.
pub fn exact_contribution(w: f64, ctx: &RowContext, q: usize) -> Result<f64> {
    Ok(0.5 * w * w / hqq_inv_closed(ctx, q)?)
}

/// `|r - 1|` where `r = (H^-1)_qq / (1 - x_q^2/S) / (n / 2S)`.
///
/// The ratio sits within about `1/n` of one, so the subtraction is carried out
/// in double-double arithmetic to keep full relative precision.
pub fn approximation_deviation(ctx: &RowContext, q: usize) -> Result<f64> {
    use dd::Dd;

    ctx.check_index(q)?;
    let s = Dd::from(ctx.s0);
    let n = Dd::from(ctx.n() as f64);
    let x2 = Dd::square(ctx.x[q]);
    let s_minus_x2 = s - x2;
    if s_minus_x2.hi().is_nan() || s_minus_x2.hi() <= 0.0 {
        return Err(Error::Domain(format!("S = {} does not exceed x_q^2 = {}", ctx.s0, x2.hi())));
    }
    let sn = s / n;
    let hqq = (sn + s_minus_x2) / (Dd::from(2.0) * sn * (sn + s));
    let approx_den = Dd::from(1.0) - x2 / s;
    let c = n / (Dd::from(2.0) * s);
    let r = hqq / approx_den / c;
    Ok((r - Dd::from(1.0)).hi().abs())
}

pub fn magnitude_score(w: f64) -> f64 {
    w.abs()
}

pub fn wanda_score(w: f64, x_col_norm: f64) -> f64 {
    w.abs() * x_col_norm
}

/// Scores a whole row with `S` fixed at `S0`.
pub fn score_row(metric: Metric, w_row: &[f64], ctx: &RowContext, out: &mut Vec<f64>) -> Result<()> {
    if w_row.len() != ctx.n() {
        return Err(Error::Dimension(format!("row has {} weights, calibration has {}", w_row.len(), ctx.n())));
    }
    out.clear();
    let s = ctx.s0;
    match metric {
        Metric::SwiftPrune => out.extend(
            w_row.iter().zip(&ctx.x).map(|(&w, &x)| contribution_unchecked(w, x, s).value),
        ),
        Metric::Magnitude => out.extend(w_row.iter().map(|&w| magnitude_score(w))),
        Metric::Wanda => out.extend(
            w_row.iter().enumerate().map(|(j, &w)| wanda_score(w, ctx.column_norm(j))),
        ),
        Metric::Exact => {
            let n = ctx.n() as f64;
            let sn = s / n;
            let den = 2.0 * sn * (sn + s);
            out.extend(w_row.iter().zip(&ctx.x).map(|(&w, &x)| {
                let hqq = (sn + (-x).mul_add(x, s)) / den;
                0.5 * w * w / hqq
            }));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossProbe {
    pub e: f64,
}

/// Per-row term `|<w - w', x>|` of the layerwise loss.
pub fn row_loss(w_row: &[f64], w_pruned: &[f64], x: &[f64]) -> Result<LossProbe> {
    if w_row.len() != w_pruned.len() || w_row.len() != x.len() {
        return Err(Error::Dimension(format!(
            "row_loss lengths differ: {} / {} / {}",
            w_row.len(),
            w_pruned.len(),
            x.len()
        )));
    }
    let dot: f64 = w_row.iter().zip(w_pruned).zip(x).map(|((a, b), x)| (a - b) * x).sum();
    Ok(LossProbe { e: dot.abs() })
}

/// Layer loss `E`: sum of [`row_loss`] over rows.
pub fn layer_loss(
    original: &crate::tensor::MatrixBuffer,
    pruned: &crate::tensor::MatrixBuffer,
    x: &[f64],
) -> Result<f64> {
    if original.rows() != pruned.rows() || original.cols() != pruned.cols() {
        return Err(Error::Dimension("layer_loss: matrix shapes differ".into()));
    }
    (0..original.rows())
        .map(|r| row_loss(original.row(r), pruned.row(r), x).map(|p| p.e))
        .sum()
}

/// Minimal double-double arithmetic (Dekker / Knuth error-free transforms).
mod dd {
    use std::ops::{Add, Div, Mul, Sub};

    #[derive(Debug, Clone, Copy)]
    pub struct Dd {
        hi: f64,
        lo: f64,
    }

    #[inline]
    fn two_sum(a: f64, b: f64) -> (f64, f64) {
        let s = a + b;
        let bb = s - a;
        (s, (a - (s - bb)) + (b - bb))
    }

    #[inline]
    fn quick_two_sum(a: f64, b: f64) -> (f64, f64) {
        let s = a + b;
        (s, b - (s - a))
    }

    #[inline]
    fn two_prod(a: f64, b: f64) -> (f64, f64) {
        let p = a * b;
        (p, a.mul_add(b, -p))
    }

    impl Dd {
        pub fn hi(self) -> f64 {
            self.hi
        }

        pub fn square(a: f64) -> Dd {
            let (hi, lo) = two_prod(a, a);
            Dd { hi, lo }
        }
    }

    impl From<f64> for Dd {
        fn from(v: f64) -> Self {
            Dd { hi: v, lo: 0.0 }
        }
    }

    impl Add for Dd {
        type Output = Dd;
        fn add(self, o: Dd) -> Dd {
            let (s, e) = two_sum(self.hi, o.hi);
            let (t, f) = two_sum(self.lo, o.lo);
            let (s, e) = quick_two_sum(s, e + t);
            let (hi, lo) = quick_two_sum(s, e + f);
            Dd { hi, lo }
        }
    }

    impl Sub for Dd {
        type Output = Dd;
        fn sub(self, o: Dd) -> Dd {
            self + Dd { hi: -o.hi, lo: -o.lo }
        }
    }

    impl Mul for Dd {
        type Output = Dd;
        fn mul(self, o: Dd) -> Dd {
            let (p, e) = two_prod(self.hi, o.hi);
            let e = e + (self.hi * o.lo + self.lo * o.hi);
            let (hi, lo) = quick_two_sum(p, e);
            Dd { hi, lo }
        }
    }

    impl Div for Dd {
        type Output = Dd;
        fn div(self, o: Dd) -> Dd {
            let q1 = self.hi / o.hi;
            let r = self - o * Dd::from(q1);
            let q2 = r.hi / o.hi;
            let r = r - o * Dd::from(q2);
            let q3 = r.hi / o.hi;
            let (hi, lo) = quick_two_sum(q1, q2);
            Dd { hi, lo } + Dd::from(q3)
        }
    }

}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ctx(x: &[f64]) -> RowContext {
        RowContext::new(x.to_vec()).unwrap()
    }

    #[test]
    fn contribution_examples() {
        assert_eq!(contribution(0.0, 0.5, 10.0).unwrap().value, 0.0);
        assert_eq!(contribution(3.0, 0.0, 10.0).unwrap().value, 4.5);
        let l = contribution(2.0, 1.0, 4.0).unwrap();
        assert!(l.well_posed);
        assert!((l.value - 8.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn contribution_rejects_non_positive_s() {
        assert!(matches!(contribution(1.0, 1.0, 0.0), Err(Error::Domain(_))));
        assert!(matches!(contribution(1.0, 1.0, -2.0), Err(Error::Domain(_))));
    }

    #[test]
    fn denominator_guard_marks_score_unprunable() {
        // Single-element row: x_q^2 == S.
        let l = contribution(1.0, 2.0, 4.0).unwrap();
        assert!(!l.well_posed);
        assert_eq!(l.value, f64::INFINITY);
    }

    #[test]
    fn hqq_closed_examples() {
        assert!((hqq_inv_closed(&ctx(&[1.0, 2.0]), 0).unwrap() - 13.0 / 75.0).abs() < 1e-15);
        assert!((hqq_inv_closed(&ctx(&[1.0, 2.0]), 1).unwrap() - 7.0 / 75.0).abs() < 1e-15);
        assert!((hqq_inv_closed(&ctx(&[1.0, 1.0]), 0).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        let c = 1.7;
        let v = hqq_inv_closed(&ctx(&[c]), 0).unwrap();
        assert!((v - 1.0 / (4.0 * c * c)).abs() < 1e-15);
        assert!(hqq_inv_closed(&ctx(&[1.0]), 1).is_err());
    }

    #[test]
    fn closed_determinant_and_cofactor_small_case() {
        // H = [[7,4],[4,13]]: det 75, cofactors 13 and 7.
        let c = ctx(&[1.0, 2.0]);
        assert!((det_closed(&c) - 75.0).abs() < 1e-12);
        assert!((cofactor_closed(&c, 0).unwrap() - 13.0).abs() < 1e-12);
        assert!((cofactor_closed(&c, 1).unwrap() - 7.0).abs() < 1e-12);
    }

    #[test]
    fn exact_contribution_examples() {
        let c = ctx(&[1.0, 2.0]);
        assert_eq!(exact_contribution(0.0, &c, 0).unwrap(), 0.0);
        assert!((exact_contribution(2.0, &c, 0).unwrap() - 150.0 / 13.0).abs() < 1e-12);
    }

    #[test]
    fn deviation_examples() {
        let c = ctx(&[0.0, 1.0, 2.0]);
        assert_eq!(approximation_deviation(&c, 0).unwrap(), 0.0);
        let c = ctx(&[1.0, 1.0, 1.0, 1.0]);
        let d = approximation_deviation(&c, 0).unwrap();
        assert!((d - 1.0 / 15.0).abs() <= 1e-12 / 15.0, "{d}");
        assert!(matches!(approximation_deviation(&ctx(&[3.0]), 0), Err(Error::Domain(_))));
    }

    #[test]
    fn baseline_scores() {
        assert_eq!(magnitude_score(-3.0), 3.0);
        assert_eq!(wanda_score(2.0, 0.0), 0.0);
        assert_eq!(wanda_score(-2.0, 1.5), 3.0);
    }

    #[test]
    fn wanda_column_norm_uses_sample_count() {
        let c = RowContext::with_samples(vec![2.0, 0.5], 4).unwrap();
        assert_eq!(c.column_norm(0), 4.0);
        assert_eq!(c.column_norm(1), 1.0);
    }

    #[test]
    fn row_loss_examples() {
        assert_eq!(row_loss(&[1.0, 2.0], &[1.0, 2.0], &[3.0, 4.0]).unwrap().e, 0.0);
        assert_eq!(row_loss(&[1.0, 2.0], &[1.0, 0.0], &[3.0, 4.0]).unwrap().e, 8.0);
        assert!(matches!(row_loss(&[1.0], &[1.0, 2.0], &[1.0, 2.0]), Err(Error::Dimension(_))));
    }

    #[test]
    fn context_rejects_zero_and_non_finite() {
        assert!(matches!(RowContext::new(vec![0.0, 0.0]), Err(Error::Domain(_))));
        assert!(matches!(RowContext::new(vec![]), Err(Error::Domain(_))));
        assert!(matches!(RowContext::new(vec![1.0, f64::NAN]), Err(Error::Data(_))));
    }

    #[test]
    fn score_row_matches_scalar_functions() {
        let c = ctx(&[0.3, -1.2, 2.0, 0.7]);
        let w = [0.5, -0.25, 1.5, 0.0];
        let mut out = Vec::new();
        score_row(Metric::SwiftPrune, &w, &c, &mut out).unwrap();
        for q in 0..4 {
            assert_eq!(out[q], contribution(w[q], c.x()[q], c.s0()).unwrap().value);
        }
        score_row(Metric::Exact, &w, &c, &mut out).unwrap();
        for q in 0..4 {
            let e = exact_contribution(w[q], &c, q).unwrap();
            assert!((out[q] - e).abs() <= 1e-15 * e.abs().max(1e-300));
        }
        score_row(Metric::Wanda, &w, &c, &mut out).unwrap();
        assert_eq!(out[2], 3.0);
        assert!(score_row(Metric::Magnitude, &w[..3], &c, &mut out).is_err());
    }

    #[test]
    fn pairwise_sum_matches_naive_on_small_input() {
        let v: Vec<f64> = (1..=100).map(|i| i as f64).collect();
        assert_eq!(pairwise_sum(&v), 5050.0);
    }

    proptest! {
        #[test]
        fn contribution_scales_quadratically(w in -10.0f64..10.0, x in -1.0f64..1.0, k in -8i32..8) {
            let s = 4.0;
            let k = 2f64.powi(k);
            let base = contribution(w, x, s).unwrap().value;
            let scaled = contribution(k * w, x, s).unwrap().value;
            prop_assert_eq!(scaled, k * k * base);
        }

        #[test]
        fn well_posed_scores_are_non_negative(w in -1e3f64..1e3, x in -5.0f64..5.0, s in 1e-3f64..100.0) {
            let l = contribution(w, x, s).unwrap();
            if l.well_posed {
                prop_assert!(l.value >= 0.0);
            }
        }

        #[test]
        fn s0_matches_recomputed_sum(x in proptest::collection::vec(0.01f64..10.0, 1..300)) {
            let c = RowContext::new(x.clone()).unwrap();
            let naive: f64 = x.iter().map(|v| v * v).sum();
            prop_assert!((c.s0() - naive).abs() <= 1e-12 * naive);
        }
    }
}
