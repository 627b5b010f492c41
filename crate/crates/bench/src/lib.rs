//! Shared fixtures for the criterion benchmarks.

use hfprune_core::scaling::bench_fixture;
use hfprune_core::{MatrixBuffer, RowContext};

/// Gaussian layer used by every kernel benchmark; fixed seed so runs compare.
pub fn layer(rows: usize, cols: usize) -> (MatrixBuffer, RowContext) {
    bench_fixture(rows, cols, 42).expect("synthetic fixture")
}
