//! Hessian-free post-training weight pruning.
//!
//! Scores each weight of a linear layer by its estimated contribution to the
//! layerwise reconstruction loss without forming the Hessian, then selects
//! weights to prune with a single-pass EWMA threshold, a per-row sort, a
//! layer-wide threshold, or N:M structured groups. Exact-Hessian oracles and
//! magnitude / Wanda baselines sit alongside for comparison.

pub mod compare;
pub mod config;
pub mod error;
pub mod ewma;
pub mod io;
pub mod metrics;
pub mod nm;
pub mod oracle;
mod pool;
pub mod report;
pub mod scaling;
pub mod select;
pub mod synth;
pub mod tensor;
pub mod trace;

pub use config::{Mode, RunConfig};
pub use error::{Error, Result};
pub use ewma::{EwmaParams, PruneOutcome, TensorState};
pub use metrics::{Metric, RowContext};
pub use nm::{NmPattern, PackedNm};
pub use report::{GuardFlags, PruneReport, PruneStats};
pub use tensor::{Calibration, Dtype, MaskMatrix, MatrixBuffer, VectorBuffer};
pub use trace::TraceRecord;

/// Prunes `w` according to `cfg.mode`.
pub fn prune(w: &MatrixBuffer, ctx: &RowContext, cfg: &RunConfig) -> Result<PruneOutcome> {
    cfg.validate()?;
    match cfg.mode {
        Mode::Ewma => ewma::prune_matrix(w, ctx, &cfg.ewma_params(), cfg.workers, cfg.trace),
        Mode::TopK => select::prune_matrix_topk(w, ctx, cfg.metric, cfg.target_sparsity, cfg.workers),
        Mode::Nm => nm::prune_matrix_nm(w, ctx, cfg.nm_pattern()?, cfg.metric, cfg.nm_streaming, cfg.workers),
        Mode::MagnitudeThreshold => {
            select::prune_matrix_threshold(w, ctx, cfg.metric, cfg.target_sparsity, cfg.threshold)
        }
    }
}
