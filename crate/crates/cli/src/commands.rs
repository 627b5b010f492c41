use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use hfprune_core::compare::{compare as compare_layers, CompareOptions, CompareReport};
use hfprune_core::ewma::{la_for_sparsity, prune_row_indexed};
use hfprune_core::io;
use hfprune_core::nm::pack_nm;
use hfprune_core::scaling::{loglog_slope, scaling_series, BenchMode};
use hfprune_core::synth::{synth_fixture, Family};
use hfprune_core::trace::score_summary;
use hfprune_core::{Dtype, Error, MatrixBuffer, Mode, PruneReport, Result, RowContext, RunConfig};

fn load(weights: &Path, calib: &Path) -> Result<(MatrixBuffer, RowContext)> {
    let w = io::read_matrix(weights)?;
    let ctx = RowContext::from_calibration(&io::read_calibration(calib)?)?;
    if w.cols() != ctx.n() {
        return Err(Error::Dimension(format!(
            "weights have {} columns but calibration has {} channels",
            w.cols(),
            ctx.n()
        )));
    }
    Ok((w, ctx))
}

fn with_suffix(prefix: &Path, ext: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

fn summary_lines(records: &[hfprune_core::TraceRecord]) -> [(&'static str, f64); 2] {
    let (mean, mad) = score_summary(records);
    [("mean_L", mean), ("mad_L", mad)]
}

pub fn prune(weights: &Path, calib: &Path, cfg: RunConfig, out: &Path) -> Result<PruneReport> {
    let (w, ctx) = load(weights, calib)?;
    let outcome = hfprune_core::prune(&w, &ctx, &cfg)?;

    io::write_matrix(&outcome.pruned, with_suffix(out, "swpt"))?;
    io::write_mask(&outcome.mask, with_suffix(out, "mask"))?;
    if cfg.mode == Mode::Nm && w.cols().is_multiple_of(cfg.nm_m) {
        let packed = pack_nm(&outcome.pruned, &outcome.mask, cfg.nm_pattern()?)?;
        io::write_packed_nm(&packed, with_suffix(out, "swnm"))?;
    }
    if let Some(records) = &outcome.trace {
        let file = std::fs::File::create(with_suffix(out, "csv"))?;
        io::write_trace_to(std::io::BufWriter::new(file), records, &summary_lines(records))?;
    }
    let report = PruneReport { rows: w.rows(), cols: w.cols(), stats: outcome.stats, config_echo: cfg };
    std::fs::write(with_suffix(out, "report"), report.to_kv())?;
    Ok(report)
}

pub fn trace(weights: &Path, calib: &Path, cfg: &RunConfig, row: usize, out: &Path) -> Result<()> {
    if cfg.mode != Mode::Ewma {
        return Err(Error::Config(format!("trace needs mode=ewma, got {}", cfg.mode.name())));
    }
    let (w, ctx) = load(weights, calib)?;
    if row >= w.rows() {
        return Err(Error::Range(format!("row {row} out of range for {} rows", w.rows())));
    }
    let res = prune_row_indexed(row, w.row(row), &ctx, &cfg.ewma_params(), true)?;
    let records = res.trace.unwrap_or_default();
    let file = std::fs::File::create(out)?;
    io::write_trace_to(std::io::BufWriter::new(file), &records, &summary_lines(&records))
}

pub fn compare(weights: &Path, calib: &Path, a: &Path, b: &Path, opts: CompareOptions) -> Result<CompareReport> {
    let (w, ctx) = load(weights, calib)?;
    let cfg_a = io::read_config(a)?;
    let cfg_b = io::read_config(b)?;
    compare_layers(&w, &ctx, &cfg_a, &cfg_b, opts)
}

pub struct BenchPlan {
    pub sizes: Vec<usize>,
    pub oracle_sizes: Vec<usize>,
    pub rows: usize,
    pub oracle_rows: usize,
    pub reps: usize,
    pub seed: u64,
}

/// `mode,n,seconds` rows followed by one `# fit` comment per mode.
pub fn bench(plan: &BenchPlan) -> Result<String> {
    for sizes in [&plan.sizes, &plan.oracle_sizes] {
        if sizes.windows(2).any(|p| p[0] >= p[1]) {
            return Err(Error::Config("bench sizes must be strictly ascending".into()));
        }
    }
    let runs = [
        (BenchMode::Ewma, &plan.sizes, plan.rows),
        (BenchMode::TopK, &plan.sizes, plan.rows),
        (BenchMode::Oracle, &plan.oracle_sizes, plan.oracle_rows),
    ];
    let mut csv = String::from("mode,n,seconds\n");
    let mut fits = String::new();
    for (mode, sizes, rows) in runs {
        if sizes.is_empty() {
            continue;
        }
        let series = scaling_series(mode, sizes, rows, plan.reps, plan.seed)?;
        for (n, t) in &series {
            let _ = writeln!(csv, "{},{n},{t:e}", mode.name());
        }
        if series.len() >= 2 {
            let _ = writeln!(fits, "# fit mode={} exponent={:.4}", mode.name(), loglog_slope(&series));
        }
    }
    csv.push_str(&fits);
    Ok(csv)
}

/// `target,la_used,achieved` table, then `monotone=true`; errors when the
/// achieved sparsity rises with la.
pub fn calibrate(weights: &Path, calib: &Path, cfg: &RunConfig, targets: &[f64]) -> Result<String> {
    let (w, ctx) = load(weights, calib)?;
    let mut rows = Vec::with_capacity(targets.len());
    for &t in targets {
        let la = la_for_sparsity(t)?;
        let run = RunConfig { mode: Mode::Ewma, la, trace: false, ..cfg.clone() };
        let outcome = hfprune_core::prune(&w, &ctx, &run)?;
        rows.push((t, la, outcome.stats.global_sparsity));
    }
    let mut out = String::from("target,la_used,achieved\n");
    for (t, la, achieved) in &rows {
        let _ = writeln!(out, "{t},{la},{achieved}");
    }
    let mut by_la = rows.clone();
    by_la.sort_by(|a, b| a.1.total_cmp(&b.1));
    let monotone = by_la.windows(2).all(|p| p[0].1 == p[1].1 || p[1].2 <= p[0].2);
    if !monotone {
        print!("{out}");
        return Err(Error::Numerical("achieved sparsity is not decreasing in la".into()));
    }
    out.push_str("monotone=true\n");
    Ok(out)
}

pub fn synth(
    rows: usize,
    cols: usize,
    seed: u64,
    family: Family,
    dtype: Dtype,
    weights_out: &Path,
    calib_out: &Path,
) -> Result<()> {
    let (w, x) = synth_fixture(rows, cols, seed, family, dtype)?;
    io::write_matrix(&w, weights_out)?;
    io::write_vector(&x, calib_out)
}
