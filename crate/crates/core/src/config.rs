//! Run configuration, read from flat `key=value` text.

use std::fmt::Write as _;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::ewma::EwmaParams;
use crate::metrics::Metric;
use crate::nm::NmPattern;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    /// Streaming single-pass EWMA criterion.
    Ewma,
    /// Per-row sort, prune the `k` smallest scores.
    TopK,
    /// N:M structured selection.
    Nm,
    /// Layer-wide score threshold.
    MagnitudeThreshold,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Ewma => "ewma",
            Mode::TopK => "topk",
            Mode::Nm => "nm",
            Mode::MagnitudeThreshold => "magnitude-threshold",
        }
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ewma" => Ok(Mode::Ewma),
            "topk" => Ok(Mode::TopK),
            "nm" => Ok(Mode::Nm),
            "magnitude-threshold" => Ok(Mode::MagnitudeThreshold),
            other => Err(Error::Config(format!("unknown mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub mode: Mode,
    pub metric: Metric,
    pub alpha: f64,
    pub beta: f64,
    pub la: f64,
    pub target_sparsity: f64,
    pub nm_n: usize,
    pub nm_m: usize,
    pub seed: u64,
    pub workers: usize,
    /// Apply `S <- S - w^2` on each EWMA prune.
    pub s_update: bool,
    /// Stream `S` updates through N:M selection instead of fixing `S = S0`.
    pub nm_streaming: bool,
    /// Explicit cut for `magnitude-threshold`; derived from `target_sparsity` when unset.
    pub threshold: Option<f64>,
    pub trace: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Ewma,
            metric: Metric::SwiftPrune,
            alpha: 0.125,
            beta: 0.125,
            la: 4.0,
            target_sparsity: 0.5,
            nm_n: 2,
            nm_m: 4,
            seed: 42,
            workers: 1,
            s_update: true,
            nm_streaming: false,
            threshold: None,
            trace: false,
        }
    }
}

/// Every key accepted by [`RunConfig::parse`], in echo order.
pub const CONFIG_KEYS: &[&str] = &[
    "mode",
    "metric",
    "alpha",
    "beta",
    "la",
    "target_sparsity",
    "nm_n",
    "nm_m",
    "seed",
    "workers",
    "s_update",
    "nm_streaming",
    "threshold",
    "trace",
];

fn parse_num<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("malformed value for `{key}`: `{value}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::Config(format!("malformed boolean for `{key}`: `{value}`"))),
    }
}

/// Parses `N:M` (e.g. `2:4`).
pub fn parse_nm(value: &str) -> Result<(usize, usize)> {
    let (n, m) = value
        .split_once(':')
        .ok_or_else(|| Error::Config(format!("N:M pattern must look like `2:4`, got `{value}`")))?;
    Ok((parse_num("nm", n.trim())?, parse_num("nm", m.trim())?))
}

impl RunConfig {
    /// Parses `key=value` lines; blank lines and `#` comments are skipped.
    /// Absent keys keep their defaults, unknown or repeated keys are errors.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut seen = std::collections::HashSet::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key=value, got `{line}`", lineno + 1))
            })?;
            let key = key.trim();
            let value = value.trim();
            if !seen.insert(key.to_string()) {
                return Err(Error::Config(format!("duplicate key `{key}`")));
            }
            cfg.set(key, value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Sets one field from its text form without validating the whole config.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "mode" => self.mode = value.parse()?,
            "metric" => self.metric = value.parse()?,
            "alpha" => self.alpha = parse_num(key, value)?,
            "beta" => self.beta = parse_num(key, value)?,
            "la" => self.la = parse_num(key, value)?,
            "target_sparsity" | "sparsity" => self.target_sparsity = parse_num(key, value)?,
            "nm" => (self.nm_n, self.nm_m) = parse_nm(value)?,
            "nm_n" => self.nm_n = parse_num(key, value)?,
            "nm_m" => self.nm_m = parse_num(key, value)?,
            "seed" => self.seed = parse_num(key, value)?,
            "workers" => self.workers = parse_num(key, value)?,
            "s_update" => self.s_update = parse_bool(key, value)?,
            "nm_streaming" => self.nm_streaming = parse_bool(key, value)?,
            "threshold" => {
                self.threshold = match value {
                    "" | "none" => None,
                    v => Some(parse_num(key, v)?),
                }
            }
            "trace" => self.trace = parse_bool(key, value)?,
            other => return Err(Error::Config(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Range(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return Err(Error::Range(format!("beta must lie in (0, 1), got {}", self.beta)));
        }
        if !self.la.is_finite() {
            return Err(Error::Range(format!("la must be finite, got {}", self.la)));
        }
        if !(0.0..=1.0).contains(&self.target_sparsity) {
            return Err(Error::Range(format!(
                "target_sparsity must lie in [0, 1], got {}",
                self.target_sparsity
            )));
        }
        if !(self.nm_n > 0 && self.nm_n < self.nm_m) {
            return Err(Error::Range(format!(
                "N:M pattern needs 0 < N < M, got {}:{}",
                self.nm_n, self.nm_m
            )));
        }
        if self.nm_m > crate::nm::MAX_GROUP {
            return Err(Error::Range(format!("group size M = {} exceeds {}", self.nm_m, crate::nm::MAX_GROUP)));
        }
        if self.workers == 0 {
            return Err(Error::Range("workers must be at least 1".into()));
        }
        if let Some(t) = self.threshold {
            if !t.is_finite() {
                return Err(Error::Range(format!("threshold must be finite, got {t}")));
            }
        }
        if self.mode == Mode::Ewma && self.metric != Metric::SwiftPrune {
            return Err(Error::Config(format!(
                "ewma mode streams contribution scores; metric `{}` is only valid for topk, nm and magnitude-threshold",
                self.metric.name()
            )));
        }
        Ok(())
    }

    pub fn ewma_params(&self) -> EwmaParams {
        EwmaParams { alpha: self.alpha, beta: self.beta, la: self.la, s_update: self.s_update }
    }

    pub fn nm_pattern(&self) -> Result<NmPattern> {
        NmPattern::new(self.nm_n, self.nm_m)
    }

    /// Effective configuration as `key=value` lines, one per [`CONFIG_KEYS`] entry.
    pub fn to_kv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "mode={}", self.mode.name());
        let _ = writeln!(out, "metric={}", self.metric.name());
        let _ = writeln!(out, "alpha={}", self.alpha);
        let _ = writeln!(out, "beta={}", self.beta);
        let _ = writeln!(out, "la={}", self.la);
        let _ = writeln!(out, "target_sparsity={}", self.target_sparsity);
        let _ = writeln!(out, "nm_n={}", self.nm_n);
        let _ = writeln!(out, "nm_m={}", self.nm_m);
        let _ = writeln!(out, "seed={}", self.seed);
        let _ = writeln!(out, "workers={}", self.workers);
        let _ = writeln!(out, "s_update={}", self.s_update);
        let _ = writeln!(out, "nm_streaming={}", self.nm_streaming);
        match self.threshold {
            Some(t) => {
                let _ = writeln!(out, "threshold={t}");
            }
            None => out.push_str("threshold=none\n"),
        }
        let _ = writeln!(out, "trace={}", self.trace);
        out
    }
}
