//! Jackknife confidence intervals from leave-one-out ensembles.
//!
//! Given, for one evaluation node, the probabilities that each
//! leave-one-out model assigns to the base model's predicted class
//! (the "scalars") and the per-training-node error residuals, the
//! interval is
//!
//! ```text
//! [ q_lower(m, { scalar_i - residual_i }),
//!   q_upper(m, { scalar_i + residual_i }) ]
//! ```
//!
//! with `m` the miscoverage (one minus the coverage target) and the
//! `(n+1)`-scaled order-statistic quantiles below. Bounds are clamped
//! to `[0, 1]` because the measured scalar is a probability; the
//! node's uncertainty is the midpoint of the clamped interval.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

/// Target interval mass. The complementary miscoverage drives the
/// quantile ranks.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CoverageConfig {
    pub coverage: f64,
}

impl Default for CoverageConfig {
    fn default() -> Self {
        CoverageConfig { coverage: 0.9 }
    }
}

impl CoverageConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.coverage > 0.5 && self.coverage < 1.0) {
            return Err(Error::Domain(format!(
                "coverage must lie in (0.5, 1), got {}",
                self.coverage
            )));
        }
        Ok(())
    }

    pub fn miscoverage(&self) -> f64 {
        1.0 - self.coverage
    }
}

/// One node's jackknife interval and its midpoint uncertainty.
///
/// `lower <= upper` holds after clamping; `uncertainty` is exactly
/// `(lower + upper) / 2` of the stored bounds. `confidence` is the
/// base model's confidence for the node, carried along so individual
/// calibration error is computable from the record alone.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct UncertaintyRecord {
    pub node_id: usize,
    pub lower: f64,
    pub upper: f64,
    pub uncertainty: f64,
    pub confidence: f64,
}

fn sorted(values: &[f64]) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(Error::Domain("quantile of an empty set".into()));
    }
    if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!("non-finite quantile input {bad}")));
    }
    let mut v = values.to_vec();
    v.sort_unstable_by(f64::total_cmp);
    Ok(v)
}

fn check_miscoverage(m: f64) -> Result<()> {
    if !(m > 0.0 && m < 0.5) {
        return Err(Error::Domain(format!(
            "miscoverage must lie in (0, 0.5), got {m}"
        )));
    }
    Ok(())
}

/// The `max(1, floor(m * (n+1)))`-th smallest value.
pub fn q_lower(miscoverage: f64, values: &[f64]) -> Result<f64> {
    check_miscoverage(miscoverage)?;
    let v = sorted(values)?;
    let n = v.len();
    let k = ((miscoverage * (n + 1) as f64).floor() as usize).max(1);
    Ok(v[k - 1])
}

/// The `min(n, ceil((1-m) * (n+1)))`-th smallest value.
pub fn q_upper(miscoverage: f64, values: &[f64]) -> Result<f64> {
    check_miscoverage(miscoverage)?;
    let v = sorted(values)?;
    let n = v.len();
    let k = (((1.0 - miscoverage) * (n + 1) as f64).ceil() as usize).min(n);
    Ok(v[k - 1])
}

fn clamp01(x: f64) -> f64 {
    x.clamp(0.0, 1.0)
}

/// Build the jackknife record for one node.
///
/// `loo_scalars[i]` and `residuals[i]` refer to the same training
/// node i; `confidence` is the base model's confidence at the node.
pub fn interval(
    node_id: usize,
    confidence: f64,
    loo_scalars: &[f64],
    residuals: &[f64],
    cfg: &CoverageConfig,
) -> Result<UncertaintyRecord> {
    cfg.validate()?;
    if loo_scalars.is_empty() {
        return Err(Error::Domain("interval over an empty training set".into()));
    }
    if loo_scalars.len() != residuals.len() {
        return Err(Error::Shape(format!(
            "{} scalars but {} residuals",
            loo_scalars.len(),
            residuals.len()
        )));
    }
    let m = cfg.miscoverage();
    let shifted_down: Vec<f64> = loo_scalars
        .iter()
        .zip(residuals)
        .map(|(s, r)| s - r)
        .collect();
    let shifted_up: Vec<f64> = loo_scalars
        .iter()
        .zip(residuals)
        .map(|(s, r)| s + r)
        .collect();
    let lower = clamp01(q_lower(m, &shifted_down)?);
    let upper = clamp01(q_upper(m, &shifted_up)?);
    Ok(UncertaintyRecord {
        node_id,
        lower,
        upper,
        uncertainty: (lower + upper) / 2.0,
        confidence,
    })
}

/// Write records as `node_id,lower,upper,uncertainty,confidence`.
pub fn save_records(records: &[UncertaintyRecord], path: &Path) -> Result<()> {
    let mut out = String::from("node_id,lower,upper,uncertainty,confidence\n");
    for r in records {
        writeln!(
            out,
            "{},{},{},{},{}",
            r.node_id, r.lower, r.upper, r.uncertainty, r.confidence
        )
        .expect("string write");
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Read records written by [`save_records`].
pub fn load_records(path: &Path) -> Result<Vec<UncertaintyRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let t = line.trim();
        if t.is_empty() || (idx == 0 && t == "node_id,lower,upper,uncertainty,confidence") {
            continue;
        }
        let fields: Vec<&str> = t.split(',').collect();
        if fields.len() != 5 {
            return Err(Error::parse(path, idx + 1, "expected five fields"));
        }
        let parse = |s: &str| -> Result<f64> {
            s.trim()
                .parse()
                .map_err(|_| Error::parse(path, idx + 1, format!("bad number {s:?}")))
        };
        records.push(UncertaintyRecord {
            node_id: fields[0]
                .trim()
                .parse()
                .map_err(|_| Error::parse(path, idx + 1, format!("bad node id {:?}", fields[0])))?,
            lower: parse(fields[1])?,
            upper: parse(fields[2])?,
            uncertainty: parse(fields[3])?,
            confidence: parse(fields[4])?,
        });
    }
    Ok(records)
}
