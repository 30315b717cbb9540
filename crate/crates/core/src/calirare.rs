//! Joint accuracy-and-calibration training: cost-sensitive cross
//! entropy blended with a jackknife-uncertainty penalty, plus the
//! temperature-scaling and label-smoothing baselines.

use std::collections::BTreeMap;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gcn::{
    run_engine, train, ForwardCache, ModelParams, NoHook, SoftTargets, TrainConfig, TrainContext,
    TrainHook, TrainOutput,
};
use crate::influence::{loo_analysis, InfluenceContext, SolverConfig};
use crate::metrics;
use crate::uncertainty::{interval, CoverageConfig, UncertaintyRecord};

/// Settings for the joint objective. `lambda` weighs the calibration
/// penalty against cross entropy; `refresh_every` controls how many
/// epochs a set of uncertainty targets stays frozen before the
/// leave-one-out pipeline recomputes it. During the first `warmup`
/// epochs the penalty term is held at zero and no targets are
/// computed; the first refresh happens on the epoch after the warmup
/// ends, once the network is past its noisiest early steps.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct CaliRareConfig {
    pub lambda: f64,
    pub refresh_every: usize,
    pub warmup: usize,
    pub train: TrainConfig,
    pub solver: SolverConfig,
    pub coverage: CoverageConfig,
}

impl Default for CaliRareConfig {
    fn default() -> Self {
        Self {
            lambda: 0.1,
            refresh_every: 10,
            warmup: 0,
            train: TrainConfig::default(),
            solver: SolverConfig::default(),
            coverage: CoverageConfig::default(),
        }
    }
}

impl CaliRareConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.lambda.is_finite() || !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Domain(format!(
                "penalty weight {} outside [0, 1]",
                self.lambda
            )));
        }
        if self.refresh_every == 0 {
            return Err(Error::Domain("refresh interval must be at least 1".into()));
        }
        self.train.validate()?;
        self.solver.validate()?;
        self.coverage.validate()
    }
}

/// The convex blend `(1 - lambda) * ce + lambda * eice`. Kept textually
/// identical to the engine's epoch objective so the two agree bitwise.
pub fn joint_loss(ce: f64, eice: f64, lambda: f64) -> f64 {
    (1.0 - lambda) * ce + lambda * eice
}

/// Mean individual calibration error over the training nodes, together
/// with the per-node records it was averaged from.
#[derive(Debug, Clone)]
pub struct RegularizerOutput {
    pub eice: f64,
    pub records: Vec<UncertaintyRecord>,
}

/// Run the leave-one-out pipeline at `params` with the training nodes
/// themselves as the evaluation set and summarize it as a mean
/// individual calibration error. Dropout plays no part here: the
/// influence machinery always works on the clean forward pass.
pub fn eice_regularizer(
    ctx: &TrainContext,
    params: &ModelParams,
    decay: f64,
    solver_cfg: &SolverConfig,
    coverage_cfg: &CoverageConfig,
) -> Result<RegularizerOutput> {
    coverage_cfg.validate()?;
    let ictx = InfluenceContext::new(ctx, params, decay)?;
    let analysis = loo_analysis(&ictx, solver_cfg)?;
    let residuals = analysis.residuals();

    let mut eval: Vec<usize> = ctx.split.train.clone();
    eval.sort_unstable();
    let mut records = Vec::with_capacity(eval.len());
    for &node in &eval {
        let scalars = analysis.scalars_for(node);
        records.push(interval(
            node,
            analysis.base.conf[node],
            &scalars,
            &residuals,
            coverage_cfg,
        )?);
    }
    let eice = metrics::eice(&records)?;
    Ok(RegularizerOutput { eice, records })
}

/// Training hook that penalizes the gap between each training node's
/// confidence and its frozen jackknife uncertainty. Targets refresh on
/// a fixed epoch schedule; between refreshes they are constants, so
/// the penalty gradient flows only through the confidence.
pub struct CaliRareHook<'a> {
    ctx: &'a TrainContext<'a>,
    cfg: &'a CaliRareConfig,
    targets: BTreeMap<usize, f64>,
    active: bool,
}

impl<'a> CaliRareHook<'a> {
    pub fn new(ctx: &'a TrainContext<'a>, cfg: &'a CaliRareConfig) -> Self {
        Self {
            ctx,
            cfg,
            targets: BTreeMap::new(),
            active: false,
        }
    }

    /// Current frozen uncertainty targets, keyed by node id.
    pub fn targets(&self) -> &BTreeMap<usize, f64> {
        &self.targets
    }
}

impl TrainHook for CaliRareHook<'_> {
    fn lambda(&self) -> f64 {
        self.cfg.lambda
    }

    fn begin_epoch(&mut self, epoch: usize, params: &ModelParams) -> Result<()> {
        if epoch <= self.cfg.warmup {
            return Ok(());
        }
        self.active = true;
        if (epoch - self.cfg.warmup - 1) % self.cfg.refresh_every != 0 {
            return Ok(());
        }
        let out = eice_regularizer(
            self.ctx,
            params,
            self.cfg.train.weight_decay,
            &self.cfg.solver,
            &self.cfg.coverage,
        )?;
        self.targets = out
            .records
            .iter()
            .map(|r| (r.node_id, r.uncertainty))
            .collect();
        Ok(())
    }

    fn penalty(&mut self, cache: &ForwardCache) -> Result<(f64, Array2<f64>)> {
        if !self.active {
            return Ok((0.0, Array2::zeros(cache.probs.raw_dim())));
        }
        let train = &self.ctx.split.train;
        let n = train.len() as f64;
        let classes = cache.probs.ncols();
        let mut grad = Array2::zeros(cache.probs.raw_dim());
        let mut total = 0.0;
        for &v in train {
            let row = cache.probs.row(v);
            let mut top = 0usize;
            for k in 1..classes {
                if row[k] > row[top] {
                    top = k;
                }
            }
            let conf = row[top];
            let target = *self.targets.get(&v).ok_or_else(|| {
                Error::Domain(format!("no uncertainty target for training node {v}"))
            })?;
            total += (target - conf).abs();
            let sign = if conf > target {
                1.0
            } else if conf < target {
                -1.0
            } else {
                0.0
            };
            let coef = sign / n;
            for k in 0..classes {
                let kron = if k == top { 1.0 } else { 0.0 };
                grad[(v, k)] = coef * conf * (kron - row[k]);
            }
        }
        Ok((total / n, grad))
    }
}

/// Train under the joint objective. A zero penalty weight delegates to
/// the plain trainer so both paths are one and the same run.
pub fn train_calirare(ctx: &TrainContext, cfg: &CaliRareConfig) -> Result<TrainOutput> {
    cfg.validate()?;
    if cfg.lambda == 0.0 {
        return train(ctx, &cfg.train);
    }
    let targets = SoftTargets::one_hot(
        ctx.graph.labels(),
        ctx.graph.class_count(),
        &ctx.class_weights,
    )?;
    let mut hook = CaliRareHook::new(ctx, cfg);
    run_engine(ctx, &cfg.train, &targets, &mut hook)
}

/// Train with label-smoothed targets instead of one-hot ones.
pub fn train_label_smooth(ctx: &TrainContext, cfg: &TrainConfig, eps: f64) -> Result<TrainOutput> {
    let targets = SoftTargets::smoothed(
        ctx.graph.labels(),
        ctx.graph.class_count(),
        &ctx.class_weights,
        eps,
    )?;
    run_engine(ctx, cfg, &targets, &mut NoHook)
}

fn log_sum_exp(row: &[f64]) -> f64 {
    let top = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    top + row.iter().map(|z| (z - top).exp()).sum::<f64>().ln()
}

/// Mean negative log likelihood of `labels` under `softmax(logits / t)`.
fn scaled_nll(logits: &Array2<f64>, labels: &[usize], t: f64) -> f64 {
    let mut total = 0.0;
    for (row, &y) in logits.rows().into_iter().zip(labels) {
        let scaled: Vec<f64> = row.iter().map(|z| z / t).collect();
        total += log_sum_exp(&scaled) - scaled[y];
    }
    total / labels.len() as f64
}

/// Fit a softmax temperature by golden-section search over [0.05, 20],
/// minimizing held-out cross entropy to 1e-4 bracket width. Endpoint
/// minima are legitimate results, not errors.
pub fn temperature_scale(logits: &Array2<f64>, labels: &[usize]) -> Result<f64> {
    if logits.nrows() == 0 {
        return Err(Error::Domain("temperature fit over an empty set".into()));
    }
    if logits.nrows() != labels.len() {
        return Err(Error::Shape(format!(
            "{} logit rows but {} labels",
            logits.nrows(),
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= logits.ncols()) {
        return Err(Error::Bounds(format!(
            "label {bad} exceeds class count {}",
            logits.ncols()
        )));
    }

    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let (mut lo, mut hi) = (0.05_f64, 20.0_f64);
    let mut a = hi - ratio * (hi - lo);
    let mut b = lo + ratio * (hi - lo);
    let mut fa = scaled_nll(logits, labels, a);
    let mut fb = scaled_nll(logits, labels, b);
    while hi - lo > 1e-4 {
        if fa < fb {
            hi = b;
            b = a;
            fb = fa;
            a = hi - ratio * (hi - lo);
            fa = scaled_nll(logits, labels, a);
        } else {
            lo = a;
            a = b;
            fa = fb;
            b = lo + ratio * (hi - lo);
            fb = scaled_nll(logits, labels, b);
        }
    }
    Ok((lo + hi) / 2.0)
}
