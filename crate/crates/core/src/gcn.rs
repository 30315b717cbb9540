//! Two-layer graph convolutional network with cost-sensitive training.
//!
//! The model is `logits = A' * relu(A' * X * W1) * W2` where `A'` is the
//! symmetrically normalized adjacency with self-loops. Training
//! minimizes a class-weighted cross entropy (plus an L2 penalty on the
//! weights) with Adam, inverted dropout on the hidden layer, best-epoch
//! checkpointing on validation cost, and two stopping rules: patience
//! on validation cost and a plateau rule on the training objective.
//!
//! The engine accepts a [`TrainHook`] so callers can blend an extra
//! penalty into the objective through the logits; [`train`] runs it
//! with the no-op hook.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array2, Axis};
use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{DatasetSplit, Graph, NormalizedAdjacency};
use crate::metrics;
use crate::seed;

/// Floor applied to probabilities before taking logarithms.
pub const PROB_FLOOR: f64 = 1e-12;

/// Weight matrices of the two graph convolutions.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    /// First-layer weights, `feature_dim x hidden`.
    pub w1: Array2<f64>,
    /// Second-layer weights, `hidden x class_count`.
    pub w2: Array2<f64>,
}

const CHECKPOINT_TAG: &str = "calikit-params";
const CHECKPOINT_VERSION: &str = "v1";

impl ModelParams {
    pub fn zeros(feature_dim: usize, hidden: usize, class_count: usize) -> Self {
        Self {
            w1: Array2::zeros((feature_dim, hidden)),
            w2: Array2::zeros((hidden, class_count)),
        }
    }

    /// Glorot-uniform initialization; draws `w1` then `w2` in row-major
    /// order so a fixed RNG yields fixed weights.
    pub fn glorot<R: Rng>(
        feature_dim: usize,
        hidden: usize,
        class_count: usize,
        rng: &mut R,
    ) -> Self {
        let mut fill = |rows: usize, cols: usize| {
            let limit = (6.0 / (rows + cols) as f64).sqrt();
            Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-limit..limit))
        };
        let w1 = fill(feature_dim, hidden);
        let w2 = fill(hidden, class_count);
        Self { w1, w2 }
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.w1.nrows(), self.w1.ncols(), self.w2.ncols())
    }

    pub fn count(&self) -> usize {
        self.w1.len() + self.w2.len()
    }

    /// Row-major `w1` followed by row-major `w2`.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.count());
        out.extend(self.w1.iter());
        out.extend(self.w2.iter());
        out
    }

    pub fn from_flat(
        flat: &[f64],
        feature_dim: usize,
        hidden: usize,
        class_count: usize,
    ) -> Result<Self> {
        let expect = feature_dim * hidden + hidden * class_count;
        if flat.len() != expect {
            return Err(Error::Shape(format!(
                "{} parameters cannot fill shapes {feature_dim}x{hidden} and {hidden}x{class_count}",
                flat.len()
            )));
        }
        let split = feature_dim * hidden;
        let w1 = Array2::from_shape_vec((feature_dim, hidden), flat[..split].to_vec())
            .expect("length checked");
        let w2 = Array2::from_shape_vec((hidden, class_count), flat[split..].to_vec())
            .expect("length checked");
        Ok(Self { w1, w2 })
    }

    /// Write a checkpoint: one ASCII header line with the dimensions,
    /// then the flat parameters as little-endian doubles.
    pub fn save(&self, path: &Path) -> Result<()> {
        let (d, h, c) = self.dims();
        let mut bytes = format!("{CHECKPOINT_TAG} {CHECKPOINT_VERSION} {d} {h} {c}\n").into_bytes();
        for v in self.to_flat() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let newline = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::parse(path, 1, "missing checkpoint header"))?;
        let header = std::str::from_utf8(&bytes[..newline])
            .map_err(|_| Error::parse(path, 1, "checkpoint header is not UTF-8"))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 5 || fields[0] != CHECKPOINT_TAG || fields[1] != CHECKPOINT_VERSION {
            return Err(Error::parse(path, 1, format!("unrecognized header `{header}`")));
        }
        let dim = |s: &str, name: &str| -> Result<usize> {
            s.parse()
                .map_err(|_| Error::parse(path, 1, format!("bad {name} `{s}`")))
        };
        let d = dim(fields[2], "feature dim")?;
        let h = dim(fields[3], "hidden width")?;
        let c = dim(fields[4], "class count")?;
        let body = &bytes[newline + 1..];
        let expect = (d * h + h * c) * 8;
        if body.len() != expect {
            return Err(Error::parse(
                path,
                1,
                format!("expected {expect} payload bytes, found {}", body.len()),
            ));
        }
        let flat: Vec<f64> = body
            .chunks_exact(8)
            .map(|chunk| f64::from_le_bytes(chunk.try_into().expect("chunk of 8")))
            .collect();
        Self::from_flat(&flat, d, h, c)
    }
}

/// Inverted-dropout mask over the hidden activations. Kept entries are
/// scaled by `1 / (1 - rate)`; `identity` skips the multiply entirely.
#[derive(Debug, Clone)]
pub struct DropoutMask {
    scale: Option<Array2<f64>>,
}

impl DropoutMask {
    pub fn identity() -> Self {
        Self { scale: None }
    }

    /// Sample a fresh mask; a zero rate draws nothing from the RNG.
    pub fn sample<R: Rng>(rows: usize, cols: usize, rate: f64, rng: &mut R) -> Self {
        if rate == 0.0 {
            return Self::identity();
        }
        let keep = 1.0 - rate;
        let boost = 1.0 / keep;
        let scale = Array2::from_shape_fn((rows, cols), |_| {
            if rng.gen::<f64>() < keep {
                boost
            } else {
                0.0
            }
        });
        Self { scale: Some(scale) }
    }

    pub fn apply(&self, activations: &Array2<f64>) -> Array2<f64> {
        match &self.scale {
            Some(s) => activations * s,
            None => activations.clone(),
        }
    }
}

/// Intermediate activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// `A' X W1` before the nonlinearity.
    pub pre_act: Array2<f64>,
    /// `relu(pre_act)`.
    pub hidden: Array2<f64>,
    /// Hidden activations after the dropout mask.
    pub dropped: Array2<f64>,
    pub logits: Array2<f64>,
    pub probs: Array2<f64>,
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

/// Full-graph forward pass.
pub fn forward(
    adj: &NormalizedAdjacency,
    features: &Array2<f64>,
    params: &ModelParams,
    mask: &DropoutMask,
) -> ForwardCache {
    let xw = features.dot(&params.w1);
    let pre_act = adj.matmul(&xw);
    let hidden = pre_act.mapv(|v| v.max(0.0));
    let dropped = mask.apply(&hidden);
    let z = dropped.dot(&params.w2);
    let logits = adj.matmul(&z);
    let probs = softmax_rows(&logits);
    ForwardCache {
        pre_act,
        hidden,
        dropped,
        logits,
        probs,
    }
}

/// Class predictions and their confidence, derived from probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionTable {
    pub preds: Vec<usize>,
    pub conf: Vec<f64>,
    pub probs: Array2<f64>,
}

impl PredictionTable {
    /// Argmax per row; ties resolve to the smallest class index.
    pub fn from_probs(probs: Array2<f64>) -> Self {
        let mut preds = Vec::with_capacity(probs.nrows());
        let mut conf = Vec::with_capacity(probs.nrows());
        for row in probs.rows() {
            let mut best = 0;
            for (c, &p) in row.iter().enumerate() {
                if p > row[best] {
                    best = c;
                }
            }
            preds.push(best);
            conf.push(row[best]);
        }
        Self { preds, conf, probs }
    }

    pub fn len(&self) -> usize {
        self.preds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.preds.is_empty()
    }

    /// Probability rows, predictions, and confidences for a node subset.
    pub fn gather(&self, nodes: &[usize]) -> (Array2<f64>, Vec<usize>, Vec<f64>) {
        let probs = self.probs.select(Axis(0), nodes);
        let preds = nodes.iter().map(|&i| self.preds[i]).collect();
        let conf = nodes.iter().map(|&i| self.conf[i]).collect();
        (probs, preds, conf)
    }
}

/// Per-class weights inversely proportional to training frequency,
/// normalized to mean one. Every class must appear in the training set.
pub fn inverse_frequency_weights(
    labels: &[usize],
    train: &[usize],
    class_count: usize,
) -> Result<Vec<f64>> {
    let mut counts = vec![0usize; class_count];
    for &i in train {
        let y = *labels.get(i).ok_or_else(|| {
            Error::Bounds(format!("train node {i} exceeds label count {}", labels.len()))
        })?;
        counts[y] += 1;
    }
    if let Some(c) = counts.iter().position(|&n| n == 0) {
        return Err(Error::Domain(format!(
            "class {c} has no training node, so its weight is undefined"
        )));
    }
    let raw: Vec<f64> = counts.iter().map(|&n| 1.0 / n as f64).collect();
    let norm = class_count as f64 / raw.iter().sum::<f64>();
    Ok(raw.iter().map(|w| w * norm).collect())
}

/// Training targets: one distribution row per node plus the node's
/// class weight (always taken from its hard label).
#[derive(Debug, Clone)]
pub struct SoftTargets {
    pub rows: Array2<f64>,
    pub node_weight: Vec<f64>,
}

impl SoftTargets {
    pub fn one_hot(labels: &[usize], class_count: usize, class_weights: &[f64]) -> Result<Self> {
        Self::smoothed(labels, class_count, class_weights, 0.0)
    }

    /// Targets `(1 - eps) * onehot + eps / class_count`.
    pub fn smoothed(
        labels: &[usize],
        class_count: usize,
        class_weights: &[f64],
        eps: f64,
    ) -> Result<Self> {
        if !(0.0..1.0).contains(&eps) {
            return Err(Error::Domain(format!("smoothing {eps} outside [0, 1)")));
        }
        if class_weights.len() != class_count {
            return Err(Error::Shape(format!(
                "{} class weights for {class_count} classes",
                class_weights.len()
            )));
        }
        let off = eps / class_count as f64;
        let mut rows = Array2::from_elem((labels.len(), class_count), off);
        let mut node_weight = Vec::with_capacity(labels.len());
        for (i, &y) in labels.iter().enumerate() {
            if y >= class_count {
                return Err(Error::Bounds(format!(
                    "label {y} exceeds class count {class_count}"
                )));
            }
            rows[(i, y)] += 1.0 - eps;
            node_weight.push(class_weights[y]);
        }
        Ok(Self { rows, node_weight })
    }
}

/// Cost-sensitive cross entropy over `node_set` with hard labels.
pub fn cs_cross_entropy(
    probs: &Array2<f64>,
    labels: &[usize],
    node_set: &[usize],
    class_weights: &[f64],
) -> Result<f64> {
    if node_set.is_empty() {
        return Err(Error::Domain("cross entropy over an empty node set".into()));
    }
    let mut total = 0.0;
    for &i in node_set {
        let y = *labels
            .get(i)
            .ok_or_else(|| Error::Bounds(format!("node {i} has no label")))?;
        let p = probs[(i, y)].max(PROB_FLOOR);
        total -= class_weights[y] * p.ln();
    }
    Ok(total / node_set.len() as f64)
}

/// Weighted cross entropy of soft targets over `node_set`.
pub fn soft_cost(probs: &Array2<f64>, targets: &SoftTargets, node_set: &[usize]) -> Result<f64> {
    if node_set.is_empty() {
        return Err(Error::Domain("cross entropy over an empty node set".into()));
    }
    let mut total = 0.0;
    for &i in node_set {
        let mut node = 0.0;
        for (c, &t) in targets.rows.row(i).iter().enumerate() {
            if t > 0.0 {
                node -= t * probs[(i, c)].max(PROB_FLOOR).ln();
            }
        }
        total += targets.node_weight[i] * node;
    }
    Ok(total / node_set.len() as f64)
}

/// Loss plus its gradient with respect to the logits. Rows outside
/// `node_set` stay zero; the probability floor affects the loss value
/// only, the gradient is the exact softmax derivative `w (p - t) / |S|`.
pub fn soft_cost_and_dlogits(
    probs: &Array2<f64>,
    targets: &SoftTargets,
    node_set: &[usize],
) -> Result<(f64, Array2<f64>)> {
    let loss = soft_cost(probs, targets, node_set)?;
    let mut dlogits = Array2::zeros(probs.raw_dim());
    let inv = 1.0 / node_set.len() as f64;
    for &i in node_set {
        let w = targets.node_weight[i] * inv;
        for c in 0..probs.ncols() {
            dlogits[(i, c)] = w * (probs[(i, c)] - targets.rows[(i, c)]);
        }
    }
    Ok((loss, dlogits))
}

/// Backward pass from a logit gradient to the flat parameter gradient,
/// with the L2 term `decay * w` added last.
pub fn backprop(
    adj: &NormalizedAdjacency,
    features: &Array2<f64>,
    params: &ModelParams,
    cache: &ForwardCache,
    dlogits: &Array2<f64>,
    mask: &DropoutMask,
    decay: f64,
) -> Vec<f64> {
    let dz = adj.matmul(dlogits);
    let mut dw2 = cache.dropped.t().dot(&dz);
    let ddropped = dz.dot(&params.w2.t());
    let dhidden = mask.apply(&ddropped);
    let relu_gate = cache.pre_act.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
    let dpre = dhidden * &relu_gate;
    let dxw = adj.matmul(&dpre);
    let mut dw1 = features.t().dot(&dxw);
    if decay != 0.0 {
        dw1.scaled_add(decay, &params.w1);
        dw2.scaled_add(decay, &params.w2);
    }
    let mut flat = Vec::with_capacity(dw1.len() + dw2.len());
    flat.extend(dw1.iter());
    flat.extend(dw2.iter());
    flat
}

/// Adam optimizer with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(lr: f64, len: usize) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }

    pub fn step(&mut self, theta: &mut [f64], grad: &[f64]) {
        assert_eq!(theta.len(), grad.len());
        assert_eq!(theta.len(), self.m.len());
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..theta.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            theta[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

/// Optimizer and schedule settings.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub hidden: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub dropout: f64,
    pub max_epochs: usize,
    /// Epochs without a validation-cost improvement before stopping.
    pub patience: usize,
    /// Objective-change threshold for the plateau rule.
    pub plateau_tol: f64,
    /// Consecutive sub-threshold changes before the plateau rule fires.
    pub plateau_window: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden: 16,
            learning_rate: 0.01,
            weight_decay: 5e-4,
            dropout: 0.5,
            max_epochs: 200,
            patience: 30,
            plateau_tol: 1e-5,
            plateau_window: 10,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 {
            return Err(Error::Domain("hidden width must be positive".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Domain(format!(
                "learning rate {} must be positive",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Domain(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::Domain(format!(
                "weight decay {} must be nonnegative",
                self.weight_decay
            )));
        }
        if self.max_epochs == 0 || self.patience == 0 || self.plateau_window == 0 {
            return Err(Error::Domain(
                "epoch, patience, and plateau budgets must be positive".into(),
            ));
        }
        if self.plateau_tol < 0.0 {
            return Err(Error::Domain(format!(
                "plateau tolerance {} must be nonnegative",
                self.plateau_tol
            )));
        }
        Ok(())
    }
}

/// Immutable per-run inputs shared by all training entry points.
pub struct TrainContext<'a> {
    pub graph: &'a Graph,
    pub split: &'a DatasetSplit,
    pub adj: NormalizedAdjacency,
    pub class_weights: Vec<f64>,
}

impl<'a> TrainContext<'a> {
    pub fn new(graph: &'a Graph, split: &'a DatasetSplit) -> Result<Self> {
        split.validate(graph.num_nodes())?;
        let class_weights =
            inverse_frequency_weights(graph.labels(), &split.train, graph.class_count())?;
        Ok(Self {
            graph,
            split,
            adj: NormalizedAdjacency::from_graph(graph),
            class_weights,
        })
    }
}

/// Extension point for blending a penalty into the training objective.
///
/// With weight `lambda`, each epoch optimizes
/// `(1 - lambda) * cross_entropy + lambda * penalty`, where the penalty
/// contributes through its gradient with respect to the logits. A zero
/// weight must leave the run byte-identical to the plain trainer, so
/// the engine skips both callbacks' arithmetic entirely in that case.
pub trait TrainHook {
    fn lambda(&self) -> f64;

    /// Called before each epoch's forward pass with the current weights.
    fn begin_epoch(&mut self, _epoch: usize, _params: &ModelParams) -> Result<()> {
        Ok(())
    }

    /// Penalty value and its gradient with respect to the logits
    /// (unscaled; the engine applies `lambda`).
    fn penalty(&mut self, cache: &ForwardCache) -> Result<(f64, Array2<f64>)>;
}

/// Hook for plain cross-entropy training.
pub struct NoHook;

impl TrainHook for NoHook {
    fn lambda(&self) -> f64 {
        0.0
    }

    fn penalty(&mut self, _cache: &ForwardCache) -> Result<(f64, Array2<f64>)> {
        unreachable!("penalty is never requested at weight zero")
    }
}

/// One row of the per-epoch training log. Fields that an epoch does
/// not compute (the penalty when its weight is zero, validation scores
/// that need an absent class) hold NaN.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss_total: f64,
    pub loss_ce: f64,
    pub loss_eice: f64,
    pub val_macro_ace: f64,
    pub val_macro_f1: f64,
}

/// Write the log as `epoch,loss_total,loss_ce,loss_eice,val_macro_ace,val_macro_f1`.
pub fn save_train_log(rows: &[EpochRecord], path: &Path) -> Result<()> {
    let mut out = String::from("epoch,loss_total,loss_ce,loss_eice,val_macro_ace,val_macro_f1\n");
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.epoch, r.loss_total, r.loss_ce, r.loss_eice, r.val_macro_ace, r.val_macro_f1
        )
        .expect("string write");
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// A finished run: the best-validation weights, the weights at the
/// last epoch, and the full epoch log.
pub struct TrainOutput {
    pub params: ModelParams,
    pub final_params: ModelParams,
    pub log: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub stopped_epoch: usize,
}

/// Run the training loop.
///
/// Stops at the earliest of: `patience` epochs without strict
/// validation-cost improvement, `plateau_window` consecutive epochs
/// whose objective moved less than `plateau_tol`, or `max_epochs`.
/// Returns the parameters of the best validation epoch.
pub fn run_engine(
    ctx: &TrainContext,
    cfg: &TrainConfig,
    targets: &SoftTargets,
    hook: &mut dyn TrainHook,
) -> Result<TrainOutput> {
    cfg.validate()?;
    let n = ctx.graph.num_nodes();
    let d = ctx.graph.feature_dim();
    let c = ctx.graph.class_count();
    if targets.rows.nrows() != n || targets.rows.ncols() != c {
        return Err(Error::Shape(format!(
            "target table {}x{} does not match {n} nodes and {c} classes",
            targets.rows.nrows(),
            targets.rows.ncols()
        )));
    }
    let lambda = hook.lambda();
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::Domain(format!("penalty weight {lambda} outside [0, 1]")));
    }

    let mut init_rng = seed::stream(cfg.seed, "init");
    let mut drop_rng = seed::stream(cfg.seed, "dropout");
    let mut params = ModelParams::glorot(d, cfg.hidden, c, &mut init_rng);
    let mut flat = params.to_flat();
    let mut adam = Adam::new(cfg.learning_rate, flat.len());

    let features = ctx.graph.features();
    let val_labels: Vec<usize> = ctx.split.val.iter().map(|&i| ctx.graph.labels()[i]).collect();

    let mut log = Vec::new();
    let mut best_params = params.clone();
    let mut best_cost = f64::INFINITY;
    let mut best_epoch = 0;
    let mut stale = 0usize;
    let mut plateau = 0usize;
    let mut prev_total = f64::NAN;
    let mut stopped_epoch = 0;

    for epoch in 1..=cfg.max_epochs {
        hook.begin_epoch(epoch, &params)?;

        let mask = DropoutMask::sample(n, cfg.hidden, cfg.dropout, &mut drop_rng);
        let cache = forward(&ctx.adj, features, &params, &mask);
        let (loss_ce, mut dlogits) = soft_cost_and_dlogits(&cache.probs, targets, &ctx.split.train)?;

        let (loss_total, loss_eice) = if lambda == 0.0 {
            (loss_ce, f64::NAN)
        } else {
            let (pen, reg_dlogits) = hook.penalty(&cache)?;
            dlogits.mapv_inplace(|v| v * (1.0 - lambda));
            dlogits.scaled_add(lambda, &reg_dlogits);
            ((1.0 - lambda) * loss_ce + lambda * pen, pen)
        };
        if !loss_total.is_finite() {
            return Err(Error::Training {
                epoch,
                message: format!("objective became non-finite ({loss_total})"),
            });
        }

        let grad = backprop(
            &ctx.adj,
            features,
            &params,
            &cache,
            &dlogits,
            &mask,
            cfg.weight_decay,
        );
        adam.step(&mut flat, &grad);
        params = ModelParams::from_flat(&flat, d, cfg.hidden, c)?;

        let eval = forward(&ctx.adj, features, &params, &DropoutMask::identity());
        let val_cost = soft_cost(&eval.probs, targets, &ctx.split.val)?;
        let val_probs = eval.probs.select(Axis(0), &ctx.split.val);
        let val_macro_ace = metrics::ace(&val_probs, &val_labels, 10)
            .map(|s| s.macro_ace)
            .unwrap_or(f64::NAN);
        let val_preds: Vec<usize> = PredictionTable::from_probs(val_probs).preds;
        let val_macro_f1 = metrics::classification_metrics(&val_preds, &val_labels, 0, c)
            .map(|m| m.macro_f1)
            .unwrap_or(f64::NAN);

        log.push(EpochRecord {
            epoch,
            loss_total,
            loss_ce,
            loss_eice,
            val_macro_ace,
            val_macro_f1,
        });
        stopped_epoch = epoch;

        if val_cost < best_cost {
            best_cost = val_cost;
            best_params = params.clone();
            best_epoch = epoch;
            stale = 0;
        } else {
            stale += 1;
        }

        if epoch >= 2 && (loss_total - prev_total).abs() < cfg.plateau_tol {
            plateau += 1;
        } else {
            plateau = 0;
        }
        prev_total = loss_total;

        if stale >= cfg.patience || plateau >= cfg.plateau_window {
            break;
        }
    }

    if best_epoch == 0 {
        return Err(Error::Training {
            epoch: stopped_epoch,
            message: "validation cost never became finite".into(),
        });
    }
    Ok(TrainOutput {
        params: best_params,
        final_params: params,
        log,
        best_epoch,
        stopped_epoch,
    })
}

/// Train with the plain cost-sensitive objective.
pub fn train(ctx: &TrainContext, cfg: &TrainConfig) -> Result<TrainOutput> {
    let targets = SoftTargets::one_hot(
        ctx.graph.labels(),
        ctx.graph.class_count(),
        &ctx.class_weights,
    )?;
    run_engine(ctx, cfg, &targets, &mut NoHook)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Graph;
    use ndarray::array;

    fn toy_graph() -> (Graph, DatasetSplit) {
        // Two components with opposite features, three nodes each.
        let features = array![
            [1.0, 0.0],
            [0.9, 0.1],
            [1.0, 0.1],
            [0.0, 1.0],
            [0.1, 0.9],
            [0.1, 1.0],
        ];
        let labels = vec![0, 0, 0, 1, 1, 1];
        let edges = vec![(0, 1), (1, 2), (3, 4), (4, 5)];
        let graph = Graph::new(edges, features, labels, 2).unwrap();
        let split = DatasetSplit {
            train: vec![0, 3],
            val: vec![1, 4],
            test: vec![2, 5],
        };
        (graph, split)
    }

    fn quiet_config() -> TrainConfig {
        TrainConfig {
            hidden: 4,
            dropout: 0.0,
            max_epochs: 60,
            patience: 60,
            plateau_tol: 0.0,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn softmax_matches_hand_value() {
        let p = softmax_rows(&array![[1.0, 0.0]]);
        assert!((p[(0, 0)] - 0.7310585786300049).abs() < 1e-12);
        assert!((p[(0, 1)] - 0.2689414213699951).abs() < 1e-12);
    }

    #[test]
    fn softmax_is_shift_invariant() {
        let a = softmax_rows(&array![[0.3, -1.2, 2.0]]);
        let b = softmax_rows(&array![[0.3 + 500.0, -1.2 + 500.0, 2.0 + 500.0]]);
        for (x, y) in a.iter().zip(b.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn forward_is_pure() {
        let (graph, _) = toy_graph();
        let adj = NormalizedAdjacency::from_graph(&graph);
        let mut rng = seed::stream(7, "init");
        let params = ModelParams::glorot(2, 3, 2, &mut rng);
        let a = forward(&adj, graph.features(), &params, &DropoutMask::identity());
        let b = forward(&adj, graph.features(), &params, &DropoutMask::identity());
        for (x, y) in a.logits.iter().zip(b.logits.iter()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    // Isolated nodes make the propagation matrix the identity, so the
    // network reduces to relu(x W1) W2, which is computable by hand.
    #[test]
    fn forward_matches_hand_chain_on_isolated_nodes() {
        let features = array![[1.0, 2.0], [0.5, -1.0]];
        let graph = Graph::new(vec![], features, vec![0, 1], 2).unwrap();
        let adj = NormalizedAdjacency::from_graph(&graph);
        let params = ModelParams {
            w1: array![[0.3], [-0.2]],
            w2: array![[0.5, -0.5]],
        };
        let cache = forward(&adj, graph.features(), &params, &DropoutMask::identity());
        // Node 0: xw = 0.3 - 0.4 = -0.1, relu -> 0, logits (0, 0).
        assert!((cache.pre_act[(0, 0)] - -0.1).abs() < 1e-12);
        assert_eq!(cache.logits[(0, 0)], 0.0);
        assert!((cache.probs[(0, 0)] - 0.5).abs() < 1e-12);
        // Node 1: xw = 0.15 + 0.2 = 0.35, logits (0.175, -0.175).
        assert!((cache.logits[(1, 0)] - 0.175).abs() < 1e-12);
        assert!((cache.logits[(1, 1)] - -0.175).abs() < 1e-12);
    }

    #[test]
    fn zero_params_give_uniform_probs_and_log_c_loss() {
        let (graph, split) = toy_graph();
        let adj = NormalizedAdjacency::from_graph(&graph);
        let params = ModelParams::zeros(2, 4, 2);
        let cache = forward(&adj, graph.features(), &params, &DropoutMask::identity());
        for &p in cache.probs.iter() {
            assert!((p - 0.5).abs() < 1e-15);
        }
        let weights = inverse_frequency_weights(graph.labels(), &split.train, 2).unwrap();
        let loss = cs_cross_entropy(&cache.probs, graph.labels(), &split.train, &weights).unwrap();
        assert!((loss - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn weighted_uniform_loss_matches_hand_value() {
        // Train classes {0,0,0,1}: weights (1/2, 3/2), so the uniform
        // loss is (3/4) ln 2.
        let probs = Array2::from_elem((4, 2), 0.5);
        let labels = [0, 0, 0, 1];
        let weights = inverse_frequency_weights(&labels, &[0, 1, 2, 3], 2).unwrap();
        assert!((weights[0] - 0.5).abs() < 1e-12);
        assert!((weights[1] - 1.5).abs() < 1e-12);
        let loss = cs_cross_entropy(&probs, &labels, &[0, 1, 2, 3], &weights).unwrap();
        assert!((loss - 0.75 * 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn weights_require_every_class_in_train() {
        assert!(matches!(
            inverse_frequency_weights(&[0, 0, 1], &[0, 1], 2),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn probability_floor_bounds_the_loss() {
        let probs = array![[0.0, 1.0]];
        let loss = cs_cross_entropy(&probs, &[0], &[0], &[1.0, 1.0]).unwrap();
        assert!((loss - -PROB_FLOOR.ln()).abs() < 1e-9);
    }

    #[test]
    fn soft_cost_equals_hard_cost_on_one_hot_targets() {
        let (graph, split) = toy_graph();
        let adj = NormalizedAdjacency::from_graph(&graph);
        let mut rng = seed::stream(3, "init");
        let params = ModelParams::glorot(2, 4, 2, &mut rng);
        let cache = forward(&adj, graph.features(), &params, &DropoutMask::identity());
        let weights = inverse_frequency_weights(graph.labels(), &split.train, 2).unwrap();
        let targets = SoftTargets::one_hot(graph.labels(), 2, &weights).unwrap();
        let hard = cs_cross_entropy(&cache.probs, graph.labels(), &split.train, &weights).unwrap();
        let soft = soft_cost(&cache.probs, &targets, &split.train).unwrap();
        assert!((hard - soft).abs() < 1e-15);
    }

    #[test]
    fn smoothed_targets_match_hand_rows() {
        let targets = SoftTargets::smoothed(&[0, 1], 2, &[1.0, 1.0], 0.2).unwrap();
        assert!((targets.rows[(0, 0)] - 0.9).abs() < 1e-15);
        assert!((targets.rows[(0, 1)] - 0.1).abs() < 1e-15);
        assert!((targets.rows[(1, 1)] - 0.9).abs() < 1e-15);
    }

    fn fd_gradient(
        adj: &NormalizedAdjacency,
        graph: &Graph,
        targets: &SoftTargets,
        node_set: &[usize],
        mask: &DropoutMask,
        flat: &[f64],
        decay: f64,
        eps: f64,
    ) -> Vec<f64> {
        let objective = |theta: &[f64]| -> f64 {
            let p = ModelParams::from_flat(theta, graph.feature_dim(), 4, graph.class_count())
                .unwrap();
            let cache = forward(adj, graph.features(), &p, mask);
            let ce = soft_cost(&cache.probs, targets, node_set).unwrap();
            let l2: f64 = theta.iter().map(|v| v * v).sum();
            ce + 0.5 * decay * l2
        };
        (0..flat.len())
            .map(|j| {
                let mut plus = flat.to_vec();
                let mut minus = flat.to_vec();
                plus[j] += eps;
                minus[j] -= eps;
                (objective(&plus) - objective(&minus)) / (2.0 * eps)
            })
            .collect()
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let (graph, split) = toy_graph();
        let adj = NormalizedAdjacency::from_graph(&graph);
        let mut rng = seed::stream(11, "init");
        let params = ModelParams::glorot(2, 4, 2, &mut rng);
        let weights = inverse_frequency_weights(graph.labels(), &split.train, 2).unwrap();
        let targets = SoftTargets::smoothed(graph.labels(), 2, &weights, 0.1).unwrap();
        let decay = 0.3;

        for mask in [
            DropoutMask::identity(),
            DropoutMask::sample(6, 4, 0.5, &mut seed::stream(11, "dropout")),
        ] {
            let cache = forward(&adj, graph.features(), &params, &mask);
            let (_, dlogits) =
                soft_cost_and_dlogits(&cache.probs, &targets, &split.train).unwrap();
            let grad = backprop(&adj, graph.features(), &params, &cache, &dlogits, &mask, decay);
            let fd = fd_gradient(
                &adj,
                &graph,
                &targets,
                &split.train,
                &mask,
                &params.to_flat(),
                decay,
                1e-5,
            );
            for (a, b) in grad.iter().zip(fd.iter()) {
                assert!((a - b).abs() < 1e-7, "analytic {a} vs fd {b}");
            }
        }
    }

    // The decay term is the final fused add, so subtracting it back in
    // the same form is bit-exact.
    #[test]
    fn decay_contribution_is_exactly_linear() {
        let (graph, split) = toy_graph();
        let adj = NormalizedAdjacency::from_graph(&graph);
        let mut rng = seed::stream(5, "init");
        let params = ModelParams::glorot(2, 4, 2, &mut rng);
        let weights = inverse_frequency_weights(graph.labels(), &split.train, 2).unwrap();
        let targets = SoftTargets::one_hot(graph.labels(), 2, &weights).unwrap();
        let mask = DropoutMask::identity();
        let cache = forward(&adj, graph.features(), &params, &mask);
        let (_, dlogits) = soft_cost_and_dlogits(&cache.probs, &targets, &split.train).unwrap();
        let g0 = backprop(&adj, graph.features(), &params, &cache, &dlogits, &mask, 0.0);
        let g1 = backprop(&adj, graph.features(), &params, &cache, &dlogits, &mask, 0.1);
        let theta = params.to_flat();
        for i in 0..g0.len() {
            assert_eq!(g1[i].to_bits(), (g0[i] + 0.1 * theta[i]).to_bits());
        }
    }

    // Zero features zero out every parameter gradient, making the
    // uniform prediction a stationary point.
    #[test]
    fn zero_features_are_stationary() {
        let features = Array2::zeros((4, 2));
        let graph = Graph::new(vec![(0, 1), (2, 3)], features, vec![0, 0, 1, 1], 2).unwrap();
        let adj = NormalizedAdjacency::from_graph(&graph);
        let mut rng = seed::stream(1, "init");
        let params = ModelParams::glorot(2, 4, 2, &mut rng);
        let targets = SoftTargets::one_hot(graph.labels(), 2, &[1.0, 1.0]).unwrap();
        let mask = DropoutMask::identity();
        let cache = forward(&adj, graph.features(), &params, &mask);
        let (loss, dlogits) = soft_cost_and_dlogits(&cache.probs, &targets, &[0, 2]).unwrap();
        assert!((loss - 2f64.ln()).abs() < 1e-12);
        let grad = backprop(&adj, graph.features(), &params, &cache, &dlogits, &mask, 0.0);
        assert!(grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn adam_first_step_matches_hand_value() {
        let mut adam = Adam::new(0.01, 1);
        let mut theta = vec![1.0];
        adam.step(&mut theta, &[1.0]);
        // Bias-corrected first step moves by lr/(1 + eps).
        assert!((theta[0] - (1.0 - 0.01 / (1.0 + 1e-8))).abs() < 1e-12);
    }

    #[test]
    fn dropout_mask_statistics_and_determinism() {
        let mut rng = seed::stream(9, "dropout");
        let mask = DropoutMask::sample(100, 50, 0.5, &mut rng);
        let ones = Array2::from_elem((100, 50), 1.0);
        let applied = mask.apply(&ones);
        let mut kept = 0usize;
        for &v in applied.iter() {
            assert!(v == 0.0 || v == 2.0);
            kept += usize::from(v != 0.0);
        }
        let frac = kept as f64 / 5000.0;
        assert!((frac - 0.5).abs() < 0.05, "kept fraction {frac}");

        let again = DropoutMask::sample(100, 50, 0.5, &mut seed::stream(9, "dropout"));
        let b = again.apply(&ones);
        for (x, y) in applied.iter().zip(b.iter()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
        // Zero rate produces the identity without consuming the RNG.
        let mut rng = seed::stream(9, "dropout");
        let before = rng.clone().gen::<u64>();
        let _ = DropoutMask::sample(10, 10, 0.0, &mut rng);
        assert_eq!(rng.gen::<u64>(), before);
    }

    #[test]
    fn prediction_ties_resolve_to_smallest_class() {
        let table = PredictionTable::from_probs(array![[0.5, 0.5], [0.2, 0.8]]);
        assert_eq!(table.preds, vec![0, 1]);
        assert_eq!(table.conf, vec![0.5, 0.8]);
        let (probs, preds, conf) = table.gather(&[1]);
        assert_eq!(probs.nrows(), 1);
        assert_eq!(preds, vec![1]);
        assert_eq!(conf, vec![0.8]);
    }

    #[test]
    fn checkpoint_round_trips_bit_exactly() {
        let mut rng = seed::stream(2, "init");
        let params = ModelParams::glorot(3, 4, 2, &mut rng);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        params.save(&path).unwrap();
        let loaded = ModelParams::load(&path).unwrap();
        for (a, b) in params.to_flat().iter().zip(loaded.to_flat().iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        let bytes = std::fs::read(&path).unwrap();
        assert!(bytes.starts_with(b"calikit-params v1 3 4 2\n"));

        std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(ModelParams::load(&path), Err(Error::Parse { .. })));
    }

    #[test]
    fn from_flat_rejects_wrong_length() {
        assert!(matches!(
            ModelParams::from_flat(&[0.0; 5], 2, 2, 2),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn training_is_deterministic() {
        let (graph, split) = toy_graph();
        let ctx = TrainContext::new(&graph, &split).unwrap();
        let cfg = TrainConfig {
            max_epochs: 15,
            ..quiet_config()
        };
        let a = train(&ctx, &cfg).unwrap();
        let b = train(&ctx, &cfg).unwrap();
        for (x, y) in a.params.to_flat().iter().zip(b.params.to_flat().iter()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
        assert_eq!(a.log.len(), b.log.len());
        for (x, y) in a.log.iter().zip(b.log.iter()) {
            assert_eq!(x.epoch, y.epoch);
            assert_eq!(x.loss_total.to_bits(), y.loss_total.to_bits());
            assert_eq!(x.val_macro_ace.to_bits(), y.val_macro_ace.to_bits());
        }
    }

    #[test]
    fn training_descends_and_separates() {
        let (graph, split) = toy_graph();
        let ctx = TrainContext::new(&graph, &split).unwrap();
        let cfg = TrainConfig {
            max_epochs: 300,
            patience: 300,
            ..quiet_config()
        };
        let out = train(&ctx, &cfg).unwrap();
        assert!(out.log.last().unwrap().loss_ce < out.log[0].loss_ce);

        let eval = forward(&ctx.adj, graph.features(), &out.params, &DropoutMask::identity());
        let table = PredictionTable::from_probs(eval.probs);
        for i in 0..graph.num_nodes() {
            assert_eq!(table.preds[i], graph.labels()[i], "node {i}");
        }
    }

    fn frozen_setup() -> (Graph, DatasetSplit) {
        // Zero features with zero decay freeze the parameters, so both
        // the objective and the validation cost are constant.
        let features = Array2::zeros((6, 2));
        let graph =
            Graph::new(vec![(0, 1), (2, 3)], features, vec![0, 0, 0, 1, 1, 1], 2).unwrap();
        let split = DatasetSplit {
            train: vec![0, 3],
            val: vec![1, 4],
            test: vec![2, 5],
        };
        (graph, split)
    }

    #[test]
    fn plateau_rule_stops_a_frozen_run() {
        let (graph, split) = frozen_setup();
        let ctx = TrainContext::new(&graph, &split).unwrap();
        let cfg = TrainConfig {
            hidden: 3,
            dropout: 0.0,
            weight_decay: 0.0,
            max_epochs: 100,
            patience: 50,
            ..TrainConfig::default()
        };
        let out = train(&ctx, &cfg).unwrap();
        // Change is measurable from epoch 2; ten flat epochs in a row
        // end the run at epoch 11.
        assert_eq!(out.stopped_epoch, 11);
        assert_eq!(out.log.len(), 11);
        let first = out.log[0].loss_total;
        assert!(out.log.iter().all(|r| r.loss_total == first));
    }

    #[test]
    fn patience_stops_a_frozen_run() {
        let (graph, split) = frozen_setup();
        let ctx = TrainContext::new(&graph, &split).unwrap();
        let cfg = TrainConfig {
            hidden: 3,
            dropout: 0.0,
            weight_decay: 0.0,
            max_epochs: 100,
            patience: 3,
            ..TrainConfig::default()
        };
        let out = train(&ctx, &cfg).unwrap();
        // Best at epoch 1, then three stale epochs.
        assert_eq!(out.best_epoch, 1);
        assert_eq!(out.stopped_epoch, 4);
    }

    #[test]
    fn returned_params_beat_final_params_on_validation() {
        let (graph, split) = toy_graph();
        let ctx = TrainContext::new(&graph, &split).unwrap();
        let cfg = TrainConfig {
            dropout: 0.4,
            max_epochs: 50,
            patience: 50,
            ..quiet_config()
        };
        let out = train(&ctx, &cfg).unwrap();
        let weights = &ctx.class_weights;
        let targets = SoftTargets::one_hot(graph.labels(), 2, weights).unwrap();
        let cost = |p: &ModelParams| {
            let eval = forward(&ctx.adj, graph.features(), p, &DropoutMask::identity());
            soft_cost(&eval.probs, &targets, &split.val).unwrap()
        };
        assert!(cost(&out.params) <= cost(&out.final_params) + 1e-12);
        assert!(out.best_epoch <= out.stopped_epoch);
    }

    #[test]
    fn train_log_serializes_nan_fields() {
        let rows = vec![EpochRecord {
            epoch: 1,
            loss_total: 0.5,
            loss_ce: 0.5,
            loss_eice: f64::NAN,
            val_macro_ace: f64::NAN,
            val_macro_f1: 0.75,
        }];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.csv");
        save_train_log(&rows, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("epoch,loss_total,loss_ce,loss_eice,val_macro_ace,val_macro_f1\n"));
        assert!(text.contains("1,0.5,0.5,NaN,NaN,0.75"));
    }

    #[test]
    fn single_class_validation_logs_nan_ace() {
        let features = array![
            [1.0, 0.0],
            [0.9, 0.1],
            [1.0, 0.1],
            [0.0, 1.0],
            [0.1, 0.9],
            [0.1, 1.0],
        ];
        let graph = Graph::new(
            vec![(0, 1), (3, 4)],
            features,
            vec![0, 0, 0, 1, 1, 1],
            2,
        )
        .unwrap();
        // Validation holds only class-0 nodes.
        let split = DatasetSplit {
            train: vec![0, 3],
            val: vec![1, 2],
            test: vec![4, 5],
        };
        let ctx = TrainContext::new(&graph, &split).unwrap();
        let cfg = TrainConfig {
            max_epochs: 3,
            patience: 10,
            ..quiet_config()
        };
        let out = train(&ctx, &cfg).unwrap();
        assert!(out.log.iter().all(|r| r.val_macro_ace.is_nan()));
        assert!(out.log.iter().all(|r| r.loss_eice.is_nan()));
    }

    #[test]
    fn engine_rejects_bad_configs() {
        let (graph, split) = toy_graph();
        let ctx = TrainContext::new(&graph, &split).unwrap();
        for bad in [
            TrainConfig {
                hidden: 0,
                ..TrainConfig::default()
            },
            TrainConfig {
                dropout: 1.0,
                ..TrainConfig::default()
            },
            TrainConfig {
                learning_rate: 0.0,
                ..TrainConfig::default()
            },
        ] {
            assert!(train(&ctx, &bad).is_err());
        }
    }
}
