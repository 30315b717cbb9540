//! Leave-one-out parameter shifts without retraining.
//!
//! Removing one training node moves the optimum of the training
//! objective by approximately a damped inverse-Hessian step on that
//! node's loss gradient. This module computes per-node gradients,
//! exact Hessian-vector products by forward-over-reverse
//! differentiation, the damped solves (dense factorization at small
//! parameter counts, conjugate gradient above a threshold), and the
//! resulting per-node deltas, error residuals, and class-probability
//! ensembles. Dropout is always off here so every quantity is
//! deterministic.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::Array2;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::gcn::{
    self, forward, DropoutMask, ForwardCache, ModelParams, PredictionTable, TrainContext,
};
use crate::graph::DatasetSplit;
use crate::metrics;

/// Settings for the damped inverse-Hessian solves.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    /// Ridge added to the Hessian so the solve is well posed.
    pub damping: f64,
    /// Relative residual target for conjugate gradient.
    pub cg_tol: f64,
    pub cg_max_iter: usize,
    /// Assemble and factor the damped Hessian densely up to this many
    /// parameters; run conjugate gradient above it.
    pub explicit_hessian_threshold: usize,
    /// Flip the orientation of the leave-one-out shift. The default
    /// reads the shift as `-(1/n) H^{-1} g_i`; the flipped orientation
    /// `+(1/n) H^{-1} g_i` is the direction that matches actually
    /// retraining without the node.
    pub flip_sign: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            damping: 0.01,
            cg_tol: 1e-6,
            cg_max_iter: 200,
            explicit_hessian_threshold: 2000,
            flip_sign: false,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.damping < 0.0 {
            return Err(Error::Domain(format!(
                "damping {} must be nonnegative",
                self.damping
            )));
        }
        if !(self.cg_tol > 0.0) {
            return Err(Error::Domain(format!(
                "solve tolerance {} must be positive",
                self.cg_tol
            )));
        }
        if self.cg_max_iter == 0 {
            return Err(Error::Domain("iteration budget must be positive".into()));
        }
        Ok(())
    }
}

/// One leave-one-out model: the removed node, the parameter shift
/// `theta_minus_i - theta`, the node's error residual, and the
/// probability every node keeps its base predicted class.
#[derive(Debug, Clone, PartialEq)]
pub struct LooResult {
    pub node_id: usize,
    pub delta: Vec<f64>,
    pub residual: f64,
    pub base_class_probs: Vec<f64>,
}

/// The full leave-one-out ensemble, one result per training node in
/// ascending node order, plus the base model's predictions.
#[derive(Debug, Clone)]
pub struct LooAnalysis {
    pub results: Vec<LooResult>,
    pub base: PredictionTable,
}

impl LooAnalysis {
    pub fn residuals(&self) -> Vec<f64> {
        self.results.iter().map(|r| r.residual).collect()
    }

    /// Ensemble of base-class probabilities for one node, in training
    /// node order.
    pub fn scalars_for(&self, node: usize) -> Vec<f64> {
        self.results.iter().map(|r| r.base_class_probs[node]).collect()
    }
}

/// Frozen model state shared by all influence computations: the clean
/// forward pass plus the logit gradient of the mean training loss.
pub struct InfluenceContext<'a> {
    pub train_ctx: &'a TrainContext<'a>,
    pub params: &'a ModelParams,
    pub decay: f64,
    cache: ForwardCache,
    base: PredictionTable,
    relu_gate: Array2<f64>,
    mean_dlogits: Array2<f64>,
    mean_dz: Array2<f64>,
}

impl<'a> InfluenceContext<'a> {
    pub fn new(train_ctx: &'a TrainContext<'a>, params: &'a ModelParams, decay: f64) -> Result<Self> {
        let g = train_ctx.graph;
        let (d, _, c) = params.dims();
        if d != g.feature_dim() || c != g.class_count() {
            return Err(Error::Incompatible(format!(
                "model is {d}-dimensional with {c} classes but the graph has \
                 {} features and {} classes",
                g.feature_dim(),
                g.class_count()
            )));
        }
        if decay < 0.0 {
            return Err(Error::Domain(format!("decay {decay} must be nonnegative")));
        }
        let cache = forward(&train_ctx.adj, g.features(), params, &DropoutMask::identity());
        let base = PredictionTable::from_probs(cache.probs.clone());
        let relu_gate = cache.pre_act.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });

        let n_train = train_ctx.split.train.len() as f64;
        let mut mean_dlogits = Array2::zeros(cache.probs.raw_dim());
        for &i in &train_ctx.split.train {
            let y = g.labels()[i];
            let w = train_ctx.class_weights[y] / n_train;
            for cc in 0..c {
                let target = if cc == y { 1.0 } else { 0.0 };
                mean_dlogits[(i, cc)] = w * (cache.probs[(i, cc)] - target);
            }
        }
        let mean_dz = train_ctx.adj.matmul(&mean_dlogits);
        Ok(Self {
            train_ctx,
            params,
            decay,
            cache,
            base,
            relu_gate,
            mean_dlogits,
            mean_dz,
        })
    }

    pub fn base_predictions(&self) -> &PredictionTable {
        &self.base
    }

    pub fn param_count(&self) -> usize {
        self.params.count()
    }

    fn require_train_node(&self, i: usize) -> Result<usize> {
        if !self.train_ctx.split.train.contains(&i) {
            return Err(Error::Domain(format!("node {i} is not a training node")));
        }
        Ok(self.train_ctx.graph.labels()[i])
    }

    /// Gradient of the single-node weighted cross-entropy term, with
    /// no decay and no `1/n` scaling.
    pub fn per_node_grad(&self, i: usize) -> Result<Vec<f64>> {
        let y = self.require_train_node(i)?;
        let w = self.train_ctx.class_weights[y];
        let mut dlogits = Array2::zeros(self.cache.probs.raw_dim());
        for c in 0..self.cache.probs.ncols() {
            let target = if c == y { 1.0 } else { 0.0 };
            dlogits[(i, c)] = w * (self.cache.probs[(i, c)] - target);
        }
        Ok(gcn::backprop(
            &self.train_ctx.adj,
            self.train_ctx.graph.features(),
            self.params,
            &self.cache,
            &dlogits,
            &DropoutMask::identity(),
            0.0,
        ))
    }

    /// Gradient of the full mean training objective including decay.
    pub fn mean_grad(&self) -> Vec<f64> {
        gcn::backprop(
            &self.train_ctx.adj,
            self.train_ctx.graph.features(),
            self.params,
            &self.cache,
            &self.mean_dlogits,
            &DropoutMask::identity(),
            self.decay,
        )
    }

    /// Damped Hessian-vector product `(H + damping I) v` of the mean
    /// training objective, by forward-over-reverse differentiation.
    /// Exact up to the measure-zero relu kinks; the decay term
    /// contributes `decay * v`.
    pub fn hvp(&self, v: &[f64], damping: f64) -> Result<Vec<f64>> {
        let g = self.train_ctx.graph;
        let adj = &self.train_ctx.adj;
        let x = g.features();
        let (d, h, c) = self.params.dims();
        let v_params = ModelParams::from_flat(v, d, h, c)?;

        // Tangents of the forward pass.
        let rxw = x.dot(&v_params.w1);
        let rpre = adj.matmul(&rxw);
        let rhid = &rpre * &self.relu_gate;
        let rz = rhid.dot(&self.params.w2) + self.cache.hidden.dot(&v_params.w2);
        let rlogits = adj.matmul(&rz);

        // Tangent of the loss-layer gradient through the softmax.
        let n_train = self.train_ctx.split.train.len() as f64;
        let mut r_dlogits = Array2::zeros(self.cache.probs.raw_dim());
        for &i in &self.train_ctx.split.train {
            let w = self.train_ctx.class_weights[g.labels()[i]] / n_train;
            let p = self.cache.probs.row(i);
            let rl = rlogits.row(i);
            let dot: f64 = p.iter().zip(rl.iter()).map(|(a, b)| a * b).sum();
            for cc in 0..c {
                r_dlogits[(i, cc)] = w * p[cc] * (rl[cc] - dot);
            }
        }

        // Tangents of the backward pass.
        let r_dz = adj.matmul(&r_dlogits);
        let mut r_dw2 = rhid.t().dot(&self.mean_dz) + self.cache.hidden.t().dot(&r_dz);
        let r_dhid = r_dz.dot(&self.params.w2.t()) + self.mean_dz.dot(&v_params.w2.t());
        let r_dpre = &r_dhid * &self.relu_gate;
        let r_dxw = adj.matmul(&r_dpre);
        let mut r_dw1 = x.t().dot(&r_dxw);

        if self.decay != 0.0 {
            r_dw1.scaled_add(self.decay, &v_params.w1);
            r_dw2.scaled_add(self.decay, &v_params.w2);
        }
        let mut out: Vec<f64> = Vec::with_capacity(v.len());
        out.extend(r_dw1.iter());
        out.extend(r_dw2.iter());
        if damping != 0.0 {
            for (o, &vi) in out.iter_mut().zip(v) {
                *o += damping * vi;
            }
        }
        if let Some(bad) = out.iter().find(|x| !x.is_finite()) {
            return Err(Error::Numeric(format!(
                "Hessian-vector product produced {bad}"
            )));
        }
        Ok(out)
    }

    /// Build the solver, factoring the damped Hessian when the
    /// parameter count is at or below the explicit threshold.
    pub fn solver(&'a self, cfg: &SolverConfig) -> Result<HinvSolver<'a>> {
        cfg.validate()?;
        let p = self.param_count();
        let dense = if p <= cfg.explicit_hessian_threshold {
            let mut h = nalgebra::DMatrix::zeros(p, p);
            let mut unit = vec![0.0; p];
            for j in 0..p {
                unit[j] = 1.0;
                let col = self.hvp(&unit, cfg.damping)?;
                unit[j] = 0.0;
                for i in 0..p {
                    h[(i, j)] = col[i];
                }
            }
            Some(h.lu())
        } else {
            None
        };
        Ok(HinvSolver {
            ictx: self,
            cfg: cfg.clone(),
            dense,
        })
    }

    /// One-shot solve of `(H + damping I) x = b`.
    pub fn solve_hinv(&self, cfg: &SolverConfig, b: &[f64]) -> Result<Vec<f64>> {
        self.solver(cfg)?.solve(b)
    }

    /// Probabilities of the model at `params + delta`.
    pub fn shifted_probs(&self, delta: &[f64]) -> Result<Array2<f64>> {
        let (d, h, c) = self.params.dims();
        let flat = self.params.to_flat();
        if delta.len() != flat.len() {
            return Err(Error::Shape(format!(
                "shift of length {} against {} parameters",
                delta.len(),
                flat.len()
            )));
        }
        let moved: Vec<f64> = flat.iter().zip(delta).map(|(a, b)| a + b).collect();
        let shifted = ModelParams::from_flat(&moved, d, h, c)?;
        Ok(forward(
            &self.train_ctx.adj,
            self.train_ctx.graph.features(),
            &shifted,
            &DropoutMask::identity(),
        )
        .probs)
    }
}

/// A prepared solver for repeated right-hand sides against one model
/// state. Every returned solution is re-verified with one extra
/// Hessian-vector product.
pub struct HinvSolver<'a> {
    ictx: &'a InfluenceContext<'a>,
    cfg: SolverConfig,
    dense: Option<nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>>,
}

impl HinvSolver<'_> {
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        let b_norm = norm(b);
        if b_norm == 0.0 {
            return Ok(vec![0.0; b.len()]);
        }
        let x = match &self.dense {
            Some(lu) => {
                let rhs = nalgebra::DVector::from_column_slice(b);
                let sol = lu.solve(&rhs).ok_or_else(|| Error::Numeric(
                    "damped Hessian factorization is singular".into(),
                ))?;
                sol.iter().copied().collect::<Vec<f64>>()
            }
            None => self.conjugate_gradient(b, b_norm)?,
        };
        // Postcondition echo: one extra product certifies the residual.
        let hx = self.ictx.hvp(&x, self.cfg.damping)?;
        let mut res = 0.0;
        for i in 0..b.len() {
            let r = hx[i] - b[i];
            res += r * r;
        }
        let rel = res.sqrt() / b_norm;
        if rel > self.cfg.cg_tol {
            return Err(Error::Convergence {
                residual: rel,
                tolerance: self.cfg.cg_tol,
                iterations: self.cfg.cg_max_iter,
            });
        }
        Ok(x)
    }

    fn conjugate_gradient(&self, b: &[f64], b_norm: f64) -> Result<Vec<f64>> {
        let n = b.len();
        let mut x = vec![0.0; n];
        let mut r = b.to_vec();
        let mut p = r.clone();
        let mut rs: f64 = r.iter().map(|v| v * v).sum();
        let mut rel = rs.sqrt() / b_norm;
        for iter in 1..=self.cfg.cg_max_iter {
            let hp = self.ictx.hvp(&p, self.cfg.damping)?;
            let curvature: f64 = p.iter().zip(&hp).map(|(a, b)| a * b).sum();
            if !(curvature > 0.0) {
                return Err(Error::Convergence {
                    residual: rel,
                    tolerance: self.cfg.cg_tol,
                    iterations: iter,
                });
            }
            let alpha = rs / curvature;
            for i in 0..n {
                x[i] += alpha * p[i];
                r[i] -= alpha * hp[i];
            }
            let rs_next: f64 = r.iter().map(|v| v * v).sum();
            rel = rs_next.sqrt() / b_norm;
            if rel <= self.cfg.cg_tol {
                return Ok(x);
            }
            let beta = rs_next / rs;
            for i in 0..n {
                p[i] = r[i] + beta * p[i];
            }
            rs = rs_next;
        }
        Err(Error::Convergence {
            residual: rel,
            tolerance: self.cfg.cg_tol,
            iterations: self.cfg.cg_max_iter,
        })
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Parameter shift from removing training node `i`: the solve output
/// scaled by `-1/n` (or `+1/n` when the orientation is flipped).
pub fn loo_delta(
    ictx: &InfluenceContext,
    solver: &HinvSolver,
    cfg: &SolverConfig,
    i: usize,
) -> Result<Vec<f64>> {
    let grad = ictx.per_node_grad(i)?;
    let x = solver.solve(&grad)?;
    let n = ictx.train_ctx.split.train.len() as f64;
    if cfg.flip_sign {
        Ok(x.into_iter().map(|v| v / n).collect())
    } else {
        Ok(x.into_iter().map(|v| -v / n).collect())
    }
}

/// Error residual of node `i` under probabilities `probs`: one minus
/// the probability assigned to the true class, clamped to `[0, 1]`.
pub fn residual_from_probs(probs: &Array2<f64>, i: usize, true_class: usize) -> f64 {
    (1.0 - probs[(i, true_class)]).clamp(0.0, 1.0)
}

/// Run the full leave-one-out sweep over the training set.
///
/// Per-node solves share one prepared solver and run in parallel;
/// each touches only shared immutable state, so the output is
/// identical for any worker count.
pub fn loo_analysis(ictx: &InfluenceContext, cfg: &SolverConfig) -> Result<LooAnalysis> {
    let solver = ictx.solver(cfg)?;
    let labels = ictx.train_ctx.graph.labels();
    let base = ictx.base_predictions().clone();
    let results: Result<Vec<LooResult>> = ictx
        .train_ctx
        .split
        .train
        .par_iter()
        .map(|&i| {
            let delta = loo_delta(ictx, &solver, cfg, i)?;
            let probs = ictx.shifted_probs(&delta)?;
            let residual = residual_from_probs(&probs, i, labels[i]);
            let base_class_probs = (0..probs.nrows())
                .map(|v| probs[(v, base.preds[v])])
                .collect();
            Ok(LooResult {
                node_id: i,
                delta,
                residual,
                base_class_probs,
            })
        })
        .collect();
    Ok(LooAnalysis {
        results: results?,
        base,
    })
}

/// Content hash tying a cache entry to the exact model and data that
/// produced it.
pub fn cache_key(
    params: &ModelParams,
    graph: &crate::graph::Graph,
    split: &DatasetSplit,
    cfg: &SolverConfig,
) -> String {
    let mut hasher = Sha256::new();
    hasher.update(b"calikit-loo-key v1\n");
    let (d, h, c) = params.dims();
    hasher.update(format!("{d} {h} {c}\n").as_bytes());
    for v in params.to_flat() {
        hasher.update(v.to_le_bytes());
    }
    hasher.update(format!("{} {}\n", graph.num_nodes(), graph.class_count()).as_bytes());
    for &(u, v) in graph.edges() {
        hasher.update(format!("{u},{v}\n").as_bytes());
    }
    for v in graph.features().iter() {
        hasher.update(v.to_le_bytes());
    }
    for &y in graph.labels() {
        hasher.update(format!("{y}\n").as_bytes());
    }
    for &i in &split.train {
        hasher.update(format!("t{i}\n").as_bytes());
    }
    hasher.update(format!("{} {} {}\n", cfg.damping, cfg.flip_sign, cfg.cg_tol).as_bytes());
    let digest = hasher.finalize();
    digest.iter().fold(String::with_capacity(64), |mut s, b| {
        write!(s, "{b:02x}").expect("string write");
        s
    })
}

/// Write the sweep as `node_id,residual` rows plus a binary sidecar of
/// deltas in checkpoint float format.
pub fn save_cache(analysis: &LooAnalysis, csv_path: &Path, bin_path: &Path) -> Result<()> {
    let mut csv = String::from("node_id,residual\n");
    for r in &analysis.results {
        writeln!(csv, "{},{}", r.node_id, r.residual).expect("string write");
    }
    std::fs::write(csv_path, csv).map_err(|e| Error::io(csv_path, e))?;

    let p = analysis.results.first().map_or(0, |r| r.delta.len());
    let mut bin = format!("calikit-loo v1 {} {p}\n", analysis.results.len()).into_bytes();
    for r in &analysis.results {
        for v in &r.delta {
            bin.extend_from_slice(&v.to_le_bytes());
        }
    }
    std::fs::write(bin_path, bin).map_err(|e| Error::io(bin_path, e))
}

/// Reload a cached sweep, recomputing the probability ensembles from
/// the stored deltas.
pub fn load_cache(
    ictx: &InfluenceContext,
    csv_path: &Path,
    bin_path: &Path,
) -> Result<LooAnalysis> {
    let csv = std::fs::read_to_string(csv_path).map_err(|e| Error::io(csv_path, e))?;
    let mut rows: Vec<(usize, f64)> = Vec::new();
    for (idx, line) in csv.lines().enumerate() {
        if idx == 0 {
            if line != "node_id,residual" {
                return Err(Error::parse(csv_path, 1, format!("bad header `{line}`")));
            }
            continue;
        }
        let (id, res) = line
            .split_once(',')
            .ok_or_else(|| Error::parse(csv_path, idx + 1, "expected two fields"))?;
        let id = id
            .parse()
            .map_err(|_| Error::parse(csv_path, idx + 1, format!("bad node id `{id}`")))?;
        let res = res
            .parse()
            .map_err(|_| Error::parse(csv_path, idx + 1, format!("bad residual `{res}`")))?;
        rows.push((id, res));
    }

    let bin = std::fs::read(bin_path).map_err(|e| Error::io(bin_path, e))?;
    let newline = bin
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::parse(bin_path, 1, "missing sidecar header"))?;
    let header = std::str::from_utf8(&bin[..newline])
        .map_err(|_| Error::parse(bin_path, 1, "sidecar header is not UTF-8"))?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() != 4 || fields[0] != "calikit-loo" || fields[1] != "v1" {
        return Err(Error::parse(bin_path, 1, format!("unrecognized header `{header}`")));
    }
    let count: usize = fields[2]
        .parse()
        .map_err(|_| Error::parse(bin_path, 1, "bad result count"))?;
    let p: usize = fields[3]
        .parse()
        .map_err(|_| Error::parse(bin_path, 1, "bad parameter count"))?;
    if count != rows.len() {
        return Err(Error::Incompatible(format!(
            "sidecar holds {count} deltas but the table lists {} nodes",
            rows.len()
        )));
    }
    let body = &bin[newline + 1..];
    if body.len() != count * p * 8 {
        return Err(Error::parse(
            bin_path,
            1,
            format!("expected {} payload bytes, found {}", count * p * 8, body.len()),
        ));
    }

    let base = ictx.base_predictions().clone();
    let mut results = Vec::with_capacity(count);
    for (k, (node_id, residual)) in rows.into_iter().enumerate() {
        let delta: Vec<f64> = body[k * p * 8..(k + 1) * p * 8]
            .chunks_exact(8)
            .map(|ch| f64::from_le_bytes(ch.try_into().expect("chunk of 8")))
            .collect();
        let probs = ictx.shifted_probs(&delta)?;
        let base_class_probs = (0..probs.nrows())
            .map(|v| probs[(v, base.preds[v])])
            .collect();
        results.push(LooResult {
            node_id,
            delta,
            residual,
            base_class_probs,
        });
    }
    Ok(LooAnalysis { results, base })
}

/// Drive the training objective to its basin optimum with damped
/// Newton steps, backtracking on the gradient norm. Makes retrained
/// models comparable at the level of their exact optima instead of
/// wherever a fixed optimizer schedule happened to stop.
fn newton_polish(
    train_ctx: &TrainContext,
    start: ModelParams,
    decay: f64,
    max_iter: usize,
) -> Result<ModelParams> {
    let (d, h, c) = start.dims();
    let cfg = SolverConfig {
        damping: 1e-3,
        cg_tol: 1e-6,
        ..SolverConfig::default()
    };
    let mut params = start;
    for _ in 0..max_iter {
        let step;
        let gnorm;
        {
            let ictx = InfluenceContext::new(train_ctx, &params, decay)?;
            let g = ictx.mean_grad();
            gnorm = norm(&g);
            if gnorm < 1e-11 {
                break;
            }
            step = ictx.solve_hinv(&cfg, &g)?;
        }
        let flat = params.to_flat();
        let mut scale = 1.0;
        let mut accepted = None;
        for _ in 0..25 {
            let moved: Vec<f64> = flat
                .iter()
                .zip(&step)
                .map(|(p, s)| p - scale * s)
                .collect();
            let cand = ModelParams::from_flat(&moved, d, h, c)?;
            let cand_norm = {
                let ictx = InfluenceContext::new(train_ctx, &cand, decay)?;
                norm(&ictx.mean_grad())
            };
            if cand_norm < gnorm {
                accepted = Some(cand);
                break;
            }
            scale *= 0.5;
        }
        match accepted {
            Some(cand) => params = cand,
            None => break,
        }
    }
    Ok(params)
}

/// Desk-scale self-check: train a small block-model graph, estimate
/// every training node's effect on the validation cost through the
/// leave-one-out shift, measure the same effect by actually retraining
/// from the same seed without the node, and return the Pearson
/// correlation between the two. Every model (base and retrained) is
/// Newton-polished to its exact optimum so the measured differences
/// reflect the removal rather than optimizer stopping noise. Uses the
/// flipped (retraining-direction) orientation.
pub fn retraining_fidelity(seed: u64) -> Result<f64> {
    use crate::gcn::{soft_cost, train, SoftTargets, TrainConfig};
    use crate::graph::{gen_synthetic, make_split, SyntheticConfig};

    // Moderate feature shift plus strong decay keeps every training
    // node off the saturation boundary: saturated nodes have zero
    // gradient and therefore zero predicted shift, while their removal
    // still steers the optimizer path, which is exactly the regime a
    // local quadratic model cannot speak to.
    let gen_cfg = SyntheticConfig {
        block_sizes: vec![22, 8],
        p_in: 0.25,
        p_out: 0.04,
        feature_dim: 13,
        feature_shift: 1.0,
    };
    let graph = gen_synthetic(&gen_cfg, seed)?;
    let split = make_split(&graph, &graph.labels().to_vec(), 5, 12, 4, seed)?;
    // Fixed-length runs: early stopping off so every retrained model
    // sees exactly the same schedule from the same initialization.
    let train_cfg = TrainConfig {
        hidden: 4,
        learning_rate: 0.01,
        weight_decay: 2e-2,
        dropout: 0.0,
        max_epochs: 600,
        patience: 601,
        plateau_tol: 0.0,
        seed,
        ..TrainConfig::default()
    };
    let decay = train_cfg.weight_decay;

    let ctx = TrainContext::new(&graph, &split)?;
    let base_out = train(&ctx, &train_cfg)?;
    let base_params = newton_polish(&ctx, base_out.final_params, decay, 40)?;
    let targets = SoftTargets::one_hot(graph.labels(), graph.class_count(), &ctx.class_weights)?;
    let val_cost = |params: &ModelParams, tc: &TrainContext| -> Result<f64> {
        let probs = forward(&tc.adj, graph.features(), params, &DropoutMask::identity()).probs;
        soft_cost(&probs, &targets, &split.val)
    };
    let base_cost = val_cost(&base_params, &ctx)?;

    let ictx = InfluenceContext::new(&ctx, &base_params, decay)?;
    let solver_cfg = SolverConfig {
        damping: 1e-3,
        flip_sign: true,
        ..SolverConfig::default()
    };
    let solver = ictx.solver(&solver_cfg)?;

    let mut predicted = Vec::new();
    let mut measured = Vec::new();
    for &i in &split.train {
        let delta = loo_delta(&ictx, &solver, &solver_cfg, i)?;
        let probs = ictx.shifted_probs(&delta)?;
        predicted.push(soft_cost(&probs, &targets, &split.val)? - base_cost);

        let reduced = DatasetSplit {
            train: split.train.iter().copied().filter(|&j| j != i).collect(),
            val: split.val.clone(),
            test: split.test.clone(),
        };
        let mut rctx = TrainContext::new(&graph, &reduced)?;
        // Hold the class weights at their base values, scaled so the
        // cost normalizer stays at the base training-set size. Removal
        // then changes only the sample set, not the weighting scheme
        // or the decay-to-data balance.
        rctx.class_weights = ctx.class_weights.clone();
        let keep = reduced.train.len() as f64 / split.train.len() as f64;
        for w in rctx.class_weights.iter_mut() {
            *w *= keep;
        }
        let rout = train(&rctx, &train_cfg)?;
        let polished = newton_polish(&rctx, rout.final_params, decay, 40)?;
        measured.push(val_cost(&polished, &rctx)? - base_cost);
    }
    metrics::pearson(&predicted, &measured)
}
