//! Implementations behind each subcommand.

use std::fs;
use std::path::Path;

use calikit_core::calirare::{temperature_scale, train_calirare, train_label_smooth, CaliRareConfig};
use calikit_core::error::{Error, Result};
use calikit_core::gcn::{
    forward, save_train_log, softmax_rows, train, DropoutMask, ModelParams, PredictionTable,
    TrainContext, TrainOutput,
};
use calikit_core::graph::{
    gen_synthetic, load_graph, load_split, make_split, save_graph, save_split, DatasetSplit, Graph,
    SyntheticConfig,
};
use calikit_core::influence::{
    cache_key, load_cache, loo_analysis, residual_from_probs, InfluenceContext, LooAnalysis,
    save_cache,
};
use calikit_core::metrics;
use calikit_core::uncertainty::{interval, save_records, UncertaintyRecord};
use ndarray::{Array2, Axis};

use crate::config::RunConfig;
use crate::{CliError, CmdResult};

fn usage(e: Error) -> CliError {
    CliError::Usage(e)
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Numeric(format!("manifest serialization failed: {e}")))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn ensure_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

pub fn cmd_gen(
    cfg: &RunConfig,
    out: &Path,
    blocks: &[usize],
    p_in: f64,
    p_out: f64,
    dim: usize,
    shift: f64,
) -> CmdResult {
    if blocks.is_empty() || blocks.iter().any(|&b| b == 0) {
        return Err(usage(Error::Domain(
            "every block must hold at least one node".into(),
        )));
    }
    for (name, p) in [("p-in", p_in), ("p-out", p_out)] {
        if !(0.0..=1.0).contains(&p) {
            return Err(usage(Error::Domain(format!(
                "{name} {p} outside [0, 1]"
            ))));
        }
    }
    if dim == 0 {
        return Err(usage(Error::Domain("feature dimension must be positive".into())));
    }
    if !shift.is_finite() {
        return Err(usage(Error::Domain(format!("shift {shift} is not finite"))));
    }

    let gen_cfg = SyntheticConfig {
        block_sizes: blocks.to_vec(),
        p_in,
        p_out,
        feature_dim: dim,
        feature_shift: shift,
    };
    let graph = gen_synthetic(&gen_cfg, cfg.seed)?;
    ensure_dir(out)?;
    save_graph(
        &graph,
        &out.join("edges.txt"),
        &out.join("features.csv"),
        &out.join("labels.txt"),
    )?;
    write_json(
        &out.join("manifest.json"),
        &serde_json::json!({
            "command": "gen",
            "blocks": blocks,
            "p_in": p_in,
            "p_out": p_out,
            "dim": dim,
            "shift": shift,
            "seed": cfg.seed,
        }),
    )?;
    Ok(())
}

/// Dataset plus the derived artifacts every model-facing command needs:
/// the merged-majority view of the graph and a deterministic split.
pub struct Workspace {
    pub graph: Graph,
    pub split: DatasetSplit,
    pub minority_original: usize,
}

impl Workspace {
    pub fn load(data: &Path, cfg: &RunConfig, split_file: Option<&Path>) -> Result<Self> {
        let raw = load_graph(
            &data.join("edges.txt"),
            &data.join("features.csv"),
            &data.join("labels.txt"),
        )?;
        let minority = match cfg.minority_class {
            Some(m) => m,
            None => raw.minority_class(),
        };
        let original_labels = raw.labels().to_vec();
        let graph = raw.binarize(minority)?;
        let split = match split_file {
            Some(path) => load_split(path, graph.num_nodes())?,
            None => make_split(
                &graph,
                &original_labels,
                cfg.label_rate,
                cfg.val_size,
                cfg.test_size,
                cfg.seed,
            )?,
        };
        Ok(Self {
            graph,
            split,
            minority_original: minority,
        })
    }

    fn check_minority(data: &Path, cfg: &RunConfig) -> CmdResult {
        if let Some(m) = cfg.minority_class {
            let raw = load_graph(
                &data.join("edges.txt"),
                &data.join("features.csv"),
                &data.join("labels.txt"),
            )?;
            if m >= raw.class_count() {
                return Err(usage(Error::Bounds(format!(
                    "minority class {m} exceeds class count {}",
                    raw.class_count()
                ))));
            }
        }
        Ok(())
    }

    fn labels_of(&self, nodes: &[usize]) -> Vec<usize> {
        nodes.iter().map(|&v| self.graph.labels()[v]).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Method {
    Baseline,
    Calirare,
    LabelSmooth,
}

impl Method {
    fn name(self) -> &'static str {
        match self {
            Method::Baseline => "baseline",
            Method::Calirare => "calirare",
            Method::LabelSmooth => "label-smooth",
        }
    }
}

pub fn cmd_train(cfg: &RunConfig, data: &Path, out: &Path, method: Method, split_file: Option<&Path>) -> CmdResult {
    Workspace::check_minority(data, cfg)?;
    let ws = Workspace::load(data, cfg, split_file)?;
    let ctx = TrainContext::new(&ws.graph, &ws.split)?;

    let trained: TrainOutput = match method {
        Method::Baseline => train(&ctx, &cfg.train)?,
        Method::Calirare => {
            let cc = CaliRareConfig {
                lambda: cfg.lambda,
                refresh_every: cfg.refresh_every,
                warmup: cfg.warmup,
                train: cfg.train.clone(),
                solver: cfg.solver.clone(),
                coverage: cfg.coverage.clone(),
            };
            train_calirare(&ctx, &cc)?
        }
        Method::LabelSmooth => train_label_smooth(&ctx, &cfg.train, cfg.epsilon)?,
    };

    ensure_dir(out)?;
    trained.params.save(&out.join("model.bin"))?;
    save_train_log(&trained.log, &out.join("train_log.csv"))?;
    save_split(&ws.split, &out.join("split.csv"))?;
    write_json(
        &out.join("manifest.json"),
        &serde_json::json!({
            "command": "train",
            "data": data,
            "method": method.name(),
            "minority_class": ws.minority_original,
            "best_epoch": trained.best_epoch,
            "stopped_epoch": trained.stopped_epoch,
            "config": cfg,
        }),
    )?;
    Ok(())
}

fn load_checkpoint(path: &Path, graph: &Graph) -> Result<ModelParams> {
    let params = ModelParams::load(path)?;
    let (d, _, c) = params.dims();
    if d != graph.feature_dim() || c != graph.class_count() {
        return Err(Error::Incompatible(format!(
            "checkpoint expects {d} features and {c} classes, dataset has {} and {}",
            graph.feature_dim(),
            graph.class_count()
        )));
    }
    Ok(params)
}

/// Leave-one-out results for the checkpoint, reusing files under `out`
/// when they were produced for the identical model, dataset, split,
/// and solver settings.
fn loo_with_cache(
    ctx: &TrainContext,
    params: &ModelParams,
    cfg: &RunConfig,
    out: &Path,
) -> Result<LooAnalysis> {
    let key = cache_key(params, ctx.graph, ctx.split, &cfg.solver);
    let csv = out.join("loo_residuals.csv");
    let bin = out.join("loo_deltas.bin");
    let key_path = out.join("loo.key");

    let ictx = InfluenceContext::new(ctx, params, cfg.train.weight_decay)?;
    if csv.exists() && bin.exists() {
        if let Ok(stored) = fs::read_to_string(&key_path) {
            if stored.trim() == key {
                return load_cache(&ictx, &csv, &bin);
            }
        }
    }
    let analysis = loo_analysis(&ictx, &cfg.solver)?;
    save_cache(&analysis, &csv, &bin)?;
    fs::write(&key_path, key + "\n").map_err(|e| Error::io(&key_path, e))?;
    Ok(analysis)
}

fn sorted(mut nodes: Vec<usize>) -> Vec<usize> {
    nodes.sort_unstable();
    nodes
}

/// Jackknife records for `eval_nodes` straight from a completed
/// analysis, with everything at the model's own probabilities.
fn records_plain(
    analysis: &LooAnalysis,
    eval_nodes: &[usize],
    cfg: &RunConfig,
) -> Result<Vec<UncertaintyRecord>> {
    let residuals = analysis.residuals();
    eval_nodes
        .iter()
        .map(|&v| {
            interval(
                v,
                analysis.base.conf[v],
                &analysis.scalars_for(v),
                &residuals,
                &cfg.coverage,
            )
        })
        .collect()
}

/// Jackknife records with every probability (base and leave-one-out)
/// recomputed through a fitted temperature. Scaling is monotone, so
/// the base predicted classes are reused as-is.
fn records_scaled(
    ctx: &TrainContext,
    params: &ModelParams,
    analysis: &LooAnalysis,
    eval_nodes: &[usize],
    cfg: &RunConfig,
    temperature: f64,
) -> Result<Vec<UncertaintyRecord>> {
    let features = ctx.graph.features();
    let scale = |logits: &Array2<f64>| softmax_rows(&logits.mapv(|z| z / temperature));

    let base_cache = forward(&ctx.adj, features, params, &DropoutMask::identity());
    let base = PredictionTable::from_probs(scale(&base_cache.logits));

    let (d, h, c) = params.dims();
    let flat = params.to_flat();
    let mut scalars = vec![Vec::with_capacity(analysis.results.len()); eval_nodes.len()];
    let mut residuals = Vec::with_capacity(analysis.results.len());
    for result in &analysis.results {
        let moved: Vec<f64> = flat.iter().zip(&result.delta).map(|(p, d)| p + d).collect();
        let shifted = ModelParams::from_flat(&moved, d, h, c)?;
        let cache = forward(&ctx.adj, features, &shifted, &DropoutMask::identity());
        let probs = scale(&cache.logits);
        residuals.push(residual_from_probs(
            &probs,
            result.node_id,
            ctx.graph.labels()[result.node_id],
        ));
        for (slot, &v) in scalars.iter_mut().zip(eval_nodes) {
            slot.push(probs[(v, base.preds[v])]);
        }
    }

    eval_nodes
        .iter()
        .zip(&scalars)
        .map(|(&v, loo_scalars)| interval(v, base.conf[v], loo_scalars, &residuals, &cfg.coverage))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum NodeSet {
    Val,
    Test,
    Train,
    All,
}

impl NodeSet {
    fn name(self) -> &'static str {
        match self {
            NodeSet::Val => "val",
            NodeSet::Test => "test",
            NodeSet::Train => "train",
            NodeSet::All => "all",
        }
    }

    fn pick(self, split: &DatasetSplit) -> Vec<usize> {
        match self {
            NodeSet::Val => split.val.clone(),
            NodeSet::Test => split.test.clone(),
            NodeSet::Train => split.train.clone(),
            NodeSet::All => {
                let mut all = split.train.clone();
                all.extend_from_slice(&split.val);
                all.extend_from_slice(&split.test);
                all
            }
        }
    }
}

pub fn cmd_uncertainty(
    cfg: &RunConfig,
    data: &Path,
    out: &Path,
    checkpoint: &Path,
    nodes: NodeSet,
    split_file: Option<&Path>,
) -> CmdResult {
    Workspace::check_minority(data, cfg)?;
    let ws = Workspace::load(data, cfg, split_file)?;
    let ctx = TrainContext::new(&ws.graph, &ws.split)?;
    let params = load_checkpoint(checkpoint, &ws.graph)?;

    ensure_dir(out)?;
    let analysis = loo_with_cache(&ctx, &params, cfg, out)?;
    let eval_nodes = sorted(nodes.pick(&ws.split));
    let records = records_plain(&analysis, &eval_nodes, cfg)?;
    save_records(&records, &out.join("uncertainty.csv"))?;

    write_json(
        &out.join("manifest.json"),
        &serde_json::json!({
            "command": "uncertainty",
            "data": data,
            "checkpoint": checkpoint,
            "nodes": nodes.name(),
            "minority_class": ws.minority_original,
            "loo_key": cache_key(&params, &ws.graph, &ws.split, &cfg.solver),
            "config": cfg,
        }),
    )?;
    Ok(())
}

fn mean_nll(logits: &Array2<f64>, labels: &[usize], temperature: f64) -> f64 {
    let mut total = 0.0;
    for (row, &y) in logits.rows().into_iter().zip(labels) {
        let scaled: Vec<f64> = row.iter().map(|z| z / temperature).collect();
        let top = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = top + scaled.iter().map(|z| (z - top).exp()).sum::<f64>().ln();
        total += lse - scaled[y];
    }
    total / labels.len() as f64
}

pub fn cmd_calibrate(
    cfg: &RunConfig,
    data: &Path,
    out: &Path,
    checkpoint: &Path,
    split_file: Option<&Path>,
) -> CmdResult {
    Workspace::check_minority(data, cfg)?;
    let ws = Workspace::load(data, cfg, split_file)?;
    let ctx = TrainContext::new(&ws.graph, &ws.split)?;
    let params = load_checkpoint(checkpoint, &ws.graph)?;

    let cache = forward(&ctx.adj, ws.graph.features(), &params, &DropoutMask::identity());
    let val_nodes = sorted(ws.split.val.clone());
    let val_logits = cache.logits.select(Axis(0), &val_nodes);
    let val_labels = ws.labels_of(&val_nodes);
    let temperature = temperature_scale(&val_logits, &val_labels)?;

    ensure_dir(out)?;
    write_json(
        &out.join("calibration.json"),
        &serde_json::json!({
            "temperature": temperature,
            "val_nll_raw": mean_nll(&val_logits, &val_labels, 1.0),
            "val_nll_scaled": mean_nll(&val_logits, &val_labels, temperature),
        }),
    )?;
    write_json(
        &out.join("manifest.json"),
        &serde_json::json!({
            "command": "calibrate",
            "data": data,
            "checkpoint": checkpoint,
            "minority_class": ws.minority_original,
            "config": cfg,
        }),
    )?;
    Ok(())
}

/// Score a parameter set on one node subset: classification metrics
/// plus the distribution-level calibration numbers.
struct Scores {
    report_probs: Array2<f64>,
    preds: Vec<usize>,
    conf: Vec<f64>,
    labels: Vec<usize>,
}

fn score_nodes(
    ctx: &TrainContext,
    ws: &Workspace,
    params: &ModelParams,
    nodes: &[usize],
    temperature: f64,
) -> Scores {
    let cache = forward(&ctx.adj, ws.graph.features(), params, &DropoutMask::identity());
    let probs = softmax_rows(&cache.logits.mapv(|z| z / temperature));
    let table = PredictionTable::from_probs(probs);
    let (report_probs, preds, conf) = table.gather(nodes);
    Scores {
        report_probs,
        preds,
        conf,
        labels: ws.labels_of(nodes),
    }
}

pub fn cmd_evaluate(
    cfg: &RunConfig,
    data: &Path,
    out: &Path,
    checkpoint: &Path,
    temperature: Option<f64>,
    split_file: Option<&Path>,
) -> CmdResult {
    if let Some(t) = temperature {
        if !(t > 0.0) || !t.is_finite() {
            return Err(usage(Error::Domain(format!(
                "temperature {t} must be positive"
            ))));
        }
    }
    Workspace::check_minority(data, cfg)?;
    let ws = Workspace::load(data, cfg, split_file)?;
    let ctx = TrainContext::new(&ws.graph, &ws.split)?;
    let params = load_checkpoint(checkpoint, &ws.graph)?;
    let t = temperature.unwrap_or(1.0);

    let eval_nodes = sorted(ws.split.test.clone());
    let scores = score_nodes(&ctx, &ws, &params, &eval_nodes, t);
    let correct: Vec<bool> = scores
        .preds
        .iter()
        .zip(&scores.labels)
        .map(|(p, y)| p == y)
        .collect();

    let (ece, bins) = metrics::ece(&scores.conf, &correct, cfg.bins)?;
    let ace = metrics::ace(&scores.report_probs, &scores.labels, cfg.bins)?;
    let class_metrics =
        metrics::classification_metrics(&scores.preds, &scores.labels, 1, ws.graph.class_count())?;

    ensure_dir(out)?;
    let analysis = loo_with_cache(&ctx, &params, cfg, out)?;
    let records = if temperature.is_some() {
        records_scaled(&ctx, &params, &analysis, &eval_nodes, cfg, t)?
    } else {
        records_plain(&analysis, &eval_nodes, cfg)?
    };
    let eice = metrics::eice(&records)?;

    let report = metrics::CalibrationReport {
        ece,
        ace_minority: ace.per_class[1],
        ace_per_class: ace.per_class.clone(),
        macro_ace: ace.macro_ace,
        eice,
        accuracy: class_metrics.accuracy,
        recall: class_metrics.recall,
        macro_f1: class_metrics.macro_f1,
        bins: bins.to_arrays(),
    };
    report.save_json(&out.join("report.json"))?;
    bins.save_csv(&out.join("reliability.csv"))?;

    write_json(
        &out.join("manifest.json"),
        &serde_json::json!({
            "command": "evaluate",
            "data": data,
            "checkpoint": checkpoint,
            "temperature": temperature,
            "minority_class": ws.minority_original,
            "loo_key": cache_key(&params, &ws.graph, &ws.split, &cfg.solver),
            "config": cfg,
        }),
    )?;
    Ok(())
}

/// One sweep cell: joint training at (coverage, lambda), scored on the
/// test split.
fn sweep_cell(ws: &Workspace, cfg: &RunConfig, alpha: f64, lambda: f64) -> Result<(f64, f64)> {
    let mut cell_cfg = cfg.clone();
    cell_cfg.coverage.coverage = alpha;
    cell_cfg.lambda = lambda;
    let ctx = TrainContext::new(&ws.graph, &ws.split)?;
    let cc = CaliRareConfig {
        lambda,
        refresh_every: cell_cfg.refresh_every,
        warmup: cell_cfg.warmup,
        train: cell_cfg.train.clone(),
        solver: cell_cfg.solver.clone(),
        coverage: cell_cfg.coverage.clone(),
    };
    let trained = train_calirare(&ctx, &cc)?;

    let eval_nodes = sorted(ws.split.test.clone());
    let scores = score_nodes(&ctx, ws, &trained.params, &eval_nodes, 1.0);
    let ace = metrics::ace(&scores.report_probs, &scores.labels, cfg.bins)?;
    let class_metrics =
        metrics::classification_metrics(&scores.preds, &scores.labels, 1, ws.graph.class_count())?;
    Ok((ace.macro_ace, class_metrics.macro_f1))
}

fn completed_cells(path: &Path) -> Result<Vec<(u64, u64)>> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(Error::io(path, e)),
    };
    let mut cells = Vec::new();
    for (idx, line) in text.lines().enumerate().skip(1) {
        let mut parts = line.split(',');
        let alpha: f64 = parts
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::parse(path, idx + 1, "bad alpha"))?;
        let lambda: f64 = parts
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::parse(path, idx + 1, "bad lambda"))?;
        cells.push((alpha.to_bits(), lambda.to_bits()));
    }
    Ok(cells)
}

pub fn cmd_sweep(
    cfg: &RunConfig,
    data: &Path,
    out: &Path,
    alphas: &[f64],
    lambdas: &[f64],
    split_file: Option<&Path>,
) -> CmdResult {
    if alphas.is_empty() || lambdas.is_empty() {
        return Err(usage(Error::Domain(
            "alpha and lambda lists must be nonempty".into(),
        )));
    }
    for &a in alphas {
        if !(a > 0.5 && a < 1.0) {
            return Err(usage(Error::Domain(format!(
                "coverage must lie in (0.5, 1), got {a}"
            ))));
        }
    }
    for &l in lambdas {
        if !l.is_finite() || !(0.0..=1.0).contains(&l) {
            return Err(usage(Error::Domain(format!(
                "penalty weight {l} outside [0, 1]"
            ))));
        }
    }

    Workspace::check_minority(data, cfg)?;
    let ws = Workspace::load(data, cfg, split_file)?;
    ensure_dir(out)?;
    write_json(
        &out.join("manifest.json"),
        &serde_json::json!({
            "command": "sweep",
            "data": data,
            "alphas": alphas,
            "lambdas": lambdas,
            "minority_class": ws.minority_original,
            "config": cfg,
        }),
    )?;

    let csv = out.join("sweep.csv");
    let done = completed_cells(&csv)?;
    use std::io::Write;
    let mut file = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&csv)
        .map_err(|e| Error::io(&csv, e))?;
    if done.is_empty() && file.metadata().map(|m| m.len()).unwrap_or(0) == 0 {
        writeln!(file, "alpha,lambda,macro_ace,macro_f1").map_err(|e| Error::io(&csv, e))?;
    }

    for &alpha in alphas {
        for &lambda in lambdas {
            if done.contains(&(alpha.to_bits(), lambda.to_bits())) {
                continue;
            }
            let (macro_ace, macro_f1) = sweep_cell(&ws, cfg, alpha, lambda)?;
            writeln!(file, "{alpha},{lambda},{macro_ace},{macro_f1}")
                .map_err(|e| Error::io(&csv, e))?;
            file.flush().map_err(|e| Error::io(&csv, e))?;
        }
    }
    Ok(())
}
