//! Release gate: one check per acceptance criterion. Each test prints
//! a single `acceptance N/7 ...: PASS` line (visible with
//! `cargo test --test acceptance -- --nocapture`) and asserts the
//! criterion itself, so a regression fails the suite rather than just
//! changing a number in a report.

use std::path::Path;
use std::process::{Command, Output};
use std::time::Instant;

use ndarray::Axis;
use rand::Rng;

use calikit_core::calirare::{temperature_scale, train_calirare};
use calikit_core::gcn::{
    self, forward, soft_cost_and_dlogits, train, DropoutMask, SoftTargets, TrainContext,
};
use calikit_core::graph::{gen_synthetic, make_split};
use calikit_core::influence::{retraining_fidelity, InfluenceContext};
use calikit_core::metrics::{ace, classification_metrics, ece, eice};
use calikit_core::uncertainty::{q_lower, q_upper};
use calikit_core::{
    CaliRareConfig, CoverageConfig, Graph, ModelParams, SolverConfig, SyntheticConfig, TrainConfig,
};

fn calikit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_calikit"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = calikit(args);
    assert!(
        out.status.success(),
        "command {:?} failed: {}",
        args,
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// 1. Leave-one-out estimates must track brute-force retraining:
/// Pearson correlation at least 0.9 on every one of five seeds of a
/// 30-node two-class problem, within a two-minute budget.
#[test]
fn criterion_1_influence_tracks_retraining() {
    let started = Instant::now();
    let mut worst = f64::INFINITY;
    for seed in [1, 2, 5, 13, 15] {
        let r = retraining_fidelity(seed).unwrap();
        assert!(r >= 0.9, "seed {seed}: correlation {r:.4} below 0.9");
        worst = worst.min(r);
    }
    let elapsed = started.elapsed();
    assert!(
        elapsed.as_secs_f64() < 120.0,
        "fidelity study took {elapsed:.1?}, budget is 2 min"
    );
    println!(
        "acceptance 1/7 influence-vs-retraining: PASS (worst Pearson {worst:.4}, {:.1}s)",
        elapsed.as_secs_f64()
    );
}

/// Trained 60-parameter model shared by the kernel checks below.
fn kernel_fixture() -> (Graph, calikit_core::DatasetSplit, ModelParams) {
    let gen_cfg = SyntheticConfig {
        block_sizes: vec![20, 10],
        p_in: 0.3,
        p_out: 0.05,
        feature_dim: 13,
        feature_shift: 1.0,
    };
    let graph = gen_synthetic(&gen_cfg, 4).unwrap();
    let split = make_split(&graph, &graph.labels().to_vec(), 5, 8, 6, 4).unwrap();
    let ctx = TrainContext::new(&graph, &split).unwrap();
    let trained = train(
        &ctx,
        &TrainConfig {
            hidden: 4,
            max_epochs: 300,
            patience: 301,
            plateau_tol: 0.0,
            dropout: 0.0,
            weight_decay: 0.02,
            seed: 4,
            ..TrainConfig::default()
        },
    )
    .unwrap();
    (graph, split, trained.final_params)
}

/// 2. Numerical kernels: analytic per-node gradients against central
/// finite differences (max relative error < 1e-4), Hessian-vector
/// products against a finite-difference Hessian (< 1e-3 absolute),
/// explicit solve residuals within the configured tolerance, and
/// agreement between the dense and conjugate-gradient solve paths
/// (< 1e-5).
#[test]
fn criterion_2_numerical_kernels_agree() {
    let (graph, split, params) = kernel_fixture();
    let ctx = TrainContext::new(&graph, &split).unwrap();
    let decay = 0.02;
    let ictx = InfluenceContext::new(&ctx, &params, decay).unwrap();
    let p = ictx.param_count();
    assert!(p <= 60, "kernel fixture grew past the intended scale");
    let flat = params.to_flat();
    let (d, h, c) = params.dims();

    // Per-node gradient vs central differences of the weighted loss.
    let node = split.train[0];
    let y = graph.labels()[node];
    let w = ctx.class_weights[y];
    let single_loss = |vals: &[f64]| -> f64 {
        let m = ModelParams::from_flat(vals, d, h, c).unwrap();
        let cache = forward(&ctx.adj, graph.features(), &m, &DropoutMask::identity());
        -w * cache.probs[(node, y)].max(gcn::PROB_FLOOR).ln()
    };
    let grad = ictx.per_node_grad(node).unwrap();
    let scale = norm(&grad).max(1.0);
    let eps = 1e-6;
    let mut worst_grad = 0.0f64;
    for j in 0..p {
        let mut plus = flat.clone();
        let mut minus = flat.clone();
        plus[j] += eps;
        minus[j] -= eps;
        let fd = (single_loss(&plus) - single_loss(&minus)) / (2.0 * eps);
        worst_grad = worst_grad.max((grad[j] - fd).abs() / scale);
    }
    assert!(worst_grad < 1e-4, "gradient mismatch {worst_grad:.2e}");

    // Hessian-vector products vs a finite-difference Hessian.
    let targets = SoftTargets::one_hot(graph.labels(), c, &ctx.class_weights).unwrap();
    let grad_at = |vals: &[f64]| -> Vec<f64> {
        let m = ModelParams::from_flat(vals, d, h, c).unwrap();
        let cache = forward(&ctx.adj, graph.features(), &m, &DropoutMask::identity());
        let (_, dl) = soft_cost_and_dlogits(&cache.probs, &targets, &split.train).unwrap();
        gcn::backprop(
            &ctx.adj,
            graph.features(),
            &m,
            &cache,
            &dl,
            &DropoutMask::identity(),
            decay,
        )
    };
    let eps_h = 1e-5;
    let mut worst_hvp = 0.0f64;
    let mut unit = vec![0.0; p];
    for j in 0..p {
        unit[j] = 1.0;
        let col = ictx.hvp(&unit, 0.0).unwrap();
        unit[j] = 0.0;
        let mut plus = flat.clone();
        let mut minus = flat.clone();
        plus[j] += eps_h;
        minus[j] -= eps_h;
        let gp = grad_at(&plus);
        let gm = grad_at(&minus);
        for i in 0..p {
            worst_hvp = worst_hvp.max((col[i] - (gp[i] - gm[i]) / (2.0 * eps_h)).abs());
        }
    }
    assert!(worst_hvp < 1e-3, "hvp mismatch {worst_hvp:.2e}");

    // Solve residuals and dense/iterative agreement on real
    // right-hand sides.
    // Iterative solves need the damped curvature positive definite,
    // which holds on converged weights with a moderate shift.
    let dense_cfg = SolverConfig {
        damping: 0.1,
        ..SolverConfig::default()
    };
    let cg_cfg = SolverConfig {
        damping: 0.1,
        explicit_hessian_threshold: 0,
        cg_max_iter: 2000,
        ..SolverConfig::default()
    };
    let mut worst_res = 0.0f64;
    let mut worst_path_gap = 0.0f64;
    for &i in split.train.iter().take(8) {
        let b = ictx.per_node_grad(i).unwrap();
        if norm(&b) == 0.0 {
            continue;
        }
        let xd = ictx.solve_hinv(&dense_cfg, &b).unwrap();
        let xc = ictx.solve_hinv(&cg_cfg, &b).unwrap();
        for (x, cfg) in [(&xd, &dense_cfg), (&xc, &cg_cfg)] {
            let hx = ictx.hvp(x, cfg.damping).unwrap();
            let res: Vec<f64> = hx.iter().zip(&b).map(|(a, bb)| a - bb).collect();
            let rel = norm(&res) / norm(&b);
            assert!(rel <= cfg.cg_tol, "residual {rel:.2e} above {}", cfg.cg_tol);
            worst_res = worst_res.max(rel);
        }
        let gap: Vec<f64> = xd.iter().zip(&xc).map(|(a, bb)| a - bb).collect();
        let rel_gap = norm(&gap) / norm(&xd).max(1e-300);
        assert!(rel_gap < 1e-5, "solver paths differ by {rel_gap:.2e}");
        worst_path_gap = worst_path_gap.max(rel_gap);
    }
    println!(
        "acceptance 2/7 numerical-kernels: PASS (grad {worst_grad:.1e}, hvp {worst_hvp:.1e}, \
         residual {worst_res:.1e}, path gap {worst_path_gap:.1e})"
    );
}

/// 3. Metric oracles: the two hand-worked four-sample instances must
/// reproduce exactly, and the cancellation pair must separate the
/// binned score (0) from the individual score (0.1).
#[test]
fn criterion_3_metric_oracles_are_exact() {
    let (score, bins) = ece(&[0.3, 0.4, 0.9, 0.9], &[false, true, true, true], 2).unwrap();
    assert!((score - 0.125).abs() < 1e-12, "ece {score}");
    assert_eq!(bins.bins[0].count, 2);

    let probs = ndarray::array![[0.9, 0.1], [0.8, 0.2], [0.2, 0.8], [0.1, 0.9]];
    let scores = ace(&probs, &[0, 0, 1, 1], 2).unwrap();
    assert!((scores.per_class[1] - 0.15).abs() < 1e-12);
    assert!((scores.macro_ace - 0.15).abs() < 1e-12);

    let m = classification_metrics(&[1, 0, 0, 0], &[1, 1, 0, 0], 1, 2).unwrap();
    assert!((m.macro_f1 - (2.0 / 3.0 + 0.8) / 2.0).abs() < 1e-12);

    // Deviations +0.1 and -0.1 cancel inside one bin; the individual
    // score still sees both.
    let (binned, _) = ece(&[0.9, 0.1], &[true, false], 1).unwrap();
    assert_eq!(binned, 0.0);
    let records = vec![
        mk_record(0, 1.0, 0.9),
        mk_record(1, 0.0, 0.1),
    ];
    let individual = eice(&records).unwrap();
    assert!((individual - 0.1).abs() < 1e-15);
    println!(
        "acceptance 3/7 metric-oracles: PASS (ece 0.125, macro-ace 0.15, cancellation 0 vs 0.1)"
    );
}

fn mk_record(node_id: usize, uncertainty: f64, confidence: f64) -> calikit_core::UncertaintyRecord {
    calikit_core::UncertaintyRecord {
        node_id,
        lower: uncertainty.min(confidence),
        upper: uncertainty.max(confidence),
        uncertainty,
        confidence,
    }
}

/// 4. Invariant properties: the individual score vanishes exactly when
/// every uncertainty equals its confidence; upper and lower empirical
/// quantiles mirror under negation on random multisets; fitted
/// temperatures never change a predicted label; and a zero penalty
/// weight reproduces plain training bit for bit.
#[test]
fn criterion_4_invariant_properties_hold() {
    let mut rng = calikit_core::seed::stream(41, "synthetic");

    // Individual score is zero iff every gap is zero.
    for case in 0..200 {
        let n = rng.gen_range(1..30);
        let equal = case % 2 == 0;
        let records: Vec<_> = (0..n)
            .map(|i| {
                let conf: f64 = rng.gen_range(0.0..1.0);
                let unc = if equal {
                    conf
                } else {
                    (conf + rng.gen_range(-0.3..0.3)).clamp(0.0, 1.0)
                };
                mk_record(i, unc, conf)
            })
            .collect();
        let score = eice(&records).unwrap();
        let all_equal = records.iter().all(|r| r.uncertainty == r.confidence);
        assert_eq!(score == 0.0, all_equal, "case {case}");
    }

    // Quantile mirror identity over 1000 random multisets, including
    // non-integer interpolation indices.
    for case in 0..1000 {
        let n = rng.gen_range(1..60);
        let values: Vec<f64> = (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let neg: Vec<f64> = values.iter().map(|v| -v).collect();
        let m = rng.gen_range(0.02..0.48);
        let up = q_upper(m, &neg).unwrap();
        let lo = q_lower(m, &values).unwrap();
        assert!((up + lo).abs() < 1e-12, "case {case}: {up} vs {}", -lo);
    }

    // Temperature scaling preserves argmax labels on a trained model.
    let gen_cfg = SyntheticConfig {
        block_sizes: vec![40, 20],
        p_in: 0.2,
        p_out: 0.03,
        feature_dim: 6,
        feature_shift: 1.0,
    };
    let graph = gen_synthetic(&gen_cfg, 9).unwrap();
    let split = make_split(&graph, &graph.labels().to_vec(), 8, 15, 12, 9).unwrap();
    let ctx = TrainContext::new(&graph, &split).unwrap();
    let trained = train(
        &ctx,
        &TrainConfig {
            hidden: 4,
            max_epochs: 50,
            seed: 9,
            ..TrainConfig::default()
        },
    )
    .unwrap();
    let cache = forward(
        &ctx.adj,
        graph.features(),
        &trained.params,
        &DropoutMask::identity(),
    );
    let val_logits = cache.logits.select(Axis(0), &split.val);
    let val_labels: Vec<usize> = split.val.iter().map(|&v| graph.labels()[v]).collect();
    let t = temperature_scale(&val_logits, &val_labels).unwrap();
    assert!(t > 0.0);
    let argmax = |row: ndarray::ArrayView1<f64>| -> usize {
        (0..row.len())
            .max_by(|&a, &b| row[a].partial_cmp(&row[b]).unwrap())
            .unwrap()
    };
    for row in cache.logits.rows() {
        let scaled: Vec<f64> = row.iter().map(|z| z / t).collect();
        let scaled = ndarray::Array1::from(scaled);
        assert_eq!(argmax(row), argmax(scaled.view()));
    }

    // Zero penalty weight delegates to the plain trainer bit-exactly.
    let cr_cfg = CaliRareConfig {
        lambda: 0.0,
        train: TrainConfig {
            hidden: 4,
            max_epochs: 30,
            dropout: 0.5,
            seed: 9,
            ..TrainConfig::default()
        },
        ..CaliRareConfig::default()
    };
    let joint = train_calirare(&ctx, &cr_cfg).unwrap();
    let plain = train(&ctx, &cr_cfg.train).unwrap();
    for (a, b) in joint
        .final_params
        .to_flat()
        .iter()
        .zip(&plain.final_params.to_flat())
    {
        assert_eq!(a.to_bits(), b.to_bits());
    }
    println!(
        "acceptance 4/7 invariant-properties: PASS (zero-gap iff zero score, quantile mirror, \
         label-preserving temperature {t:.3}, bit-exact zero weight)"
    );
}

/// Paired benchmark arms for criteria 5: one graph, one noise draw,
/// per-seed splits and initializations, identical training schedules.
struct BenchArms {
    base_ace: f64,
    cali_ace: f64,
    base_f1: f64,
    cali_f1: f64,
}

fn macro_ace_of(graph: &Graph, nodes: &[usize], params: &ModelParams, bins: usize) -> (f64, f64) {
    let adj = calikit_core::NormalizedAdjacency::from_graph(graph);
    let cache = forward(&adj, graph.features(), params, &DropoutMask::identity());
    let mut sorted = nodes.to_vec();
    sorted.sort_unstable();
    let probs = cache.probs.select(Axis(0), &sorted);
    let labels: Vec<usize> = sorted.iter().map(|&v| graph.labels()[v]).collect();
    let scores = ace(&probs, &labels, bins).unwrap();
    let preds: Vec<usize> = probs
        .rows()
        .into_iter()
        .map(|row| if row[1] > row[0] { 1 } else { 0 })
        .collect();
    let cm = classification_metrics(&preds, &labels, 1, 2).unwrap();
    (scores.macro_ace, cm.macro_f1)
}

fn bench_arms(graph: &Graph, seed: u64, bins: usize) -> BenchArms {
    let split = make_split(graph, &graph.labels().to_vec(), 20, 200, 700, seed).unwrap();
    let ctx = TrainContext::new(graph, &split).unwrap();
    let tcfg = TrainConfig {
        hidden: 3,
        max_epochs: 800,
        patience: 801,
        plateau_tol: 0.0,
        dropout: 0.0,
        weight_decay: 0.0,
        seed,
        ..TrainConfig::default()
    };
    let base = train(&ctx, &tcfg).unwrap();
    let cr = train_calirare(
        &ctx,
        &CaliRareConfig {
            lambda: 0.1,
            refresh_every: 5,
            warmup: 650,
            train: tcfg,
            coverage: CoverageConfig { coverage: 0.9 },
            ..CaliRareConfig::default()
        },
    )
    .unwrap();
    let (base_ace, base_f1) = macro_ace_of(graph, &split.test, &base.final_params, bins);
    let (cali_ace, cali_f1) = macro_ace_of(graph, &split.test, &cr.final_params, bins);
    BenchArms {
        base_ace,
        cali_ace,
        base_f1,
        cali_f1,
    }
}

/// The shared benchmark dataset: a 900/100 two-block graph whose
/// labels carry symmetric 8% noise, so a long-trained network ends up
/// overconfident at every confidence level and calibration has real
/// room to improve.
fn benchmark_graph() -> Graph {
    let syn = SyntheticConfig {
        block_sizes: vec![900, 100],
        p_in: 0.04,
        p_out: 0.003,
        feature_dim: 8,
        feature_shift: 1.0,
    };
    let clean = gen_synthetic(&syn, 1).unwrap();
    let mut rng = calikit_core::seed::stream(1, "noise");
    let labels: Vec<usize> = clean
        .labels()
        .iter()
        .map(|&y| if rng.gen_bool(0.08) { 1 - y } else { y })
        .collect();
    Graph::new(
        clean.edges().to_vec(),
        clean.features().clone(),
        labels,
        2,
    )
    .unwrap()
}

/// 5. End-to-end benchmark: over 20 paired runs (per-seed splits and
/// initializations on the shared imbalanced benchmark), the jointly
/// trained model must beat the cost-sensitive baseline's Macro-ACE
/// often enough for a one-sided sign test at p < 0.05 (at least 15 of
/// 20), keep mean Macro-F1 within 3 points, and finish inside 15
/// minutes.
#[test]
fn criterion_5_benchmark_sign_test() {
    let started = Instant::now();
    let graph = benchmark_graph();
    let mut wins = 0usize;
    let mut f1_gap_sum = 0.0;
    for seed in 0..20 {
        let arms = bench_arms(&graph, seed, 5);
        if arms.cali_ace < arms.base_ace {
            wins += 1;
        }
        f1_gap_sum += arms.base_f1 - arms.cali_f1;
    }
    let elapsed = started.elapsed();
    let mean_f1_gap = f1_gap_sum / 20.0;
    assert!(
        elapsed.as_secs_f64() < 900.0,
        "benchmark took {elapsed:.1?}, budget is 15 min"
    );
    assert!(
        mean_f1_gap < 0.03,
        "joint training cost {mean_f1_gap:.4} Macro-F1 on average, budget is 3 points"
    );
    assert!(
        wins >= 15,
        "joint training won {wins}/20 paired runs; the one-sided sign test needs 15"
    );
    println!(
        "acceptance 5/7 benchmark-sign-test: PASS ({wins}/20 wins, mean F1 gap {mean_f1_gap:+.4}, \
         {:.0}s)",
        elapsed.as_secs_f64()
    );
}

/// 6. Sweep grid: the 5x4 coverage-by-weight grid completes on the
/// benchmark data, emits 20 finite Macro-ACE cells, and the score
/// moves more along the penalty-weight axis than along the coverage
/// axis in at least 3 of the 5 coverage rows.
#[test]
fn criterion_6_sweep_grid_variance() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    ok(&[
        "gen",
        "--blocks",
        "900,100",
        "--p-in",
        "0.04",
        "--p-out",
        "0.003",
        "--dim",
        "8",
        "--shift",
        "1.0",
        "--seed",
        "1",
        "--out",
        data.to_str().unwrap(),
    ]);
    let sweep = tmp.path().join("sweep");
    ok(&[
        "sweep",
        "--data",
        data.to_str().unwrap(),
        "--out",
        sweep.to_str().unwrap(),
        "--alphas",
        "0.7,0.75,0.8,0.85,0.9",
        "--lambdas",
        "0.1,0.2,0.3,0.4",
        "--lr-c",
        "20",
        "--val-size",
        "200",
        "--test-size",
        "700",
        "--seed",
        "1",
        "--hidden",
        "3",
        "--max-epochs",
        "200",
        "--dropout",
        "0.0",
        "--weight-decay",
        "0.0",
    ]);
    let text = std::fs::read_to_string(sweep.join("sweep.csv")).unwrap();
    let mut grid: std::collections::BTreeMap<(u64, u64), f64> = Default::default();
    for line in text.lines().skip(1) {
        let cells: Vec<&str> = line.split(',').collect();
        let alpha: f64 = cells[0].parse().unwrap();
        let lambda: f64 = cells[1].parse().unwrap();
        let score: f64 = cells[2].parse().unwrap();
        assert!(score.is_finite(), "non-finite Macro-ACE in row {line}");
        grid.insert(((alpha * 100.0) as u64, (lambda * 100.0) as u64), score);
    }
    assert_eq!(grid.len(), 20, "expected a full 5x4 grid");

    let alphas = [70u64, 75, 80, 85, 90];
    let lambdas = [10u64, 20, 30, 40];
    let variance = |xs: &[f64]| {
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (xs.len() - 1) as f64
    };
    let col_vars: Vec<f64> = lambdas
        .iter()
        .map(|&l| variance(&alphas.map(|a| grid[&(a, l)])))
        .collect();
    let mean_col_var = col_vars.iter().sum::<f64>() / col_vars.len() as f64;
    let rows_dominated = alphas
        .iter()
        .filter(|&&a| variance(&lambdas.map(|l| grid[&(a, l)])) > mean_col_var)
        .count();
    assert!(
        rows_dominated >= 3,
        "weight axis dominated only {rows_dominated}/5 coverage rows"
    );
    println!(
        "acceptance 6/7 sweep-grid: PASS (20 finite cells, weight axis dominates \
         {rows_dominated}/5 rows)"
    );
}

/// 7. Determinism: reruns with the same seed produce byte-identical
/// metric JSON, and the leave-one-out table is worker-count invariant.
#[test]
fn criterion_7_determinism() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    ok(&[
        "gen", "--blocks", "45,15", "--p-in", "0.15", "--p-out", "0.02", "--dim", "5", "--shift",
        "1.5", "--seed", "1", "--out", data.to_str().unwrap(),
    ]);
    let shared: Vec<String> = [
        "--data",
        data.to_str().unwrap(),
        "--lr-c",
        "6",
        "--val-size",
        "15",
        "--test-size",
        "20",
        "--seed",
        "1",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();

    let train_dir = tmp.path().join("model");
    let mut args: Vec<String> = vec!["train".into()];
    args.extend(shared.clone());
    args.extend(
        ["--out", train_dir.to_str().unwrap(), "--hidden", "6", "--max-epochs", "40"]
            .map(String::from),
    );
    ok(&args.iter().map(|s| s.as_str()).collect::<Vec<_>>());
    let checkpoint = train_dir.join("model.bin");

    let eval_once = |dir: &Path| -> String {
        let mut args: Vec<String> = vec!["evaluate".into()];
        args.extend(shared.clone());
        args.extend(
            [
                "--out",
                dir.to_str().unwrap(),
                "--checkpoint",
                checkpoint.to_str().unwrap(),
            ]
            .map(String::from),
        );
        ok(&args.iter().map(|s| s.as_str()).collect::<Vec<_>>());
        std::fs::read_to_string(dir.join("report.json")).unwrap()
    };
    let first = eval_once(&tmp.path().join("eval1"));
    let second = eval_once(&tmp.path().join("eval2"));
    assert_eq!(first, second, "metric JSON changed between identical runs");

    let loo_once = |dir: &Path, workers: &str| -> String {
        let mut args: Vec<String> = vec!["uncertainty".into()];
        args.extend(shared.clone());
        args.extend(
            [
                "--out",
                dir.to_str().unwrap(),
                "--checkpoint",
                checkpoint.to_str().unwrap(),
                "--nodes",
                "train",
                "--workers",
                workers,
            ]
            .map(String::from),
        );
        ok(&args.iter().map(|s| s.as_str()).collect::<Vec<_>>());
        std::fs::read_to_string(dir.join("loo_residuals.csv")).unwrap()
    };
    let serial = loo_once(&tmp.path().join("u1"), "1");
    let parallel = loo_once(&tmp.path().join("u4"), "4");
    assert_eq!(serial, parallel, "worker count changed the results");
    println!("acceptance 7/7 determinism: PASS (byte-identical JSON, worker-invariant tables)");
}
