use std::time::Instant;

use rand::Rng;

use calikit_core::calirare::{eice_regularizer, train_calirare};
use calikit_core::gcn::{forward, train, DropoutMask, TrainContext};
use calikit_core::graph::{gen_synthetic, make_split, NormalizedAdjacency};
use calikit_core::metrics::{ace, classification_metrics, ece};
use calikit_core::{
    CaliRareConfig, CoverageConfig, Graph, ModelParams, SolverConfig, SyntheticConfig, TrainConfig,
};
use ndarray::Axis;

fn ace_pair(graph: &Graph, nodes: &[usize], params: &ModelParams, bins: usize) -> (f64, Vec<f64>) {
    let adj = NormalizedAdjacency::from_graph(graph);
    let cache = forward(&adj, graph.features(), params, &DropoutMask::identity());
    let mut sorted = nodes.to_vec();
    sorted.sort_unstable();
    let probs = cache.probs.select(Axis(0), &sorted);
    let labels: Vec<usize> = sorted.iter().map(|&v| graph.labels()[v]).collect();
    let scores = ace(&probs, &labels, bins).unwrap();
    (scores.macro_ace, scores.per_class)
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let p_in: f64 = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(0.05);
    let p_out: f64 = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(0.005);
    let shift: f64 = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(1.0);
    let bins: usize = args.get(4).map(|s| s.parse().unwrap()).unwrap_or(10);
    let max_epochs: usize = args.get(5).map(|s| s.parse().unwrap()).unwrap_or(150);
    let n_seeds: u64 = args.get(6).map(|s| s.parse().unwrap()).unwrap_or(20);
    let dropout: f64 = args.get(7).map(|s| s.parse().unwrap()).unwrap_or(0.5);
    let dim: usize = args.get(8).map(|s| s.parse().unwrap()).unwrap_or(8);
    let wd: f64 = args.get(9).map(|s| s.parse().unwrap()).unwrap_or(5e-4);
    let lambda: f64 = args.get(10).map(|s| s.parse().unwrap()).unwrap_or(0.1);
    let refresh: usize = args.get(11).map(|s| s.parse().unwrap()).unwrap_or(10);
    let test_size: usize = args.get(12).map(|s| s.parse().unwrap()).unwrap_or(600);
    let flip: f64 = args.get(13).map(|s| s.parse().unwrap()).unwrap_or(0.0);
    let hidden: usize = args.get(14).map(|s| s.parse().unwrap()).unwrap_or(8);
    let label_rate: usize = args.get(15).map(|s| s.parse().unwrap()).unwrap_or(20);
    let use_final: usize = args.get(16).map(|s| s.parse().unwrap()).unwrap_or(0);
    let graph_seed: i64 = args.get(17).map(|s| s.parse().unwrap()).unwrap_or(-1);
    let warmup: usize = args.get(18).map(|s| s.parse().unwrap()).unwrap_or(0);
    let split_seed: i64 = args.get(19).map(|s| s.parse().unwrap()).unwrap_or(-1);
    let seed_base: u64 = args.get(21).map(|s| s.parse().unwrap()).unwrap_or(0);
    let lr: f64 = args.get(22).map(|s| s.parse().unwrap()).unwrap_or(0.01);
    let blocks: Vec<usize> = args
        .get(20)
        .map(|s| s.split(',').map(|x| x.parse().unwrap()).collect())
        .unwrap_or_else(|| vec![900, 100]);

    let syn = SyntheticConfig {
        block_sizes: blocks,
        p_in,
        p_out,
        feature_dim: dim,
        feature_shift: shift,
    };
    let mut wins = 0usize;
    let mut ties = 0usize;
    let mut deltas: Vec<f64> = Vec::new();
    let t0 = Instant::now();
    for seed in seed_base..seed_base + n_seeds {
        let gseed = if graph_seed >= 0 { graph_seed as u64 } else { seed };
        let raw = gen_synthetic(&syn, gseed).unwrap();
        let minority = raw.minority_class();
        let sseed = if split_seed >= 0 { split_seed as u64 } else { seed };
        let split = make_split(&raw, raw.labels(), label_rate, 200, test_size, sseed).unwrap();
        let binary = raw.binarize(minority).unwrap();
        let graph = if flip > 0.0 {
            let mut rng = calikit_core::seed::stream(gseed, "noise");
            let labels: Vec<usize> = binary
                .labels()
                .iter()
                .map(|&y| if rng.gen_bool(flip) { 1 - y } else { y })
                .collect();
            Graph::new(binary.edges().to_vec(), binary.features().clone(), labels, 2).unwrap()
        } else {
            binary
        };
        let ctx = TrainContext::new(&graph, &split).unwrap();
        let tcfg = TrainConfig {
            hidden,
            max_epochs,
            patience: max_epochs + 1,
            plateau_tol: 0.0,
            learning_rate: lr,
            dropout,
            weight_decay: wd,
            seed,
            ..TrainConfig::default()
        };
        let t1 = Instant::now();
        let base = train(&ctx, &tcfg).unwrap();
        let cr_cfg = CaliRareConfig {
            lambda,
            refresh_every: refresh,
            warmup,
            train: tcfg.clone(),
            coverage: CoverageConfig { coverage: 0.9 },
            ..CaliRareConfig::default()
        };
        let cr = train_calirare(&ctx, &cr_cfg).unwrap();
        let bp = if use_final == 1 { &base.final_params } else { &base.params };
        let cp = if use_final == 1 { &cr.final_params } else { &cr.params };
        let adj = NormalizedAdjacency::from_graph(&graph);
        let cache = forward(&adj, graph.features(), bp, &DropoutMask::identity());
        let mut test = split.test.clone();
        test.sort_unstable();
        let preds: Vec<usize> = test
            .iter()
            .map(|&v| {
                let row = cache.probs.row(v);
                (0..row.len()).max_by(|&a, &b| row[a].partial_cmp(&row[b]).unwrap()).unwrap()
            })
            .collect();
        let truth: Vec<usize> = test.iter().map(|&v| graph.labels()[v]).collect();
        let cm = classification_metrics(&preds, &truth, 1, 2).unwrap();
        let conf_acc = |params: &ModelParams| {
            let cache = forward(&adj, graph.features(), params, &DropoutMask::identity());
            let (conf, correct): (Vec<f64>, Vec<bool>) = test
                .iter()
                .map(|&v| {
                    let row = cache.probs.row(v);
                    let k = (0..row.len())
                        .max_by(|&a, &b| row[a].partial_cmp(&row[b]).unwrap())
                        .unwrap();
                    (row[k], k == graph.labels()[v])
                })
                .unzip();
            let mean_conf = conf.iter().sum::<f64>() / conf.len() as f64;
            let acc = correct.iter().filter(|&&c| c).count() as f64 / correct.len() as f64;
            let (e, _) = ece(&conf, &correct, bins).unwrap();
            (mean_conf, acc, e)
        };
        let (bc, ba, be) = conf_acc(bp);
        let (cc, ca, ce2) = conf_acc(cp);
        println!(
            "   base conf {bc:.3} acc {ba:.3} ece {be:.4} | cr conf {cc:.3} acc {ca:.3} ece {ce2:.4}"
        );
        let reg = eice_regularizer(
            &ctx,
            bp,
            tcfg.weight_decay,
            &SolverConfig::default(),
            &CoverageConfig { coverage: 0.9 },
        )
        .unwrap();
        let gaps: Vec<f64> = reg
            .records
            .iter()
            .map(|r| r.uncertainty - r.confidence)
            .collect();
        let mean_gap = gaps.iter().sum::<f64>() / gaps.len() as f64;
        let neg = gaps.iter().filter(|g| **g < 0.0).count();
        println!(
            "   base eice {:.4} mean(uncer-conf) {:+.4} ({} of {} below conf)",
            reg.eice,
            mean_gap,
            neg,
            gaps.len()
        );
        let (base_ace, base_pc) = ace_pair(&graph, &split.test, bp, bins);
        let (cr_ace, cr_pc) = ace_pair(&graph, &split.test, cp, bins);
        println!(
            "   ace base [{:.4} {:.4}] cr [{:.4} {:.4}]",
            base_pc[0], base_pc[1], cr_pc[0], cr_pc[1]
        );
        if cr_ace < base_ace {
            wins += 1;
        } else if cr_ace == base_ace {
            ties += 1;
        }
        deltas.push(cr_ace - base_ace);
        println!(
            "seed {seed:2}  base {base_ace:.4}  calirare {cr_ace:.4}  {}  acc {:.3} f1 {:.3} rec {:.3}  ({:.1?}, stops {}/{})",
            if cr_ace < base_ace { "WIN" } else { "loss" },
            cm.accuracy,
            cm.macro_f1,
            cm.recall,
            t1.elapsed(),
            base.stopped_epoch,
            cr.stopped_epoch,
        );
    }
    println!(
        "wins {wins}/{n_seeds} (ties {ties})  total {:.1?}",
        t0.elapsed()
    );    let n = deltas.len() as f64;
    let mean = deltas.iter().sum::<f64>() / n;
    let var = deltas.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let sd = var.sqrt();
    println!("delta mean {:+.5} sd {:.5} t {:+.2}", mean, sd, mean / (sd / n.sqrt()));
}
