//! Shared fixtures for the criterion benchmarks.

use calikit_core::gcn::{train, TrainContext};
use calikit_core::graph::{gen_synthetic, make_split};
use calikit_core::{DatasetSplit, Graph, ModelParams, SyntheticConfig, TrainConfig};

/// A mid-size two-block dataset: large enough that the sparse kernels
/// dominate, small enough that leave-one-out sweeps stay in the
/// millisecond range.
pub fn fixture() -> (Graph, DatasetSplit) {
    let cfg = SyntheticConfig {
        block_sizes: vec![240, 60],
        p_in: 0.05,
        p_out: 0.005,
        feature_dim: 16,
        feature_shift: 1.5,
    };
    let graph = gen_synthetic(&cfg, 3).expect("synthetic graph");
    let split = make_split(&graph, graph.labels(), 10, 60, 100, 3).expect("split");
    (graph, split)
}

pub fn bench_train_config() -> TrainConfig {
    TrainConfig {
        hidden: 8,
        max_epochs: 40,
        patience: 40,
        plateau_tol: 0.0,
        ..TrainConfig::default()
    }
}

pub fn trained(graph: &Graph, split: &DatasetSplit) -> ModelParams {
    let ctx = TrainContext::new(graph, split).expect("train context");
    train(&ctx, &bench_train_config()).expect("training run").final_params
}
