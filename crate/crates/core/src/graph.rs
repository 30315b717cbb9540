//! Graph datasets: construction, file formats, normalization, splits.
//!
//! A [`Graph`] is an undirected simple graph with dense per-node
//! features and integer class labels. On-disk form is three text
//! files: an edge list (`u v` per line, `#` comments), a headerless
//! feature CSV (row i is node i), and a label file (one class index
//! per line). Loading row-normalizes features to unit L1 norm.
//!
//! [`NormalizedAdjacency`] stores the symmetric renormalized operator
//! used by the model: `D^{-1/2} (A + I) D^{-1/2}` in compressed sparse
//! row form, where `D` is the degree matrix of `A + I`.
//!
//! [`DatasetSplit`] draws a fixed number of training nodes per
//! original class, then validation and test nodes uniformly from the
//! remainder. [`Graph::binarize`] collapses labels to minority = 1
//! versus rest = 0 for rare-category experiments.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::seed;

pub type NodeId = usize;

/// Undirected simple graph with features and labels.
///
/// Invariants, enforced at construction: edges are stored once as
/// `(u, v)` with `u < v`, sorted and deduplicated; endpoints are in
/// bounds; there are no self-loops; `features` has one row per node;
/// every label is below `class_count`; `class_count >= 2`. Classes
/// with no member are permitted (split construction rejects them).
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    num_nodes: usize,
    edges: Vec<(NodeId, NodeId)>,
    features: Array2<f64>,
    labels: Vec<usize>,
    class_count: usize,
}

impl Graph {
    pub fn new(
        edges: Vec<(NodeId, NodeId)>,
        features: Array2<f64>,
        labels: Vec<usize>,
        class_count: usize,
    ) -> Result<Self> {
        let num_nodes = features.nrows();
        if labels.len() != num_nodes {
            return Err(Error::Shape(format!(
                "{} feature rows but {} labels",
                num_nodes,
                labels.len()
            )));
        }
        if class_count < 2 {
            return Err(Error::Domain(format!(
                "class_count must be at least 2, got {class_count}"
            )));
        }
        if let Some((i, &l)) = labels.iter().enumerate().find(|(_, &l)| l >= class_count) {
            return Err(Error::Domain(format!(
                "label {l} of node {i} is outside [0, {class_count})"
            )));
        }
        let mut canonical = BTreeSet::new();
        for &(u, v) in &edges {
            if u >= num_nodes || v >= num_nodes {
                return Err(Error::Bounds(format!(
                    "edge ({u}, {v}) exceeds node count {num_nodes}"
                )));
            }
            if u == v {
                return Err(Error::Domain(format!("self-loop at node {u}")));
            }
            canonical.insert((u.min(v), u.max(v)));
        }
        Ok(Graph {
            num_nodes,
            edges: canonical.into_iter().collect(),
            features,
            labels,
            class_count,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    /// Canonical edge list: `u < v`, ascending, deduplicated.
    pub fn edges(&self) -> &[(NodeId, NodeId)] {
        &self.edges
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn feature_dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    /// Number of nodes carrying each label.
    pub fn class_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0usize; self.class_count];
        for &l in &self.labels {
            sizes[l] += 1;
        }
        sizes
    }

    /// The class with the fewest members; ties pick the lowest index.
    pub fn minority_class(&self) -> usize {
        let sizes = self.class_sizes();
        let mut best = 0;
        for (c, &s) in sizes.iter().enumerate() {
            if s < sizes[best] {
                best = c;
            }
        }
        best
    }

    /// Collapse labels to a binary problem: `minority` maps to 1,
    /// every other class to 0. Structure and features are unchanged.
    pub fn binarize(&self, minority: usize) -> Result<Graph> {
        if minority >= self.class_count {
            return Err(Error::Domain(format!(
                "minority class {minority} is outside [0, {})",
                self.class_count
            )));
        }
        Ok(Graph {
            num_nodes: self.num_nodes,
            edges: self.edges.clone(),
            features: self.features.clone(),
            labels: self
                .labels
                .iter()
                .map(|&l| usize::from(l == minority))
                .collect(),
            class_count: 2,
        })
    }
}

/// Shortest decimal form that parses back to the identical f64.
fn fmt_f64(x: f64) -> String {
    let mut s = String::new();
    write!(s, "{x}").expect("formatting f64 cannot fail");
    s
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text.lines().map(str::to_owned).collect())
}

/// Load a dataset from `edges`, `features`, and `labels` files.
///
/// The number of nodes is the feature row count; the label file must
/// match it and the number of classes is the largest label plus one.
/// Feature rows are scaled to unit L1 norm (all-zero rows are kept
/// as-is). Malformed content reports the offending line.
pub fn load_graph(edge_path: &Path, feature_path: &Path, label_path: &Path) -> Result<Graph> {
    let mut features: Vec<Vec<f64>> = Vec::new();
    for (idx, line) in read_lines(feature_path)?.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row: Vec<f64> = line
            .split(',')
            .map(|cell| {
                cell.trim().parse::<f64>().map_err(|_| {
                    Error::parse(feature_path, idx + 1, format!("bad feature value {cell:?}"))
                })
            })
            .collect::<Result<_>>()?;
        if let Some(first) = features.first() {
            if row.len() != first.len() {
                return Err(Error::parse(
                    feature_path,
                    idx + 1,
                    format!("expected {} columns, found {}", first.len(), row.len()),
                ));
            }
        }
        features.push(row);
    }
    if features.is_empty() {
        return Err(Error::parse(feature_path, 1, "empty feature file"));
    }
    let n = features.len();
    let d = features[0].len();
    let mut mat = Array2::zeros((n, d));
    for (i, row) in features.iter().enumerate() {
        let norm: f64 = row.iter().map(|x| x.abs()).sum();
        for (j, &x) in row.iter().enumerate() {
            mat[(i, j)] = if norm > 0.0 { x / norm } else { x };
        }
    }

    let mut labels = Vec::with_capacity(n);
    for (idx, line) in read_lines(label_path)?.iter().enumerate() {
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        let l: usize = t
            .parse()
            .map_err(|_| Error::parse(label_path, idx + 1, format!("bad label {t:?}")))?;
        labels.push(l);
    }
    if labels.len() != n {
        return Err(Error::Shape(format!(
            "{} labels for {} nodes",
            labels.len(),
            n
        )));
    }
    let class_count = labels.iter().max().copied().unwrap_or(0) + 1;

    let mut edges = Vec::new();
    for (idx, line) in read_lines(edge_path)?.iter().enumerate() {
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let mut parts = t.split_whitespace();
        let (u, v) = match (parts.next(), parts.next(), parts.next()) {
            (Some(a), Some(b), None) => (a, b),
            _ => {
                return Err(Error::parse(
                    edge_path,
                    idx + 1,
                    "expected exactly two node ids",
                ))
            }
        };
        let parse_id = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| Error::parse(edge_path, idx + 1, format!("bad node id {s:?}")))
        };
        let (u, v) = (parse_id(u)?, parse_id(v)?);
        if u == v {
            return Err(Error::parse(edge_path, idx + 1, format!("self-loop at {u}")));
        }
        if u >= n || v >= n {
            return Err(Error::parse(
                edge_path,
                idx + 1,
                format!("edge ({u}, {v}) exceeds node count {n}"),
            ));
        }
        edges.push((u, v));
    }

    Graph::new(edges, mat, labels, class_count.max(2)).and_then(|g| {
        if class_count < 2 {
            Err(Error::Domain(
                "label file contains a single class; at least 2 are required".into(),
            ))
        } else {
            Ok(g)
        }
    })
}

/// Write the three dataset files in canonical form.
///
/// Edges are emitted ascending with `u < v`; feature values use the
/// shortest representation that round-trips, so `load_graph` after
/// `save_graph` reproduces the graph bit-for-bit whenever the feature
/// rows are already exactly L1-normalized (or all-zero).
pub fn save_graph(
    g: &Graph,
    edge_path: &Path,
    feature_path: &Path,
    label_path: &Path,
) -> Result<()> {
    let mut edges = String::new();
    for &(u, v) in &g.edges {
        writeln!(edges, "{u} {v}").expect("string write");
    }
    std::fs::write(edge_path, edges).map_err(|e| Error::io(edge_path, e))?;

    let mut feats = String::new();
    for row in g.features.rows() {
        let cells: Vec<String> = row.iter().map(|&x| fmt_f64(x)).collect();
        writeln!(feats, "{}", cells.join(",")).expect("string write");
    }
    std::fs::write(feature_path, feats).map_err(|e| Error::io(feature_path, e))?;

    let mut labels = String::new();
    for &l in &g.labels {
        writeln!(labels, "{l}").expect("string write");
    }
    std::fs::write(label_path, labels).map_err(|e| Error::io(label_path, e))?;
    Ok(())
}

/// Symmetric renormalized adjacency in CSR form.
///
/// Entry `(u, v)` is `1 / sqrt(d_u d_v)` for an edge and `1 / d_u` on
/// the diagonal, with `d` the degree after adding self-connections.
/// Rows hold ascending column indices; the matrix is symmetric by
/// construction. An isolated node keeps a diagonal entry of exactly 1.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedAdjacency {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl NormalizedAdjacency {
    pub fn from_graph(g: &Graph) -> Self {
        let n = g.num_nodes;
        let mut neighbors: Vec<Vec<usize>> = vec![Vec::new(); n];
        for &(u, v) in &g.edges {
            neighbors[u].push(v);
            neighbors[v].push(u);
        }
        let degree: Vec<f64> = neighbors.iter().map(|adj| (adj.len() + 1) as f64).collect();

        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for u in 0..n {
            let mut row: Vec<usize> = neighbors[u].clone();
            row.push(u);
            row.sort_unstable();
            for &v in &row {
                col_idx.push(v);
                values.push(if u == v {
                    1.0 / degree[u]
                } else {
                    1.0 / (degree[u] * degree[v]).sqrt()
                });
            }
            row_ptr.push(col_idx.len());
        }
        NormalizedAdjacency {
            n,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.n
    }

    pub fn entry(&self, u: usize, v: usize) -> f64 {
        let span = self.row_ptr[u]..self.row_ptr[u + 1];
        match self.col_idx[span.clone()].binary_search(&v) {
            Ok(pos) => self.values[span.start + pos],
            Err(_) => 0.0,
        }
    }

    /// Dense product `Â · m`. Row traversal order is fixed, so the
    /// result is deterministic.
    pub fn matmul(&self, m: &Array2<f64>) -> Array2<f64> {
        assert_eq!(m.nrows(), self.n, "operand row count must match node count");
        let mut out = Array2::zeros((self.n, m.ncols()));
        for u in 0..self.n {
            let mut out_row = out.row_mut(u);
            for k in self.row_ptr[u]..self.row_ptr[u + 1] {
                out_row.scaled_add(self.values[k], &m.row(self.col_idx[k]));
            }
        }
        out
    }

    /// Same product for a vector operand.
    pub fn matvec(&self, v: &Array1<f64>) -> Array1<f64> {
        assert_eq!(v.len(), self.n, "operand length must match node count");
        let mut out = Array1::zeros(self.n);
        for u in 0..self.n {
            let mut acc = 0.0;
            for k in self.row_ptr[u]..self.row_ptr[u + 1] {
                acc += self.values[k] * v[self.col_idx[k]];
            }
            out[u] = acc;
        }
        out
    }
}

/// Disjoint train/validation/test node sets, each sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetSplit {
    pub train: Vec<NodeId>,
    pub val: Vec<NodeId>,
    pub test: Vec<NodeId>,
}

impl DatasetSplit {
    /// Check that all three roles are nonempty, in bounds, and disjoint.
    pub fn validate(&self, num_nodes: usize) -> Result<()> {
        let mut seen = BTreeSet::new();
        for (name, set) in [("train", &self.train), ("val", &self.val), ("test", &self.test)] {
            if set.is_empty() {
                return Err(Error::Domain(format!("{name} set is empty")));
            }
            for &v in set {
                if v >= num_nodes {
                    return Err(Error::Bounds(format!(
                        "{name} node {v} exceeds node count {num_nodes}"
                    )));
                }
                if !seen.insert(v) {
                    return Err(Error::Domain(format!("node {v} appears in two roles")));
                }
            }
        }
        Ok(())
    }
}

/// Sample a split: `label_rate` training nodes from every class of
/// `labels`, then `val_size` and `test_size` uniformly from the rest.
///
/// `labels` are the original (pre-binarization) classes, so rare
/// categories keep their fixed budget even when the graph itself has
/// already been collapsed to two classes. Sampling is without
/// replacement from the seeded "split" stream; outputs are sorted.
pub fn make_split(
    g: &Graph,
    labels: &[usize],
    label_rate: usize,
    val_size: usize,
    test_size: usize,
    seed: u64,
) -> Result<DatasetSplit> {
    if labels.len() != g.num_nodes() {
        return Err(Error::Shape(format!(
            "{} labels for {} nodes",
            labels.len(),
            g.num_nodes()
        )));
    }
    if label_rate == 0 || val_size == 0 || test_size == 0 {
        return Err(Error::Domain(
            "label_rate, val_size, and test_size must all be positive".into(),
        ));
    }
    let class_count = labels.iter().max().copied().unwrap_or(0) + 1;
    let mut rng = seed::stream(seed, "split");

    let mut train = Vec::new();
    for c in 0..class_count {
        let mut members: Vec<NodeId> = (0..g.num_nodes()).filter(|&v| labels[v] == c).collect();
        if members.len() < label_rate {
            return Err(Error::Domain(format!(
                "class {c} has {} nodes, fewer than label_rate {label_rate}",
                members.len()
            )));
        }
        members.shuffle(&mut rng);
        train.extend_from_slice(&members[..label_rate]);
    }
    let taken: BTreeSet<NodeId> = train.iter().copied().collect();

    let mut rest: Vec<NodeId> = (0..g.num_nodes()).filter(|v| !taken.contains(v)).collect();
    if rest.len() < val_size + test_size {
        return Err(Error::Domain(format!(
            "{} nodes remain after training sample but val {} + test {} were requested",
            rest.len(),
            val_size,
            test_size
        )));
    }
    rest.shuffle(&mut rng);
    let mut val: Vec<NodeId> = rest[..val_size].to_vec();
    let mut test: Vec<NodeId> = rest[val_size..val_size + test_size].to_vec();

    train.sort_unstable();
    val.sort_unstable();
    test.sort_unstable();
    let split = DatasetSplit { train, val, test };
    split.validate(g.num_nodes())?;
    Ok(split)
}

/// Write a split as `node_id,role` rows (sorted by node id).
pub fn save_split(split: &DatasetSplit, path: &Path) -> Result<()> {
    let mut rows: Vec<(NodeId, &str)> = Vec::new();
    rows.extend(split.train.iter().map(|&v| (v, "train")));
    rows.extend(split.val.iter().map(|&v| (v, "val")));
    rows.extend(split.test.iter().map(|&v| (v, "test")));
    rows.sort_unstable();
    let mut out = String::from("node_id,role\n");
    for (v, role) in rows {
        writeln!(out, "{v},{role}").expect("string write");
    }
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}

/// Read a split written by [`save_split`]. The header row is optional.
pub fn load_split(path: &Path, num_nodes: usize) -> Result<DatasetSplit> {
    let mut split = DatasetSplit {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    for (idx, line) in read_lines(path)?.iter().enumerate() {
        let t = line.trim();
        if t.is_empty() || (idx == 0 && t == "node_id,role") {
            continue;
        }
        let (id, role) = t
            .split_once(',')
            .ok_or_else(|| Error::parse(path, idx + 1, "expected node_id,role"))?;
        let id: NodeId = id
            .trim()
            .parse()
            .map_err(|_| Error::parse(path, idx + 1, format!("bad node id {id:?}")))?;
        match role.trim() {
            "train" => split.train.push(id),
            "val" => split.val.push(id),
            "test" => split.test.push(id),
            other => {
                return Err(Error::parse(path, idx + 1, format!("unknown role {other:?}")));
            }
        }
    }
    split.train.sort_unstable();
    split.val.sort_unstable();
    split.test.sort_unstable();
    split.validate(num_nodes)?;
    Ok(split)
}

/// Parameters of the synthetic block-model generator.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SyntheticConfig {
    /// Nodes per block; block index doubles as the class label.
    pub block_sizes: Vec<usize>,
    /// Edge probability inside a block.
    pub p_in: f64,
    /// Edge probability between blocks.
    pub p_out: f64,
    /// Feature dimensionality.
    pub feature_dim: usize,
    /// Distance between consecutive block means along one random
    /// direction; per-node noise is standard normal.
    pub feature_shift: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            block_sizes: vec![90, 10],
            p_in: 0.1,
            p_out: 0.01,
            feature_dim: 8,
            feature_shift: 1.5,
        }
    }
}

/// Generate a block-model graph with Gaussian features.
///
/// Nodes are numbered block by block. Every unordered pair is an
/// independent Bernoulli edge (`p_in` within a block, `p_out` across),
/// drawn in a fixed pair order from the seeded "synthetic" stream, so
/// one seed always yields the same graph.
pub fn gen_synthetic(cfg: &SyntheticConfig, seed: u64) -> Result<Graph> {
    if cfg.block_sizes.len() < 2 {
        return Err(Error::Domain("need at least two blocks".into()));
    }
    if cfg.block_sizes.iter().any(|&s| s == 0) {
        return Err(Error::Domain("every block must be non-empty".into()));
    }
    for (name, p) in [("p_in", cfg.p_in), ("p_out", cfg.p_out)] {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::Domain(format!("{name} = {p} is outside [0, 1]")));
        }
    }
    if cfg.feature_dim == 0 {
        return Err(Error::Domain("feature_dim must be positive".into()));
    }
    if !cfg.feature_shift.is_finite() || cfg.feature_shift < 0.0 {
        return Err(Error::Domain(format!(
            "feature_shift = {} must be finite and non-negative",
            cfg.feature_shift
        )));
    }

    let mut rng = seed::stream(seed, "synthetic");
    let n: usize = cfg.block_sizes.iter().sum();
    let labels: Vec<usize> = cfg
        .block_sizes
        .iter()
        .enumerate()
        .flat_map(|(b, &s)| std::iter::repeat(b).take(s))
        .collect();

    // Random unit direction separating the block means.
    let mut direction: Vec<f64> = (0..cfg.feature_dim)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect();
    let norm = direction.iter().map(|x| x * x).sum::<f64>().sqrt();
    for x in &mut direction {
        *x /= norm;
    }

    let mut features = Array2::zeros((n, cfg.feature_dim));
    for v in 0..n {
        let offset = cfg.feature_shift * labels[v] as f64;
        for j in 0..cfg.feature_dim {
            let noise: f64 = rng.sample(StandardNormal);
            features[(v, j)] = offset * direction[j] + noise;
        }
    }

    let mut edges = Vec::new();
    for u in 0..n {
        for v in (u + 1)..n {
            let p = if labels[u] == labels[v] { cfg.p_in } else { cfg.p_out };
            if rng.gen_bool(p) {
                edges.push((u, v));
            }
        }
    }

    Graph::new(edges, features, labels, cfg.block_sizes.len())
}
