//! Graph storage, ingestion, splits, and the exact multi-source BFS oracle.
//!
//! Graphs are directed and immutable after construction. Adjacency is kept in
//! compressed form (offset array + neighbor array) for both directions, with
//! neighbor lists sorted ascending so iteration order is canonical regardless
//! of input edge order.

use std::collections::VecDeque;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("graph must have at least one node")]
    EmptyGraph,
    #[error("edge endpoint {node} out of range (n = {n})")]
    EndpointOutOfRange { node: u32, n: usize },
    #[error("source set is empty")]
    EmptySourceSet,
    #[error("node id {node} out of range (n = {n})")]
    NodeOutOfRange { node: u32, n: usize },
    #[error("arm is empty")]
    EmptyArm,
    #[error("arm is not connected")]
    DisconnectedArm,
    #[error("arm edge endpoint {0} out of range")]
    ArmEdgeOutOfRange(usize),
    #[error("need at least 5 labeled items, got {0}")]
    TooFewItems(usize),
    #[error("graph has only {available} non-edges, cannot sample {requested}")]
    NotEnoughNonEdges { available: usize, requested: usize },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: u32, classes: usize },
    #[error("labels are not contiguous from 0 (missing class {0})")]
    NonContiguousLabels(u32),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
}

/// Compressed adjacency: `offsets[v]..offsets[v+1]` indexes into `targets`.
#[derive(Debug, Clone, PartialEq, Eq)]
struct Csr {
    offsets: Vec<usize>,
    targets: Vec<u32>,
}

impl Csr {
    fn build(n: usize, pairs: &[(u32, u32)]) -> Csr {
        let mut offsets = vec![0usize; n + 1];
        for &(src, _) in pairs {
            offsets[src as usize + 1] += 1;
        }
        for i in 0..n {
            offsets[i + 1] += offsets[i];
        }
        let mut targets = vec![0u32; pairs.len()];
        let mut cursor = offsets.clone();
        for &(src, dst) in pairs {
            targets[cursor[src as usize]] = dst;
            cursor[src as usize] += 1;
        }
        // Pairs arrive sorted by (src, dst), so each row is already ascending.
        Csr { offsets, targets }
    }

    fn row(&self, v: u32) -> &[u32] {
        &self.targets[self.offsets[v as usize]..self.offsets[v as usize + 1]]
    }
}

/// Directed graph with canonical sorted adjacency in both directions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    n: usize,
    edges: Vec<(u32, u32)>,
    out_adj: Csr,
    in_adj: Csr,
}

impl Graph {
    pub fn node_count(&self) -> usize {
        self.n
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// Canonical edge list, sorted by (src, dst).
    pub fn edges(&self) -> &[(u32, u32)] {
        &self.edges
    }

    /// Successors of `v`, ascending.
    pub fn out_neighbors(&self, v: u32) -> &[u32] {
        self.out_adj.row(v)
    }

    /// In-neighbors of `v`, ascending.
    pub fn in_neighbors(&self, v: u32) -> &[u32] {
        self.in_adj.row(v)
    }

    pub fn out_degree(&self, v: u32) -> usize {
        self.out_neighbors(v).len()
    }

    pub fn in_degree(&self, v: u32) -> usize {
        self.in_neighbors(v).len()
    }

    /// In-degree plus out-degree.
    pub fn total_degree(&self, v: u32) -> usize {
        self.in_degree(v) + self.out_degree(v)
    }

    pub fn has_edge(&self, src: u32, dst: u32) -> bool {
        self.out_neighbors(src).binary_search(&dst).is_ok()
    }

    fn check_node(&self, v: u32) -> Result<(), GraphError> {
        if (v as usize) < self.n {
            Ok(())
        } else {
            Err(GraphError::NodeOutOfRange { node: v, n: self.n })
        }
    }
}

/// Builds a canonical graph from an edge list.
///
/// Self-loops are dropped and duplicate edges collapsed. With
/// `undirected_as_bidirected` set, each input edge is stored in both
/// directions.
pub fn build_graph(
    edges: &[(u32, u32)],
    n: usize,
    undirected_as_bidirected: bool,
) -> Result<Graph, GraphError> {
    if n == 0 {
        return Err(GraphError::EmptyGraph);
    }
    let mut pairs = Vec::with_capacity(if undirected_as_bidirected {
        edges.len() * 2
    } else {
        edges.len()
    });
    for &(src, dst) in edges {
        for &node in &[src, dst] {
            if node as usize >= n {
                return Err(GraphError::EndpointOutOfRange { node, n });
            }
        }
        if src == dst {
            continue;
        }
        pairs.push((src, dst));
        if undirected_as_bidirected {
            pairs.push((dst, src));
        }
    }
    pairs.sort_unstable();
    pairs.dedup();

    let out_adj = Csr::build(n, &pairs);
    let mut reversed: Vec<(u32, u32)> = pairs.iter().map(|&(s, d)| (d, s)).collect();
    reversed.sort_unstable();
    let in_adj = Csr::build(n, &reversed);

    Ok(Graph {
        n,
        edges: pairs,
        out_adj,
        in_adj,
    })
}

/// Per-node hop counts from a source set; `None` marks unreachable nodes.
///
/// Unreachable is a distinct state rather than a numeric value so callers can
/// never confuse it with distance zero.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DistanceVector(Vec<Option<u32>>);

impl DistanceVector {
    pub fn get(&self, v: u32) -> Option<u32> {
        self.0[v as usize]
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = Option<u32>> + '_ {
        self.0.iter().copied()
    }

    /// Largest finite distance, if any node is reachable.
    pub fn max_finite(&self) -> Option<u32> {
        self.0.iter().filter_map(|d| *d).max()
    }
}

/// Exact hop distances from a node set, following out-edges.
pub fn multi_source_bfs(g: &Graph, sources: &[u32]) -> Result<DistanceVector, GraphError> {
    if sources.is_empty() {
        return Err(GraphError::EmptySourceSet);
    }
    let mut dist = vec![None; g.node_count()];
    let mut queue = VecDeque::new();
    for &s in sources {
        g.check_node(s)?;
        if dist[s as usize].is_none() {
            dist[s as usize] = Some(0);
            queue.push_back(s);
        }
    }
    while let Some(u) = queue.pop_front() {
        let du = dist[u as usize].unwrap();
        for &v in g.out_neighbors(u) {
            if dist[v as usize].is_none() {
                dist[v as usize] = Some(du + 1);
                queue.push_back(v);
            }
        }
    }
    Ok(DistanceVector(dist))
}

/// Tree arm used to assemble the mirror fixture. Node 0 is the attachment
/// root; edges are over local ids `0..nodes`.
#[derive(Debug, Clone)]
pub struct ArmSpec {
    pub nodes: usize,
    pub edges: Vec<(usize, usize)>,
}

impl ArmSpec {
    /// A path of `len` nodes rooted at its first node.
    pub fn path(len: usize) -> ArmSpec {
        ArmSpec {
            nodes: len,
            edges: (1..len).map(|i| (i - 1, i)).collect(),
        }
    }

    /// A root with `leaves` children.
    pub fn star(leaves: usize) -> ArmSpec {
        ArmSpec {
            nodes: leaves + 1,
            edges: (1..=leaves).map(|i| (0, i)).collect(),
        }
    }
}

/// Node-to-node pairing realized by the mirror automorphism. Applying it
/// twice is the identity; the bridge maps to itself.
pub type MirrorPairing = Vec<u32>;

/// Two disjoint copies of an arm joined through a shared bridge node.
///
/// Layout: copy one occupies ids `0..k`, copy two `k..2k`, the bridge is
/// `2k`. All edges are bidirected, so the swap of the two copies is a graph
/// automorphism; the returned pairing encodes it.
pub fn make_mirror_graph(arm: &ArmSpec) -> Result<(Graph, MirrorPairing), GraphError> {
    let k = arm.nodes;
    if k == 0 {
        return Err(GraphError::EmptyArm);
    }
    for &(a, b) in &arm.edges {
        if a >= k || b >= k {
            return Err(GraphError::ArmEdgeOutOfRange(a.max(b)));
        }
    }
    // The arm must be a single connected component rooted at 0.
    let mut seen = vec![false; k];
    seen[0] = true;
    let mut stack = vec![0usize];
    while let Some(u) = stack.pop() {
        for &(a, b) in &arm.edges {
            for (x, y) in [(a, b), (b, a)] {
                if x == u && !seen[y] {
                    seen[y] = true;
                    stack.push(y);
                }
            }
        }
    }
    if seen.iter().any(|s| !s) {
        return Err(GraphError::DisconnectedArm);
    }

    let bridge = (2 * k) as u32;
    let mut edges = Vec::with_capacity(arm.edges.len() * 2 + 2);
    for &(a, b) in &arm.edges {
        edges.push((a as u32, b as u32));
        edges.push(((a + k) as u32, (b + k) as u32));
    }
    edges.push((bridge, 0));
    edges.push((bridge, k as u32));
    let g = build_graph(&edges, 2 * k + 1, true)?;

    let mut pairing: MirrorPairing = (0..2 * k + 1).map(|v| v as u32).collect();
    for i in 0..k {
        pairing[i] = (i + k) as u32;
        pairing[i + k] = i as u32;
    }
    Ok((g, pairing))
}

/// Task kind; drives split fractions and the evaluation metric.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskKind {
    NodeClassification,
    LinkPrediction,
    NodePairClassification,
}

impl TaskKind {
    pub fn is_pair_task(self) -> bool {
        !matches!(self, TaskKind::NodeClassification)
    }
}

/// Labeled items for one downstream task.
#[derive(Debug, Clone)]
pub struct LabeledTask {
    pub kind: TaskKind,
    items: TaskItems,
}

#[derive(Debug, Clone)]
enum TaskItems {
    /// (node, class)
    Nodes(Vec<(u32, u32)>),
    /// (u, v, binary label)
    Pairs(Vec<(u32, u32, u8)>),
}

impl LabeledTask {
    pub fn node_classification(labels: Vec<(u32, u32)>) -> LabeledTask {
        LabeledTask {
            kind: TaskKind::NodeClassification,
            items: TaskItems::Nodes(labels),
        }
    }

    pub fn link_prediction(items: Vec<(u32, u32, u8)>) -> LabeledTask {
        LabeledTask {
            kind: TaskKind::LinkPrediction,
            items: TaskItems::Pairs(items),
        }
    }

    pub fn node_pair_classification(items: Vec<(u32, u32, u8)>) -> LabeledTask {
        LabeledTask {
            kind: TaskKind::NodePairClassification,
            items: TaskItems::Pairs(items),
        }
    }

    pub fn len(&self) -> usize {
        match &self.items {
            TaskItems::Nodes(v) => v.len(),
            TaskItems::Pairs(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn node_items(&self) -> &[(u32, u32)] {
        match &self.items {
            TaskItems::Nodes(v) => v,
            TaskItems::Pairs(_) => panic!("pair task has no node items"),
        }
    }

    pub fn pair_items(&self) -> &[(u32, u32, u8)] {
        match &self.items {
            TaskItems::Pairs(v) => v,
            TaskItems::Nodes(_) => panic!("node task has no pair items"),
        }
    }

    /// Number of classes for node tasks, 2 for pair tasks.
    pub fn num_classes(&self) -> usize {
        match &self.items {
            TaskItems::Nodes(v) => v.iter().map(|&(_, c)| c as usize + 1).max().unwrap_or(0),
            TaskItems::Pairs(_) => 2,
        }
    }

    /// Checks node ids against `n` and that classes are contiguous from 0.
    pub fn validate(&self, n: usize) -> Result<(), GraphError> {
        let check = |v: u32| -> Result<(), GraphError> {
            if (v as usize) < n {
                Ok(())
            } else {
                Err(GraphError::NodeOutOfRange { node: v, n })
            }
        };
        match &self.items {
            TaskItems::Nodes(v) => {
                let classes = self.num_classes();
                let mut present = vec![false; classes];
                for &(node, class) in v {
                    check(node)?;
                    present[class as usize] = true;
                }
                if let Some(missing) = present.iter().position(|p| !p) {
                    return Err(GraphError::NonContiguousLabels(missing as u32));
                }
            }
            TaskItems::Pairs(v) => {
                for &(u, w, label) in v {
                    check(u)?;
                    check(w)?;
                    if label > 1 {
                        return Err(GraphError::LabelOutOfRange {
                            label: label as u32,
                            classes: 2,
                        });
                    }
                }
            }
        }
        Ok(())
    }
}

/// Disjoint train/validation/test index sets over the labeled items.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitSpec {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
    pub seed: u64,
}

/// Uniform random split: 60/20/20 for node tasks, 80/10/10 for pair tasks.
pub fn split_dataset(task: &LabeledTask, seed: u64) -> Result<SplitSpec, GraphError> {
    let total = task.len();
    if total < 5 {
        return Err(GraphError::TooFewItems(total));
    }
    let mut order: Vec<usize> = (0..total).collect();
    let mut rng = <ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
    order.shuffle(&mut rng);

    let (n_train, n_val) = if task.kind.is_pair_task() {
        (total * 8 / 10, total / 10)
    } else {
        (total * 6 / 10, total * 2 / 10)
    };
    let mut train: Vec<usize> = order[..n_train].to_vec();
    let mut val: Vec<usize> = order[n_train..n_train + n_val].to_vec();
    let mut test: Vec<usize> = order[n_train + n_val..].to_vec();
    train.sort_unstable();
    val.sort_unstable();
    test.sort_unstable();
    Ok(SplitSpec {
        train,
        val,
        test,
        seed,
    })
}

/// Uniform sample of `count` distinct ordered non-edges (u, v), u != v.
pub fn sample_negative_pairs(
    g: &Graph,
    count: usize,
    seed: u64,
) -> Result<Vec<(u32, u32)>, GraphError> {
    let n = g.node_count();
    let possible = n * (n - 1) - g.edge_count();
    if count > possible {
        return Err(GraphError::NotEnoughNonEdges {
            available: possible,
            requested: count,
        });
    }
    let mut rng = <ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);

    // Dense graphs would stall rejection sampling; enumerate instead.
    if count * 2 > possible {
        let mut all: Vec<(u32, u32)> = Vec::with_capacity(possible);
        for u in 0..n as u32 {
            for v in 0..n as u32 {
                if u != v && !g.has_edge(u, v) {
                    all.push((u, v));
                }
            }
        }
        all.shuffle(&mut rng);
        all.truncate(count);
        return Ok(all);
    }

    let mut chosen = std::collections::HashSet::with_capacity(count);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let u = rng.gen_range(0..n as u32);
        let v = rng.gen_range(0..n as u32);
        if u == v || g.has_edge(u, v) {
            continue;
        }
        if chosen.insert((u, v)) {
            out.push((u, v));
        }
    }
    Ok(out)
}

/// Node attribute matrix, one row per node.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeFeatures {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
    /// Set when attributes are the all-ones placeholder for unattributed graphs.
    pub placeholder_ones: bool,
}

impl NodeFeatures {
    pub fn from_matrix(rows: usize, cols: usize, values: Vec<f64>) -> NodeFeatures {
        assert_eq!(values.len(), rows * cols, "feature matrix shape mismatch");
        assert!(
            values.iter().all(|v| v.is_finite()),
            "feature values must be finite"
        );
        NodeFeatures {
            rows,
            cols,
            values,
            placeholder_ones: false,
        }
    }

    /// All-ones placeholder attributes for unattributed graphs.
    pub fn ones(n: usize) -> NodeFeatures {
        NodeFeatures {
            rows: n,
            cols: 1,
            values: vec![1.0; n],
            placeholder_ones: true,
        }
    }

    pub fn row(&self, v: u32) -> &[f64] {
        &self.values[v as usize * self.cols..(v as usize + 1) * self.cols]
    }
}

/// Reads a whitespace-separated edge list. Lines starting with '#' are
/// ignored.
pub fn read_edge_list(path: &Path) -> Result<Vec<(u32, u32)>, GraphError> {
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut edges = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut it = trimmed.split_whitespace();
        let parse = |tok: Option<&str>| -> Result<u32, GraphError> {
            tok.ok_or_else(|| GraphError::Parse {
                line: idx + 1,
                message: "expected two node ids".into(),
            })?
            .parse()
            .map_err(|e| GraphError::Parse {
                line: idx + 1,
                message: format!("{e}"),
            })
        };
        let src = parse(it.next())?;
        let dst = parse(it.next())?;
        if it.next().is_some() {
            return Err(GraphError::Parse {
                line: idx + 1,
                message: "expected exactly two node ids".into(),
            });
        }
        edges.push((src, dst));
    }
    Ok(edges)
}

pub fn write_edge_list(path: &Path, edges: &[(u32, u32)]) -> Result<(), GraphError> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for &(u, v) in edges {
        writeln!(f, "{u} {v}")?;
    }
    Ok(())
}

/// Reads a label file: "u label" per line for node tasks, "u v label" for
/// pair tasks. '#' lines are ignored.
pub fn read_label_file(path: &Path, kind: TaskKind) -> Result<LabeledTask, GraphError> {
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut node_items = Vec::new();
    let mut pair_items = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        let want = if kind.is_pair_task() { 3 } else { 2 };
        if fields.len() != want {
            return Err(GraphError::Parse {
                line: idx + 1,
                message: format!("expected {want} fields, got {}", fields.len()),
            });
        }
        let parse = |tok: &str| -> Result<u32, GraphError> {
            tok.parse().map_err(|e| GraphError::Parse {
                line: idx + 1,
                message: format!("{e}"),
            })
        };
        if kind.is_pair_task() {
            let label = parse(fields[2])?;
            if label > 1 {
                return Err(GraphError::Parse {
                    line: idx + 1,
                    message: format!("pair label must be 0 or 1, got {label}"),
                });
            }
            pair_items.push((parse(fields[0])?, parse(fields[1])?, label as u8));
        } else {
            node_items.push((parse(fields[0])?, parse(fields[1])?));
        }
    }
    Ok(match kind {
        TaskKind::NodeClassification => LabeledTask::node_classification(node_items),
        TaskKind::LinkPrediction => LabeledTask::link_prediction(pair_items),
        TaskKind::NodePairClassification => LabeledTask::node_pair_classification(pair_items),
    })
}
