//! Synthetic graph and task generators used by tests, the experiment
//! harness, and the demo. All are seeded and deterministic.

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::anchors::AnchorSet;
use crate::graph::{build_graph, Graph, GraphError, LabeledTask, NodeFeatures};

/// Random directed graph with roughly `mean_out_degree` out-edges per node.
pub fn random_digraph(n: usize, mean_out_degree: f64, seed: u64) -> Result<Graph, GraphError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let possible = n.saturating_mul(n.saturating_sub(1));
    let target = ((n as f64 * mean_out_degree).round() as usize).min(possible);
    let mut edges = HashSet::with_capacity(target);
    while edges.len() < target {
        let u = rng.gen_range(0..n as u32);
        let v = rng.gen_range(0..n as u32);
        if u != v {
            edges.insert((u, v));
        }
    }
    let mut edges: Vec<(u32, u32)> = edges.into_iter().collect();
    edges.sort_unstable();
    build_graph(&edges, n, false)
}

/// Stochastic block model over `k` balanced communities (round-robin
/// membership), bidirected edges. Returns the graph and each node's
/// community.
pub fn sbm_graph(
    n: usize,
    k: usize,
    p_in: f64,
    p_out: f64,
    seed: u64,
) -> Result<(Graph, Vec<u32>), GraphError> {
    assert!(k >= 1 && n >= k, "need at least one node per community");
    let membership: Vec<u32> = (0..n as u32).map(|v| v % k as u32).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges = Vec::new();
    for u in 0..n as u32 {
        for v in u + 1..n as u32 {
            let p = if membership[u as usize] == membership[v as usize] {
                p_in
            } else {
                p_out
            };
            if rng.gen::<f64>() < p {
                edges.push((u, v));
            }
        }
    }
    Ok((build_graph(&edges, n, true)?, membership))
}

/// Preferential-attachment graph: each new node attaches `m` bidirected
/// edges to existing nodes with probability proportional to degree. Produces
/// the heavy-tailed degree profile used for degree-tier labeling.
pub fn preferential_graph(n: usize, m: usize, seed: u64) -> Result<Graph, GraphError> {
    assert!(n >= 2 && m >= 1, "need n >= 2 and m >= 1");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges: Vec<(u32, u32)> = vec![(0, 1)];
    // endpoint multiset: picking uniformly from it is degree-proportional
    let mut endpoints: Vec<u32> = vec![0, 1];
    for i in 2..n as u32 {
        let want = (i as usize).min(m);
        let mut chosen: Vec<u32> = Vec::with_capacity(want);
        while chosen.len() < want {
            let t = endpoints[rng.gen_range(0..endpoints.len())];
            if t != i && !chosen.contains(&t) {
                chosen.push(t);
            }
        }
        for &t in &chosen {
            edges.push((i, t));
            endpoints.push(i);
            endpoints.push(t);
        }
    }
    build_graph(&edges, n, true)
}

/// Labels every node with its total-degree quartile (0 = lowest traffic,
/// 3 = hubs). Quartiles are rank-based, ties broken by node id, so classes
/// are contiguous and near-balanced.
pub fn degree_quartile_task(g: &Graph) -> LabeledTask {
    let n = g.node_count();
    let mut order: Vec<u32> = (0..n as u32).collect();
    order.sort_by_key(|&v| (g.total_degree(v), v));
    let mut labels = vec![(0u32, 0u32); n];
    for (rank, &v) in order.iter().enumerate() {
        let q = (rank * 4 / n).min(3) as u32;
        labels[v as usize] = (v, q);
    }
    LabeledTask::node_classification(labels)
}

/// Node-pair classification: does a pair share a community? Balanced
/// positives (same community) and negatives, distinct ordered pairs.
pub fn community_pair_task(
    membership: &[u32],
    count: usize,
    seed: u64,
) -> LabeledTask {
    let n = membership.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = HashSet::with_capacity(count);
    let mut items = Vec::with_capacity(count);
    let half = count / 2;
    while items.len() < count {
        let want_positive = items.len() < half;
        let u = rng.gen_range(0..n as u32);
        let v = rng.gen_range(0..n as u32);
        if u == v {
            continue;
        }
        let same = membership[u as usize] == membership[v as usize];
        if same != want_positive {
            continue;
        }
        if seen.insert((u, v)) {
            items.push((u, v, same as u8));
        }
    }
    LabeledTask::node_pair_classification(items)
}

/// Link prediction items: every edge as a positive plus an equal number of
/// sampled non-edges as negatives.
pub fn link_prediction_task(g: &Graph, seed: u64) -> Result<LabeledTask, GraphError> {
    let negatives = crate::graph::sample_negative_pairs(g, g.edge_count(), seed)?;
    let mut items: Vec<(u32, u32, u8)> = g.edges().iter().map(|&(u, v)| (u, v, 1)).collect();
    items.extend(negatives.into_iter().map(|(u, v)| (u, v, 0)));
    Ok(LabeledTask::link_prediction(items))
}

/// The two-view fusion fixture: a mirrored double star where half the
/// children are labeled by which side they sit on and half by a private
/// tuft attribute, so a frontier view and a neighborhood view each decide
/// a different half.
///
/// Structure: two star arms (root + `children` leaves each) joined by a
/// bridge, all bidirected; every child additionally has a private tuft node
/// with a single directed edge tuft -> child. Tuft nodes have no in-edges,
/// so no frontier ever contains them: frontier models cannot see tuft
/// attributes. Tuft attributes are identical across mirror-paired children,
/// so the side swap stays a graph automorphism and neighborhood models
/// cannot see the side.
///
/// The anchor is side 0's root. The first half of each arm's children are
/// side-labeled (label = side index); the rest are bit-labeled (label =
/// tuft sign). Tuft magnitude marks the group (1 for side-labeled, 2 for
/// bit-labeled), so a neighborhood model can tell which bits matter but
/// still cannot see the side, while a frontier model sees the side but no
/// tufts. Each view alone tops out around 75%; together every child is
/// decidable.
pub struct TwoViewFixture {
    pub graph: Graph,
    pub features: NodeFeatures,
    pub task: LabeledTask,
    pub anchors: AnchorSet,
    /// Children node ids, side 0 then side 1.
    pub children: Vec<u32>,
}

pub fn make_two_view_fixture(children: usize) -> TwoViewFixture {
    assert!(
        children >= 4 && children % 2 == 0,
        "need an even number of children per side, at least 4"
    );
    let k = children + 1; // arm size: root + children
    let bridge = 2 * k;
    let tuft_base = 2 * k + 1;
    let n = 2 * k + 1 + 2 * children;
    let half = children / 2;

    let mut edges: Vec<(u32, u32)> = Vec::new();
    let bidirected = |edges: &mut Vec<(u32, u32)>, a: u32, b: u32| {
        edges.push((a, b));
        edges.push((b, a));
    };
    for i in 1..=children {
        bidirected(&mut edges, 0, i as u32);
        bidirected(&mut edges, k as u32, (k + i) as u32);
    }
    bidirected(&mut edges, bridge as u32, 0);
    bidirected(&mut edges, bridge as u32, k as u32);
    for i in 0..children {
        // tuft -> child only: invisible to any frontier
        edges.push(((tuft_base + i) as u32, (1 + i) as u32));
        edges.push(((tuft_base + children + i) as u32, (k + 1 + i) as u32));
    }
    let graph = build_graph(&edges, n, false).unwrap();

    // Attributes: column 0 is a constant; column 1 carries the tuft value
    // (sign = bit, magnitude = group) on tuft nodes only, equal across
    // sides.
    let mut values = vec![0.0; n * 2];
    for v in 0..n {
        values[v * 2] = 1.0;
    }
    for i in 0..children {
        let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
        let magnitude = if i < half { 1.0 } else { 2.0 };
        values[(tuft_base + i) * 2 + 1] = sign * magnitude;
        values[(tuft_base + children + i) * 2 + 1] = sign * magnitude;
    }
    let features = NodeFeatures::from_matrix(n, 2, values);

    let mut labels = Vec::with_capacity(2 * children);
    let mut child_ids = Vec::with_capacity(2 * children);
    for side in 0..2u32 {
        let base = side * k as u32 + 1;
        for i in 0..children {
            let label = if i < half {
                side
            } else {
                (i % 2 == 0) as u32
            };
            labels.push((base + i as u32, label));
            child_ids.push(base + i as u32);
        }
    }
    let task = LabeledTask::node_classification(labels);
    let anchors = AnchorSet::new(vec![0], n).unwrap();

    TwoViewFixture {
        graph,
        features,
        task,
        anchors,
        children: child_ids,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::multi_source_bfs;

    #[test]
    fn random_digraph_is_seeded_and_sized() {
        let a = random_digraph(50, 3.0, 7).unwrap();
        let b = random_digraph(50, 3.0, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.edge_count(), 150);
        assert_ne!(a, random_digraph(50, 3.0, 8).unwrap());
    }

    #[test]
    fn sbm_prefers_intra_community_edges() {
        let (g, membership) = sbm_graph(120, 4, 0.5, 0.02, 3).unwrap();
        let mut intra = 0usize;
        let mut inter = 0usize;
        for &(u, v) in g.edges() {
            if membership[u as usize] == membership[v as usize] {
                intra += 1;
            } else {
                inter += 1;
            }
        }
        // 3x more cross-pairs exist, but p_in/p_out = 25 dominates.
        assert!(intra > inter * 3, "intra {intra} vs inter {inter}");
    }

    #[test]
    fn preferential_graph_grows_hubs() {
        let g = preferential_graph(300, 2, 5).unwrap();
        let mut degrees: Vec<usize> = (0..300u32).map(|v| g.total_degree(v)).collect();
        degrees.sort_unstable();
        let max = degrees[299];
        let median = degrees[150];
        assert!(
            max >= median * 5,
            "expected heavy tail, max {max} median {median}"
        );
    }

    #[test]
    fn degree_quartiles_are_balanced_and_contiguous() {
        let g = preferential_graph(200, 2, 1).unwrap();
        let task = degree_quartile_task(&g);
        task.validate(200).unwrap();
        assert_eq!(task.num_classes(), 4);
        let mut counts = [0usize; 4];
        for &(_, c) in task.node_items() {
            counts[c as usize] += 1;
        }
        assert_eq!(counts, [50, 50, 50, 50]);
    }

    #[test]
    fn community_pairs_are_balanced_and_consistent() {
        let (_, membership) = sbm_graph(60, 3, 0.4, 0.05, 2).unwrap();
        let task = community_pair_task(&membership, 200, 9);
        assert_eq!(task.len(), 200);
        let mut positives = 0;
        for &(u, v, label) in task.pair_items() {
            let same = membership[u as usize] == membership[v as usize];
            assert_eq!(same as u8, label);
            positives += label as usize;
        }
        assert_eq!(positives, 100);
    }

    #[test]
    fn link_prediction_task_is_balanced() {
        let g = random_digraph(40, 2.0, 4).unwrap();
        let task = link_prediction_task(&g, 11).unwrap();
        assert_eq!(task.len(), 2 * g.edge_count());
        let positives: usize = task.pair_items().iter().map(|&(_, _, l)| l as usize).sum();
        assert_eq!(positives, g.edge_count());
        for &(u, v, label) in task.pair_items() {
            assert_eq!(g.has_edge(u, v), label == 1);
        }
    }

    #[test]
    fn two_view_tufts_are_invisible_to_frontiers() {
        let fix = make_two_view_fixture(6);
        let d = multi_source_bfs(&fix.graph, fix.anchors.ids()).unwrap();
        let k = 7; // root + 6 children
        // Side-0 children sit at distance 1, side-1 children at 3.
        for i in 1..=6u32 {
            assert_eq!(d.get(i), Some(1));
            assert_eq!(d.get(k + i), Some(3));
        }
        // Tufts are unreachable (no in-edges at all).
        for v in (2 * k as usize + 1)..fix.graph.node_count() {
            assert_eq!(d.get(v as u32), None);
            assert_eq!(fix.graph.in_degree(v as u32), 0);
        }
    }

    #[test]
    fn two_view_labels_split_by_group() {
        let fix = make_two_view_fixture(4);
        let items = fix.task.node_items();
        // Per side: two side-labeled children, then two bit-labeled
        // (signs +,- at indices 2,3).
        let labels: Vec<u32> = items.iter().map(|&(_, l)| l).collect();
        assert_eq!(labels, vec![0, 0, 1, 0, 1, 1, 1, 0]);
    }

    #[test]
    fn two_view_tuft_values_match_across_sides() {
        let fix = make_two_view_fixture(6);
        let tuft_base = 2 * 7 + 1;
        for i in 0..6usize {
            let a = fix.features.row((tuft_base + i) as u32)[1];
            let b = fix.features.row((tuft_base + 6 + i) as u32)[1];
            assert_eq!(a, b);
            assert_eq!(a.abs(), if i < 3 { 1.0 } else { 2.0 });
            assert_eq!(a.signum(), if i % 2 == 0 { 1.0 } else { -1.0 });
        }
    }
}
