//! Per-layer source frontiers.
//!
//! Propagation runs L layers; layer l only lets nodes hear from in-neighbors
//! inside that layer's source set. Two ways to advance the frontier:
//!
//! * `Literal` replaces the set with its successors each layer, exactly as
//!   written in the propagation loop. On graphs with cycles a node can
//!   re-enter the frontier.
//! * `BfsShell` uses distance level sets: layer l sources are the nodes at
//!   exactly l-1 hops from the anchors. Shells never revisit and go empty
//!   once the graph is exhausted.

use std::io::Write;
use std::path::Path;

use thiserror::Error;

use crate::anchors::AnchorSet;
use crate::graph::{multi_source_bfs, Graph, GraphError};

#[derive(Debug, Error)]
pub enum ScheduleError {
    #[error("layer count must be at least 1")]
    ZeroLayers,
    #[error("layer {layer} out of range ({layers} layers)")]
    LayerOutOfRange { layer: usize, layers: usize },
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// How the source frontier advances between layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScheduleMode {
    Literal,
    BfsShell,
}

impl std::fmt::Display for ScheduleMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ScheduleMode::Literal => write!(f, "literal"),
            ScheduleMode::BfsShell => write!(f, "bfs-shell"),
        }
    }
}

/// Precomputed source sets, one per layer. `src(0)` feeds the first layer
/// and always equals the anchor set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrontierSchedule {
    mode: ScheduleMode,
    srcs: Vec<Vec<u32>>,
}

impl FrontierSchedule {
    /// Builds a schedule from explicit per-layer source sets. Sets are
    /// sorted and deduplicated.
    pub fn from_layers(mode: ScheduleMode, mut srcs: Vec<Vec<u32>>) -> Result<Self, ScheduleError> {
        if srcs.is_empty() {
            return Err(ScheduleError::ZeroLayers);
        }
        for s in &mut srcs {
            s.sort_unstable();
            s.dedup();
        }
        Ok(FrontierSchedule { mode, srcs })
    }

    pub fn mode(&self) -> ScheduleMode {
        self.mode
    }

    pub fn num_layers(&self) -> usize {
        self.srcs.len()
    }

    /// Sorted source set feeding layer `layer` (zero-based).
    pub fn src(&self, layer: usize) -> &[u32] {
        &self.srcs[layer]
    }

    pub fn contains(&self, layer: usize, v: u32) -> bool {
        self.srcs[layer].binary_search(&v).is_ok()
    }

    /// Edges active at `layer`: those whose source lies in the layer's set.
    pub fn active_edges<'g>(
        &self,
        g: &'g Graph,
        layer: usize,
    ) -> impl Iterator<Item = (u32, u32)> + 'g {
        let src = self.srcs[layer].clone();
        src.into_iter()
            .flat_map(move |u| g.out_neighbors(u).iter().map(move |&v| (u, v)))
    }

    /// Plain-text dump, one line per layer.
    pub fn to_text(&self) -> String {
        use std::fmt::Write as _;
        let mut out = String::new();
        writeln!(out, "mode: {}", self.mode).unwrap();
        writeln!(out, "layers: {}", self.num_layers()).unwrap();
        for (i, src) in self.srcs.iter().enumerate() {
            write!(out, "layer {}: size={}", i + 1, src.len()).unwrap();
            for v in src {
                write!(out, " {v}").unwrap();
            }
            out.push('\n');
        }
        out
    }

    pub fn write_text(&self, path: &Path) -> Result<(), ScheduleError> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        f.write_all(self.to_text().as_bytes())?;
        Ok(())
    }
}

/// Sorted union of out-neighborhoods of `set`.
pub fn successors_of_set(g: &Graph, set: &[u32]) -> Vec<u32> {
    let mut next: Vec<u32> = set
        .iter()
        .flat_map(|&u| g.out_neighbors(u).iter().copied())
        .collect();
    next.sort_unstable();
    next.dedup();
    next
}

/// Builds the full per-layer frontier schedule.
pub fn build_schedule(
    g: &Graph,
    anchors: &AnchorSet,
    l_layers: usize,
    mode: ScheduleMode,
) -> Result<FrontierSchedule, ScheduleError> {
    if l_layers == 0 {
        return Err(ScheduleError::ZeroLayers);
    }
    let srcs = match mode {
        ScheduleMode::Literal => {
            let mut srcs = Vec::with_capacity(l_layers);
            let mut current = anchors.ids().to_vec();
            for _ in 0..l_layers {
                srcs.push(current.clone());
                current = successors_of_set(g, &current);
            }
            srcs
        }
        ScheduleMode::BfsShell => {
            let dist = multi_source_bfs(g, anchors.ids())?;
            let mut srcs = vec![Vec::new(); l_layers];
            for v in 0..g.node_count() as u32 {
                if let Some(d) = dist.get(v) {
                    if (d as usize) < l_layers {
                        srcs[d as usize].push(v);
                    }
                }
            }
            srcs
        }
    };
    Ok(FrontierSchedule { mode, srcs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::build_graph;

    fn anchors(ids: &[u32], n: usize) -> AnchorSet {
        AnchorSet::new(ids.to_vec(), n).unwrap()
    }

    #[test]
    fn first_layer_is_always_the_anchor_set() {
        let g = build_graph(&[(0, 1), (1, 2)], 3, true).unwrap();
        for mode in [ScheduleMode::Literal, ScheduleMode::BfsShell] {
            let s = build_schedule(&g, &anchors(&[1], 3), 2, mode).unwrap();
            assert_eq!(s.src(0), &[1]);
        }
    }

    #[test]
    fn modes_agree_on_directed_path() {
        let g = build_graph(&[(0, 1), (1, 2), (2, 3)], 4, false).unwrap();
        let a = anchors(&[0], 4);
        let lit = build_schedule(&g, &a, 3, ScheduleMode::Literal).unwrap();
        let bfs = build_schedule(&g, &a, 3, ScheduleMode::BfsShell).unwrap();
        for l in 0..3 {
            assert_eq!(lit.src(l), bfs.src(l));
        }
        assert_eq!(lit.src(2), &[2]);
    }

    #[test]
    fn literal_revisits_on_cycles() {
        // 3-cycle: the frontier walks around and re-enters the anchor.
        let g = build_graph(&[(0, 1), (1, 2), (2, 0)], 3, false).unwrap();
        let s = build_schedule(&g, &anchors(&[0], 3), 4, ScheduleMode::Literal).unwrap();
        assert_eq!(s.src(0), &[0]);
        assert_eq!(s.src(1), &[1]);
        assert_eq!(s.src(2), &[2]);
        assert_eq!(s.src(3), &[0]);
    }

    #[test]
    fn literal_oscillates_on_bidirected_path() {
        let g = build_graph(&[(0, 1), (1, 2), (2, 3), (3, 4)], 5, true).unwrap();
        let s = build_schedule(&g, &anchors(&[0, 4], 5), 4, ScheduleMode::Literal).unwrap();
        assert_eq!(s.src(0), &[0, 4]);
        assert_eq!(s.src(1), &[1, 3]);
        assert_eq!(s.src(2), &[0, 2, 4]);
        assert_eq!(s.src(3), &[1, 3]);
    }

    #[test]
    fn shells_are_level_sets_and_go_empty() {
        let g = build_graph(&[(0, 1), (1, 2), (2, 3), (3, 4)], 5, true).unwrap();
        let s = build_schedule(&g, &anchors(&[0, 4], 5), 5, ScheduleMode::BfsShell).unwrap();
        assert_eq!(s.src(0), &[0, 4]);
        assert_eq!(s.src(1), &[1, 3]);
        assert_eq!(s.src(2), &[2]);
        assert!(s.src(3).is_empty());
        assert!(s.src(4).is_empty());
    }

    #[test]
    fn shells_partition_reachable_nodes() {
        let g = build_graph(
            &[(0, 1), (0, 2), (1, 3), (2, 3), (3, 4), (5, 0)],
            7,
            false,
        )
        .unwrap();
        let a = anchors(&[0], 7);
        let s = build_schedule(&g, &a, 7, ScheduleMode::BfsShell).unwrap();
        let dist = multi_source_bfs(&g, a.ids()).unwrap();
        let mut seen = std::collections::HashSet::new();
        for l in 0..7 {
            for &v in s.src(l) {
                assert_eq!(dist.get(v), Some(l as u32));
                assert!(seen.insert(v), "node {v} appears in two shells");
            }
        }
        let reachable = (0..7u32).filter(|&v| dist.get(v).is_some()).count();
        assert_eq!(seen.len(), reachable);
    }

    #[test]
    fn shells_have_no_gaps() {
        let g = build_graph(&[(0, 1), (1, 2), (2, 3)], 6, false).unwrap();
        let s = build_schedule(&g, &anchors(&[0], 6), 6, ScheduleMode::BfsShell).unwrap();
        let mut seen_empty = false;
        for l in 0..6 {
            if s.src(l).is_empty() {
                seen_empty = true;
            } else {
                assert!(!seen_empty, "nonempty shell after an empty one");
            }
        }
    }

    #[test]
    fn all_anchors_on_bidirected_graph_keeps_every_edge_active() {
        let g = build_graph(&[(0, 1), (1, 2), (2, 0), (2, 3)], 4, true).unwrap();
        let a = anchors(&[0, 1, 2, 3], 4);
        let s = build_schedule(&g, &a, 3, ScheduleMode::Literal).unwrap();
        let all: std::collections::BTreeSet<(u32, u32)> = g.edges().iter().copied().collect();
        for l in 0..3 {
            assert_eq!(s.src(l), &[0, 1, 2, 3]);
            let active: std::collections::BTreeSet<(u32, u32)> =
                s.active_edges(&g, l).collect();
            assert_eq!(active, all);
        }
    }

    #[test]
    fn active_edges_filter_by_source_membership() {
        let g = build_graph(&[(0, 1), (1, 2), (2, 0)], 3, false).unwrap();
        let s = build_schedule(&g, &anchors(&[0], 3), 2, ScheduleMode::Literal).unwrap();
        let layer0: Vec<(u32, u32)> = s.active_edges(&g, 0).collect();
        assert_eq!(layer0, vec![(0, 1)]);
        let layer1: Vec<(u32, u32)> = s.active_edges(&g, 1).collect();
        assert_eq!(layer1, vec![(1, 2)]);
    }

    #[test]
    fn rejects_zero_layers() {
        let g = build_graph(&[(0, 1)], 2, false).unwrap();
        assert!(matches!(
            build_schedule(&g, &anchors(&[0], 2), 0, ScheduleMode::Literal),
            Err(ScheduleError::ZeroLayers)
        ));
    }

    #[test]
    fn text_dump_lists_layers() {
        let g = build_graph(&[(0, 1), (1, 2)], 3, false).unwrap();
        let s = build_schedule(&g, &anchors(&[0], 3), 2, ScheduleMode::Literal).unwrap();
        let text = s.to_text();
        assert!(text.contains("mode: literal"));
        assert!(text.contains("layer 1: size=1 0"));
        assert!(text.contains("layer 2: size=1 1"));
    }
}
