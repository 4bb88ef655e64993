//! Executable position certifiers.
//!
//! Both certifiers run a hand-constructed, integer-exact message passing
//! over the frontier schedule and compare the decoded distances against the
//! BFS oracle. No learned parameters are involved: the claims under test
//! assert that such a propagation EXISTS, so the constructed function itself
//! is the testable artifact.
//!
//! The set-distance certifier advances the frontier by distance shells:
//! first-arrival semantics make its freeze rule exact. The per-anchor
//! certifier must use the literal successor frontier instead. Joint shells
//! die once the set's eccentricity is exhausted, yet a single anchor's
//! distance to a far node can exceed it (two anchors on the ends of a
//! bidirected 5-path never ship the far anchor's bit to the opposite end
//! under shells); the literal frontier keeps cycling and delivers every
//! bit at exactly its single-source distance.

use std::fmt::Write as _;

use thiserror::Error;

use crate::anchors::{AnchorError, AnchorSet};
use crate::graph::{multi_source_bfs, DistanceVector, Graph, GraphError};
use crate::schedule::{build_schedule, ScheduleError, ScheduleMode};

#[derive(Debug, Error)]
pub enum CertifyError {
    #[error("layer budget {layers} too small: frontier still delivering new arrivals afterwards")]
    LTooSmall { layers: usize },
    #[error(transparent)]
    Anchor(#[from] AnchorError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// The paper's piecewise distance-update rule: a cell freezes after its
/// first nonzero write; the indicator bit stamps depth+1 on first arrival.
pub fn fd(spd: u32, depth: u32, ind: u8) -> u32 {
    debug_assert!(ind <= 1, "ind must be a bit");
    if ind == 1 && spd == 0 {
        depth + 1
    } else {
        spd
    }
}

/// Reachability squash: zero stays zero, anything positive becomes one.
pub fn to_ind(x: f64) -> u8 {
    debug_assert!(x >= 0.0, "to_ind on negative input");
    if x > 0.0 {
        1
    } else {
        0
    }
}

/// Decoded position of one node relative to an anchor (set or single).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecodedPosition {
    /// The node is the anchor (or in the anchor set); reads as distance 0.
    Anchor,
    /// The propagation never reached the node.
    Unreached,
    Distance(u32),
}

impl DecodedPosition {
    pub fn as_distance(self) -> Option<u32> {
        match self {
            DecodedPosition::Anchor => Some(0),
            DecodedPosition::Unreached => None,
            DecodedPosition::Distance(d) => Some(d),
        }
    }
}

/// One disagreement between the construction and the BFS oracle.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mismatch {
    pub node: u32,
    /// Anchor column for the per-anchor certifier; None for set distances.
    pub anchor: Option<u32>,
    pub expected: Option<u32>,
    pub got: Option<u32>,
}

/// Outcome of comparing every scored entry against the oracle.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Verdict {
    pub checked: usize,
    pub mismatches: Vec<Mismatch>,
}

impl Verdict {
    pub fn passed(&self) -> bool {
        self.mismatches.is_empty()
    }

    /// Structured text report: header plus one line per mismatch.
    pub fn to_text(&self, title: &str) -> String {
        let mut out = String::new();
        let status = if self.passed() { "PASS" } else { "FAIL" };
        writeln!(
            out,
            "{title}: {status} ({} entries checked, {} mismatches)",
            self.checked,
            self.mismatches.len()
        )
        .unwrap();
        let fmt = |d: Option<u32>| match d {
            Some(d) => d.to_string(),
            None => "unreached".into(),
        };
        for m in &self.mismatches {
            match m.anchor {
                Some(a) => writeln!(
                    out,
                    "node {} anchor {}: expected {}, got {}",
                    m.node,
                    a,
                    fmt(m.expected),
                    fmt(m.got)
                )
                .unwrap(),
                None => writeln!(
                    out,
                    "node {}: expected {}, got {}",
                    m.node,
                    fmt(m.expected),
                    fmt(m.got)
                )
                .unwrap(),
            }
        }
        out
    }
}

/// Set-distance certificate: decoded distance-to-anchor-set per node.
#[derive(Debug)]
pub struct SetDistanceCertificate {
    pub decoded: Vec<DecodedPosition>,
    pub oracle: DistanceVector,
    pub verdict: Verdict,
}

/// Runs the set-distance construction over `l_layers` shell frontiers and
/// compares with the multi-source BFS oracle.
///
/// One probe layer beyond the budget detects an insufficient `l_layers`:
/// shells are gap-free, so a first arrival at layer L+1 certifies a
/// reachable node at distance L+1, and silence certifies completeness.
pub fn certify_set_distance(
    g: &Graph,
    anchors: &AnchorSet,
    l_layers: usize,
) -> Result<SetDistanceCertificate, CertifyError> {
    if l_layers == 0 {
        return Err(ScheduleError::ZeroLayers.into());
    }
    let n = g.node_count();
    let schedule = build_schedule(g, anchors, l_layers + 1, ScheduleMode::BfsShell)?;
    let mut spd = vec![0u32; n];

    for layer in 1..=l_layers + 1 {
        let mut fired = false;
        for v in 0..n as u32 {
            let ind = g
                .in_neighbors(v)
                .iter()
                .any(|&u| schedule.contains(layer - 1, u)) as u8;
            let next = fd(spd[v as usize], (layer - 1) as u32, ind);
            if next != spd[v as usize] {
                spd[v as usize] = next;
                if !anchors.contains(v) {
                    fired = true;
                }
            }
        }
        if layer == l_layers + 1 && fired {
            return Err(CertifyError::LTooSmall { layers: l_layers });
        }
    }

    let decoded: Vec<DecodedPosition> = (0..n as u32)
        .map(|v| {
            if anchors.contains(v) {
                DecodedPosition::Anchor
            } else if spd[v as usize] == 0 {
                DecodedPosition::Unreached
            } else {
                DecodedPosition::Distance(spd[v as usize])
            }
        })
        .collect();

    let oracle = multi_source_bfs(g, anchors.ids())?;
    let mut mismatches = Vec::new();
    let mut checked = 0;
    for v in 0..n as u32 {
        if anchors.contains(v) {
            continue;
        }
        checked += 1;
        let expected = oracle.get(v);
        let got = decoded[v as usize].as_distance();
        if expected != got {
            mismatches.push(Mismatch {
                node: v,
                anchor: None,
                expected,
                got,
            });
        }
    }

    Ok(SetDistanceCertificate {
        decoded,
        oracle,
        verdict: Verdict {
            checked,
            mismatches,
        },
    })
}

/// Per-anchor certificate: decoded distance matrix, one column per anchor
/// (sorted anchor order).
#[derive(Debug)]
pub struct PerAnchorCertificate {
    pub anchors: Vec<u32>,
    /// decoded[v][j]: position of node v relative to anchor j.
    pub decoded: Vec<Vec<DecodedPosition>>,
    pub verdict: Verdict,
}

/// Runs the per-anchor construction on the literal successor frontier and
/// compares the full matrix against one BFS per anchor.
///
/// Layer 1 seeds each node's reachability vector with its anchor one-hot;
/// later layers squash (own + mean of active in-neighbor vectors). A bit's
/// first arrival stamps that column's distance via the freeze rule. The
/// probe layer L+1 detects an undersized budget exactly as in the
/// set-distance certifier.
pub fn certify_per_anchor(
    g: &Graph,
    anchors: &AnchorSet,
    l_layers: usize,
) -> Result<PerAnchorCertificate, CertifyError> {
    if l_layers == 0 {
        return Err(ScheduleError::ZeroLayers.into());
    }
    let n = g.node_count();
    let k = anchors.len();
    let schedule = build_schedule(g, anchors, l_layers + 1, ScheduleMode::Literal)?;

    let onehot: Vec<Vec<f64>> = (0..n as u32)
        .map(|v| {
            let mut row = vec![0.0; k];
            if let Some(j) = anchors.position(v) {
                row[j] = 1.0;
            }
            row
        })
        .collect();

    let mut ind: Vec<Vec<u8>> = vec![vec![0; k]; n];
    let mut spd: Vec<Vec<u32>> = vec![vec![0; k]; n];

    for layer in 1..=l_layers + 1 {
        let prev: Vec<Vec<f64>> = if layer == 1 {
            onehot.clone()
        } else {
            ind.iter()
                .map(|row| row.iter().map(|&b| b as f64).collect())
                .collect()
        };
        let mut fired = false;
        let mut next_ind = vec![vec![0u8; k]; n];
        for v in 0..n {
            let active: Vec<u32> = g
                .in_neighbors(v as u32)
                .iter()
                .copied()
                .filter(|&u| schedule.contains(layer - 1, u))
                .collect();
            for j in 0..k {
                let mut acc = prev[v][j];
                if !active.is_empty() {
                    let mean = active
                        .iter()
                        .map(|&u| prev[u as usize][j])
                        .sum::<f64>()
                        / active.len() as f64;
                    acc += mean;
                }
                let bit = to_ind(acc);
                next_ind[v][j] = bit;
                if bit == 1 && ind[v][j] == 0 && layer > 1 {
                    fired = true;
                }
                spd[v][j] = fd(spd[v][j], (layer - 1) as u32, bit);
            }
        }
        ind = next_ind;
        if layer == l_layers + 1 && fired {
            return Err(CertifyError::LTooSmall { layers: l_layers });
        }
    }

    let ids = anchors.ids().to_vec();
    let decoded: Vec<Vec<DecodedPosition>> = (0..n as u32)
        .map(|v| {
            (0..k)
                .map(|j| {
                    if ids[j] == v {
                        DecodedPosition::Anchor
                    } else if spd[v as usize][j] == 0 {
                        DecodedPosition::Unreached
                    } else {
                        DecodedPosition::Distance(spd[v as usize][j])
                    }
                })
                .collect()
        })
        .collect();

    let mut mismatches = Vec::new();
    let mut checked = 0;
    for (j, &a) in ids.iter().enumerate() {
        let oracle = multi_source_bfs(g, &[a])?;
        for v in 0..n as u32 {
            if v == a {
                continue;
            }
            checked += 1;
            let expected = oracle.get(v);
            let got = decoded[v as usize][j].as_distance();
            if expected != got {
                mismatches.push(Mismatch {
                    node: v,
                    anchor: Some(a),
                    expected,
                    got,
                });
            }
        }
    }

    Ok(PerAnchorCertificate {
        anchors: ids,
        decoded,
        verdict: Verdict {
            checked,
            mismatches,
        },
    })
}
