//! JSON-in, JSON-out bindings for the static demo page.
//!
//! Every exported function takes a JSON request string and returns a JSON
//! response string; failures come back as `{"error": "..."}` so the page
//! never has to catch thrown values.

use serde::{Deserialize, Serialize};
use serde_json::json;
use wasm_bindgen::prelude::wasm_bindgen;

use gir_core::anchors::AnchorSet;
use gir_core::certify::{certify_per_anchor, certify_set_distance, DecodedPosition};
use gir_core::graph::{build_graph, make_mirror_graph, multi_source_bfs, split_dataset, ArmSpec, Graph, NodeFeatures};
use gir_core::model::{train_model, Hyper, ModelConfig, Variant};
use gir_core::schedule::{build_schedule, ScheduleMode};
use gir_core::synth::sbm_graph;

fn respond(result: Result<serde_json::Value, String>) -> String {
    match result {
        Ok(value) => value.to_string(),
        Err(message) => json!({ "error": message }).to_string(),
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

#[derive(Deserialize)]
struct GraphReq {
    n: usize,
    edges: Vec<(u32, u32)>,
    #[serde(default)]
    undirected: bool,
    anchors: Vec<u32>,
}

impl GraphReq {
    fn build(&self) -> Result<(Graph, AnchorSet), String> {
        let g = build_graph(&self.edges, self.n, self.undirected).map_err(err)?;
        let anchors = AnchorSet::new(self.anchors.clone(), self.n).map_err(err)?;
        Ok((g, anchors))
    }
}

#[derive(Serialize)]
struct GraphView {
    name: String,
    n: usize,
    edges: Vec<(u32, u32)>,
    undirected: bool,
    anchors: Vec<u32>,
    /// Unit-square positions for drawing.
    layout: Vec<(f64, f64)>,
    /// Color group per node (community, arm, or hub/leaf role).
    groups: Vec<u32>,
}

fn ring_layout(ids: &[u32], center: (f64, f64), radius: f64, phase: f64) -> Vec<(u32, (f64, f64))> {
    let k = ids.len().max(1) as f64;
    ids.iter()
        .enumerate()
        .map(|(i, &v)| {
            let angle = phase + std::f64::consts::TAU * i as f64 / k;
            (v, (center.0 + radius * angle.cos(), center.1 + radius * angle.sin()))
        })
        .collect()
}

fn hub_ring_view() -> GraphView {
    let hubs = [0u32, 4, 8, 12];
    let mut edges = vec![(0u32, 4u32), (4, 8), (8, 12), (12, 0)];
    for hub in hubs {
        for leaf in 1..=3 {
            edges.push((hub, hub + leaf));
        }
    }
    let mut layout = vec![(0.0, 0.0); 16];
    let mut groups = vec![0u32; 16];
    for (i, (v, pos)) in ring_layout(&hubs, (0.5, 0.5), 0.18, -0.5).into_iter().enumerate() {
        layout[v as usize] = pos;
        let fan = ring_layout(
            &[v + 1, v + 2, v + 3],
            (0.5 + (pos.0 - 0.5) * 2.3, 0.5 + (pos.1 - 0.5) * 2.3),
            0.09,
            i as f64,
        );
        for (leaf, leaf_pos) in fan {
            layout[leaf as usize] = leaf_pos;
            groups[leaf as usize] = 1;
        }
    }
    GraphView {
        name: "hub-ring".into(),
        n: 16,
        edges,
        undirected: true,
        anchors: vec![0, 4],
        layout,
        groups,
    }
}

fn mirror_view(arm: ArmSpec, name: &str) -> Result<GraphView, String> {
    let k = arm.nodes;
    let (g, _) = make_mirror_graph(&arm).map_err(err)?;
    let n = g.node_count();
    let bridge = (2 * k) as u32;

    // Place each copy by hop depth from its root, fanning ties vertically.
    let depths = multi_source_bfs(&g, &[bridge]).map_err(err)?;
    let mut layout = vec![(0.5, 0.5); n];
    let mut groups = vec![2u32; n];
    for side in 0..2 {
        let ids: Vec<u32> = (side * k..(side + 1) * k).map(|v| v as u32).collect();
        let sign = if side == 0 { -1.0 } else { 1.0 };
        let mut by_depth: Vec<Vec<u32>> = Vec::new();
        for &v in &ids {
            let d = depths.get(v).unwrap_or(1).max(1) as usize;
            if by_depth.len() < d {
                by_depth.resize(d, Vec::new());
            }
            by_depth[d - 1].push(v);
        }
        for (d, shell) in by_depth.iter().enumerate() {
            for (j, &v) in shell.iter().enumerate() {
                let spread = (j as f64 + 0.5) / shell.len() as f64 - 0.5;
                layout[v as usize] = (0.5 + sign * 0.11 * (d as f64 + 1.0), 0.5 + spread * 0.8);
                groups[v as usize] = side as u32;
            }
        }
    }

    let edges: Vec<(u32, u32)> = g.edges().to_vec();
    Ok(GraphView {
        name: name.into(),
        n,
        edges,
        undirected: false,
        anchors: vec![0, k as u32],
        layout,
        groups,
    })
}

fn sbm_view(seed: u64) -> Result<GraphView, String> {
    let (n, communities) = (48, 3);
    let (g, membership) = sbm_graph(n, communities, 0.2, 0.02, seed).map_err(err)?;
    let centers = ring_layout(
        &(0..communities as u32).collect::<Vec<_>>(),
        (0.5, 0.5),
        0.27,
        -1.57,
    );
    let mut layout = vec![(0.5, 0.5); n];
    for c in 0..communities as u32 {
        let members: Vec<u32> = (0..n as u32).filter(|&v| membership[v as usize] == c).collect();
        let center = centers[c as usize].1;
        for (v, pos) in ring_layout(&members, center, 0.16, c as f64) {
            layout[v as usize] = pos;
        }
    }
    Ok(GraphView {
        name: "sbm".into(),
        n,
        edges: g.edges().to_vec(),
        undirected: false,
        anchors: vec![0, 1, 2],
        layout,
        groups: membership,
    })
}

/// Preset graphs for the page: "hub-ring", "mirror-path", "mirror-star",
/// or "sbm" (seeded).
#[wasm_bindgen]
pub fn demo_graph(kind: &str, seed: u32) -> String {
    respond(match kind {
        "hub-ring" => Ok(serde_json::to_value(hub_ring_view()).unwrap()),
        "mirror-path" => mirror_view(ArmSpec::path(5), "mirror-path")
            .map(|v| serde_json::to_value(v).unwrap()),
        "mirror-star" => mirror_view(ArmSpec::star(6), "mirror-star")
            .map(|v| serde_json::to_value(v).unwrap()),
        "sbm" => sbm_view(seed as u64).map(|v| serde_json::to_value(v).unwrap()),
        other => Err(format!("unknown preset '{other}'")),
    })
}

#[derive(Deserialize)]
struct ScheduleReq {
    #[serde(flatten)]
    graph: GraphReq,
    layers: usize,
    mode: String,
}

fn parse_mode(s: &str) -> Result<ScheduleMode, String> {
    match s {
        "literal" => Ok(ScheduleMode::Literal),
        "bfs-shell" => Ok(ScheduleMode::BfsShell),
        other => Err(format!("unknown mode '{other}'")),
    }
}

/// Per-layer frontier sets for the schedule explorer.
#[wasm_bindgen]
pub fn schedule_layers(req: &str) -> String {
    respond((|| {
        let req: ScheduleReq = serde_json::from_str(req).map_err(err)?;
        let (g, anchors) = req.graph.build()?;
        let mode = parse_mode(&req.mode)?;
        let schedule = build_schedule(&g, &anchors, req.layers, mode).map_err(err)?;
        let srcs: Vec<&[u32]> = (0..schedule.num_layers()).map(|l| schedule.src(l)).collect();
        Ok(json!({ "mode": req.mode, "srcs": srcs }))
    })())
}

fn decoded_json(d: DecodedPosition) -> serde_json::Value {
    match d {
        DecodedPosition::Anchor => json!("anchor"),
        DecodedPosition::Unreached => json!(null),
        DecodedPosition::Distance(k) => json!(k),
    }
}

#[derive(Deserialize)]
struct CertifyReq {
    #[serde(flatten)]
    graph: GraphReq,
    /// 0 selects a budget covering every finite single-anchor distance.
    layers: usize,
}

/// Set-distance and per-anchor certification with full decoded tables.
#[wasm_bindgen]
pub fn certify_view(req: &str) -> String {
    respond((|| {
        let req: CertifyReq = serde_json::from_str(req).map_err(err)?;
        let (g, anchors) = req.graph.build()?;
        let budget = if req.layers > 0 {
            req.layers
        } else {
            anchors
                .ids()
                .iter()
                .map(|&a| {
                    multi_source_bfs(&g, &[a])
                        .map(|d| d.max_finite().unwrap_or(0))
                        .unwrap_or(0)
                })
                .max()
                .unwrap_or(0)
                .max(1) as usize
        };

        let set = certify_set_distance(&g, &anchors, budget).map_err(err)?;
        let per = certify_per_anchor(&g, &anchors, budget).map_err(err)?;
        Ok(json!({
            "budget": budget,
            "set": {
                "decoded": set.decoded.iter().map(|&d| decoded_json(d)).collect::<Vec<_>>(),
                "oracle": set.oracle.iter().collect::<Vec<_>>(),
                "checked": set.verdict.checked,
                "passed": set.verdict.passed(),
            },
            "per_anchor": {
                "anchors": per.anchors,
                "decoded": per.decoded.iter()
                    .map(|row| row.iter().map(|&d| decoded_json(d)).collect::<Vec<_>>())
                    .collect::<Vec<_>>(),
                "checked": per.verdict.checked,
                "passed": per.verdict.passed(),
            },
        }))
    })())
}

#[derive(Deserialize)]
struct CompareReq {
    n: usize,
    communities: usize,
    p_in: f64,
    p_out: f64,
    seed: u64,
    layers: usize,
    hidden: usize,
    epochs: usize,
    anchor_count: usize,
}

/// Trains GCN and GIR-A side by side on a seeded community task and returns
/// both validation curves plus test accuracy.
#[wasm_bindgen]
pub fn train_compare(req: &str) -> String {
    respond((|| {
        let req: CompareReq = serde_json::from_str(req).map_err(err)?;
        if req.n > 400 || req.epochs > 400 {
            return Err("demo budget: n <= 400 and epochs <= 400".into());
        }
        let (g, membership) = sbm_graph(req.n, req.communities, req.p_in, req.p_out, req.seed)
            .map_err(err)?;
        let task = gir_core::graph::LabeledTask::node_classification(
            membership.iter().enumerate().map(|(v, &c)| (v as u32, c)).collect(),
        );
        let split = split_dataset(&task, 0).map_err(err)?;
        let x = NodeFeatures::ones(req.n);
        let anchors = gir_core::anchors::select_anchors(
            &g,
            req.anchor_count,
            gir_core::anchors::AnchorStrategy::GreedyCover,
            req.seed,
        )
        .map_err(err)?;
        let hyper = Hyper {
            epochs: req.epochs,
            patience: req.epochs,
            seed: req.seed,
            ..Hyper::default()
        };

        let run = |variant: Variant| -> Result<serde_json::Value, String> {
            let config = ModelConfig::new(variant, req.layers, req.hidden, task.num_classes());
            let anchor_ref = variant.needs_anchors().then_some(&anchors);
            let out = train_model(&config, &g, anchor_ref, &x, &task, &split, &hyper)
                .map_err(err)?;
            let z = gir_core::model::model_outputs(&config, &out.params, &g, anchor_ref, &x)
                .map_err(err)?;
            let test = gir_core::model::evaluate_split(&z, &task, &split.test).map_err(err)?;
            Ok(json!({
                "curve": out.trace.iter().map(|e| e.val_metric).collect::<Vec<_>>(),
                "loss": out.trace.iter().map(|e| e.train_loss).collect::<Vec<_>>(),
                "best_epoch": out.best_epoch,
                "test_acc": test,
            }))
        };

        Ok(json!({
            "anchors": anchors.ids(),
            "gcn": run(Variant::Gcn)?,
            "gir_a": run(Variant::GirA)?,
        }))
    })())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_render_and_schedule() {
        for kind in ["hub-ring", "mirror-path", "mirror-star", "sbm"] {
            let view: serde_json::Value = serde_json::from_str(&demo_graph(kind, 7)).unwrap();
            assert!(view.get("error").is_none(), "{kind}: {view}");
            let n = view["n"].as_u64().unwrap() as usize;
            assert_eq!(view["layout"].as_array().unwrap().len(), n);

            let req = json!({
                "n": n,
                "edges": view["edges"],
                "undirected": view["undirected"],
                "anchors": view["anchors"],
                "layers": 3,
                "mode": "bfs-shell",
            });
            let sched: serde_json::Value =
                serde_json::from_str(&schedule_layers(&req.to_string())).unwrap();
            assert_eq!(sched["srcs"].as_array().unwrap().len(), 3, "{kind}: {sched}");
        }
    }

    #[test]
    fn certify_view_passes_on_presets() {
        let view: serde_json::Value = serde_json::from_str(&demo_graph("hub-ring", 0)).unwrap();
        let req = json!({
            "n": view["n"],
            "edges": view["edges"],
            "undirected": view["undirected"],
            "anchors": view["anchors"],
            "layers": 0,
        });
        let out: serde_json::Value =
            serde_json::from_str(&certify_view(&req.to_string())).unwrap();
        assert_eq!(out["set"]["passed"], true, "{out}");
        assert_eq!(out["per_anchor"]["passed"], true, "{out}");
    }

    #[test]
    fn train_compare_reports_curves() {
        let req = json!({
            "n": 45, "communities": 3, "p_in": 0.2, "p_out": 0.02, "seed": 3,
            "layers": 2, "hidden": 8, "epochs": 15, "anchor_count": 6,
        });
        let out: serde_json::Value =
            serde_json::from_str(&train_compare(&req.to_string())).unwrap();
        assert!(out.get("error").is_none(), "{out}");
        assert_eq!(out["gcn"]["curve"].as_array().unwrap().len(), 15);
        assert_eq!(out["gir_a"]["curve"].as_array().unwrap().len(), 15);
    }

    #[test]
    fn errors_come_back_as_json() {
        let out: serde_json::Value = serde_json::from_str(&demo_graph("torus", 0)).unwrap();
        assert!(out["error"].as_str().unwrap().contains("torus"));

        let bad: serde_json::Value =
            serde_json::from_str(&schedule_layers("{not json")).unwrap();
        assert!(bad.get("error").is_some());
    }
}
