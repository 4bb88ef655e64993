//! Experiment orchestration: dataset materialization, multi-seed training
//! runs, CSV emission, and aggregation.
//!
//! A run grid is (split seed x model seed): each split seed fixes the
//! train/val/test partition, each model seed fixes initialization (and
//! random anchor draws). The test metric is read off the best-validation
//! parameters. Runs are fully deterministic given the config; only the
//! wall-time column varies between reruns.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::anchors::{select_anchors, AnchorError, AnchorSet, AnchorStrategy};
use crate::fusion::{
    bundle_complementarity, bundle_logits, fused_accuracy, predictions_at, two_stage_train,
    ExpertSpec, FusionError, FusionMode, FusionOptions,
};
use crate::graph::{
    build_graph, make_mirror_graph, read_edge_list, read_label_file, split_dataset, ArmSpec,
    Graph, GraphError, LabeledTask, NodeFeatures, SplitSpec, TaskKind,
};
use crate::metrics::{accuracy, mean_std, MetricError};
use crate::model::{
    evaluate_split, model_outputs, train_model, Hyper, ModelConfig, ModelError, Variant,
};
use crate::schedule::ScheduleMode;
use crate::synth::{
    community_pair_task, degree_quartile_task, link_prediction_task, make_two_view_fixture,
    preferential_graph, random_digraph, sbm_graph,
};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config invalid: {0}")]
    InvalidConfig(String),
    #[error("dataset file missing: {0}")]
    MissingFile(PathBuf),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Anchor(#[from] AnchorError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("config parse error: {0}")]
    Serde(#[from] serde_json::Error),
}

/// Where a dataset comes from: a file on disk or a seeded generator.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DatasetSource {
    /// Whitespace-separated edge list; labels file for node tasks (node
    /// label per line) or community file for pair tasks.
    EdgeList {
        edges: PathBuf,
        task: TaskKind,
        #[serde(default)]
        labels: Option<PathBuf>,
        /// Treat each listed edge as bidirected.
        #[serde(default)]
        undirected: bool,
        /// Pair count for node-pair classification.
        #[serde(default = "default_pairs")]
        pairs: usize,
        #[serde(default)]
        task_seed: u64,
    },
    /// Stochastic block model, same/cross-community pair classification.
    SbmPairs {
        n: usize,
        communities: usize,
        p_in: f64,
        p_out: f64,
        pairs: usize,
        seed: u64,
    },
    /// Stochastic block model, community membership classification.
    SbmNodes {
        n: usize,
        communities: usize,
        p_in: f64,
        p_out: f64,
        seed: u64,
    },
    /// Preferential attachment, degree-quartile classification.
    DegreeNodes { n: usize, attach: usize, seed: u64 },
    /// Sparse random digraph, link prediction on held-out edges.
    RandomLp {
        n: usize,
        mean_out_degree: f64,
        seed: u64,
    },
    /// Stochastic block model, link prediction on held-out edges.
    SbmLp {
        n: usize,
        communities: usize,
        p_in: f64,
        p_out: f64,
        seed: u64,
    },
    /// Mirror fixture (two star arms joined by a bridge), same-arm pair
    /// classification. Structure-blind models cannot beat chance here;
    /// arm-asymmetric anchors make the arms separable.
    MirrorPairs {
        arm_leaves: usize,
        pairs: usize,
        seed: u64,
    },
    /// The two-view fusion fixture (node classification).
    TwoView { children: usize },
}

fn default_pairs() -> usize {
    400
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub name: String,
    #[serde(flatten)]
    pub source: DatasetSource,
}

/// A materialized dataset: graph, node attributes, and the labeled task.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub name: String,
    pub graph: Graph,
    pub features: NodeFeatures,
    pub task: LabeledTask,
}

pub fn materialize_dataset(spec: &DatasetSpec) -> Result<Dataset, HarnessError> {
    let (graph, features, task) = match &spec.source {
        DatasetSource::EdgeList {
            edges,
            task,
            labels,
            undirected,
            pairs,
            task_seed,
        } => {
            if !edges.exists() {
                return Err(HarnessError::MissingFile(edges.clone()));
            }
            let edge_pairs = read_edge_list(edges)?;
            let n = edge_pairs
                .iter()
                .map(|&(u, v)| u.max(v) as usize + 1)
                .max()
                .unwrap_or(0);
            let g = build_graph(&edge_pairs, n, *undirected)?;
            let t = match task {
                TaskKind::LinkPrediction => link_prediction_task(&g, *task_seed)?,
                TaskKind::NodeClassification => {
                    let path = labels.as_ref().ok_or_else(|| {
                        HarnessError::InvalidConfig(
                            "node classification needs a labels file".into(),
                        )
                    })?;
                    if !path.exists() {
                        return Err(HarnessError::MissingFile(path.clone()));
                    }
                    read_label_file(path, TaskKind::NodeClassification)?
                }
                TaskKind::NodePairClassification => {
                    let path = labels.as_ref().ok_or_else(|| {
                        HarnessError::InvalidConfig(
                            "pair classification needs a community file".into(),
                        )
                    })?;
                    if !path.exists() {
                        return Err(HarnessError::MissingFile(path.clone()));
                    }
                    let communities = read_label_file(path, TaskKind::NodeClassification)?;
                    let membership: Vec<u32> =
                        communities.node_items().iter().map(|&(_, c)| c).collect();
                    community_pair_task(&membership, *pairs, *task_seed)
                }
            };
            t.validate(n)?;
            let x = NodeFeatures::ones(n);
            (g, x, t)
        }
        DatasetSource::SbmPairs {
            n,
            communities,
            p_in,
            p_out,
            pairs,
            seed,
        } => {
            let (g, membership) = sbm_graph(*n, *communities, *p_in, *p_out, *seed)?;
            let t = community_pair_task(&membership, *pairs, seed.wrapping_add(1));
            let x = NodeFeatures::ones(*n);
            (g, x, t)
        }
        DatasetSource::SbmNodes {
            n,
            communities,
            p_in,
            p_out,
            seed,
        } => {
            let (g, membership) = sbm_graph(*n, *communities, *p_in, *p_out, *seed)?;
            let labels: Vec<(u32, u32)> = membership
                .iter()
                .enumerate()
                .map(|(v, &c)| (v as u32, c))
                .collect();
            let x = NodeFeatures::ones(*n);
            (g, x, LabeledTask::node_classification(labels))
        }
        DatasetSource::DegreeNodes { n, attach, seed } => {
            let g = preferential_graph(*n, *attach, *seed)?;
            let t = degree_quartile_task(&g);
            let x = NodeFeatures::ones(*n);
            (g, x, t)
        }
        DatasetSource::RandomLp {
            n,
            mean_out_degree,
            seed,
        } => {
            let g = random_digraph(*n, *mean_out_degree, *seed)?;
            let t = link_prediction_task(&g, seed.wrapping_add(1))?;
            let x = NodeFeatures::ones(*n);
            (g, x, t)
        }
        DatasetSource::SbmLp {
            n,
            communities,
            p_in,
            p_out,
            seed,
        } => {
            let (g, _) = sbm_graph(*n, *communities, *p_in, *p_out, *seed)?;
            let t = link_prediction_task(&g, seed.wrapping_add(1))?;
            let x = NodeFeatures::ones(*n);
            (g, x, t)
        }
        DatasetSource::MirrorPairs {
            arm_leaves,
            pairs,
            seed,
        } => {
            let (g, _) = make_mirror_graph(&ArmSpec::star(*arm_leaves))?;
            let n = g.node_count();
            // Same-arm vs cross-arm classification over leaf pairs only.
            // Leaves share one degree class, so a structure-blind model
            // sees exactly interchangeable endpoints.
            let s = *arm_leaves;
            let k = s + 1;
            let side_a: Vec<u32> = (1..=s as u32).collect();
            let side_b: Vec<u32> = (k as u32 + 1..=(k + s) as u32).collect();
            let mut same = Vec::new();
            for arm in [&side_a, &side_b] {
                for i in 0..arm.len() {
                    for j in i + 1..arm.len() {
                        same.push((arm[i], arm[j], 1u8));
                    }
                }
            }
            let mut cross = Vec::new();
            for &u in &side_a {
                for &v in &side_b {
                    cross.push((u, v, 0u8));
                }
            }
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            same.shuffle(&mut rng);
            cross.shuffle(&mut rng);
            let half = (*pairs / 2).min(same.len()).min(cross.len());
            same.truncate(half);
            cross.truncate(half);
            same.extend(cross);
            let t = LabeledTask::node_pair_classification(same);
            let x = NodeFeatures::ones(n);
            (g, x, t)
        }
        DatasetSource::TwoView { children } => {
            let fix = make_two_view_fixture(*children);
            (fix.graph, fix.features, fix.task)
        }
    };
    Ok(Dataset {
        name: spec.name.clone(),
        graph,
        features,
        task,
    })
}

fn default_layers() -> usize {
    3
}

fn default_hidden() -> usize {
    32
}

fn default_sets() -> usize {
    1
}

fn default_anchor_count() -> usize {
    16
}

fn default_strategy() -> AnchorStrategy {
    AnchorStrategy::TopDegree
}

fn default_mode() -> ScheduleMode {
    ScheduleMode::Literal
}

/// One experiment: a dataset, a model variant, and the seed grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    pub variant: Variant,
    #[serde(default = "default_layers")]
    pub layers: usize,
    #[serde(default = "default_hidden")]
    pub hidden: usize,
    #[serde(default = "default_sets")]
    pub num_anchor_sets: usize,
    #[serde(default = "default_mode")]
    pub schedule_mode: ScheduleMode,
    #[serde(default = "default_strategy")]
    pub anchor_strategy: AnchorStrategy,
    #[serde(default = "default_anchor_count")]
    pub anchor_count: usize,
    #[serde(default)]
    pub hyper: Hyper,
    pub seeds: Vec<u64>,
    pub split_seeds: Vec<u64>,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.seeds.is_empty() {
            return Err(HarnessError::InvalidConfig("seed list is empty".into()));
        }
        if self.split_seeds.is_empty() {
            return Err(HarnessError::InvalidConfig(
                "split seed list is empty".into(),
            ));
        }
        if self.variant.needs_anchors() && self.anchor_count == 0 {
            return Err(HarnessError::InvalidConfig(format!(
                "variant {} needs anchors but anchor_count is 0",
                self.variant
            )));
        }
        Ok(())
    }

    fn model_config(&self, out_dim: usize) -> ModelConfig {
        ModelConfig {
            variant: self.variant,
            layers: self.layers,
            hidden: self.hidden,
            out_dim,
            num_anchor_sets: self.num_anchor_sets,
            schedule_mode: self.schedule_mode,
        }
    }
}

pub fn load_experiment_config(path: &Path) -> Result<ExperimentConfig, HarnessError> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

/// Output width: class count for node classification, embedding width for
/// pair tasks (scored by row dot products).
pub fn task_out_dim(task: &LabeledTask, hidden: usize) -> usize {
    match task.kind {
        TaskKind::NodeClassification => task.num_classes(),
        _ => hidden,
    }
}

pub fn metric_name_for(task: &LabeledTask) -> &'static str {
    match task.kind {
        TaskKind::NodeClassification => "test-acc",
        _ => "test-auc",
    }
}

/// The message-passing graph for a run. For link prediction, positive
/// validation/test edges are removed (both directions) so training cannot
/// read the held-out answers off the adjacency structure.
pub fn message_graph(g: &Graph, task: &LabeledTask, split: &SplitSpec) -> Result<Graph, GraphError> {
    if task.kind != TaskKind::LinkPrediction {
        return Ok(g.clone());
    }
    let items = task.pair_items();
    let mut held: std::collections::HashSet<(u32, u32)> = std::collections::HashSet::new();
    for &i in split.val.iter().chain(&split.test) {
        let (u, v, label) = items[i];
        if label == 1 {
            held.insert((u, v));
            held.insert((v, u));
        }
    }
    let kept: Vec<(u32, u32)> = g
        .edges()
        .iter()
        .copied()
        .filter(|e| !held.contains(e))
        .collect();
    build_graph(&kept, g.node_count(), false)
}

/// One (split seed, model seed) cell of the run grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeedRun {
    pub seed: u64,
    pub split_seed: u64,
    /// Test metric; NaN when the run diverged.
    pub metric: f64,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub wall_ms: u128,
    pub diverged: bool,
}

/// All runs for one (dataset, variant) configuration plus their aggregate.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub dataset: String,
    pub task: TaskKind,
    pub variant: Variant,
    pub metric_name: String,
    pub runs: Vec<SeedRun>,
    /// Mean over non-diverged runs.
    pub mean: f64,
    /// Sample standard deviation over non-diverged runs.
    pub std: f64,
    pub diverged: usize,
}

fn aggregate_seed_runs(runs: &[SeedRun]) -> (f64, f64, usize) {
    let good: Vec<f64> = runs
        .iter()
        .filter(|r| !r.diverged)
        .map(|r| r.metric)
        .collect();
    let diverged = runs.len() - good.len();
    if good.is_empty() {
        (f64::NAN, f64::NAN, diverged)
    } else {
        let (m, s) = mean_std(&good);
        (m, s, diverged)
    }
}

/// Runs the full seed grid for one configuration.
///
/// Divergent runs are kept in the per-seed list, flagged, and excluded
/// from the aggregate.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunResult, HarnessError> {
    config.validate()?;
    let data = materialize_dataset(&config.dataset)?;
    let out_dim = task_out_dim(&data.task, config.hidden);
    let model_config = config.model_config(out_dim);
    let metric_name = metric_name_for(&data.task);

    let mut runs = Vec::with_capacity(config.split_seeds.len() * config.seeds.len());
    for &split_seed in &config.split_seeds {
        let split = split_dataset(&data.task, split_seed)?;
        let msg_graph = message_graph(&data.graph, &data.task, &split)?;
        for &seed in &config.seeds {
            let start = Instant::now();
            let anchors = if config.variant.needs_anchors() {
                Some(select_anchors(
                    &msg_graph,
                    config.anchor_count,
                    config.anchor_strategy,
                    seed,
                )?)
            } else {
                None
            };
            let mut hyper = config.hyper.clone();
            hyper.seed = seed;
            let outcome = train_model(
                &model_config,
                &msg_graph,
                anchors.as_ref(),
                &data.features,
                &data.task,
                &split,
                &hyper,
            );
            let run = match outcome {
                Ok(out) => {
                    let z = model_outputs(
                        &model_config,
                        &out.params,
                        &msg_graph,
                        anchors.as_ref(),
                        &data.features,
                    )?;
                    let metric = evaluate_split(&z, &data.task, &split.test)?;
                    SeedRun {
                        seed,
                        split_seed,
                        metric,
                        best_epoch: out.best_epoch,
                        epochs_run: out.epochs_run,
                        wall_ms: start.elapsed().as_millis(),
                        diverged: false,
                    }
                }
                Err(ModelError::Diverged { epoch }) => SeedRun {
                    seed,
                    split_seed,
                    metric: f64::NAN,
                    best_epoch: epoch,
                    epochs_run: epoch,
                    wall_ms: start.elapsed().as_millis(),
                    diverged: true,
                },
                Err(e) => return Err(e.into()),
            };
            runs.push(run);
        }
    }

    let (mean, std, diverged) = aggregate_seed_runs(&runs);
    Ok(RunResult {
        dataset: data.name,
        task: data.task.kind,
        variant: config.variant,
        metric_name: metric_name.to_string(),
        runs,
        mean,
        std,
        diverged,
    })
}

/// One emitted CSV row.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvRow {
    pub dataset: String,
    pub task: String,
    pub variant: String,
    pub seed: u64,
    pub split_seed: u64,
    pub metric_name: String,
    pub metric_value: f64,
    pub epochs_run: usize,
    pub wall_ms: u128,
}

pub const RUNS_HEADER: &str =
    "dataset,task,variant,seed,split_seed,metric_name,metric_value,epochs_run,wall_ms";

fn task_str(kind: TaskKind) -> &'static str {
    match kind {
        TaskKind::NodeClassification => "node-classification",
        TaskKind::LinkPrediction => "link-prediction",
        TaskKind::NodePairClassification => "node-pair-classification",
    }
}

pub fn result_rows(result: &RunResult) -> Vec<CsvRow> {
    result
        .runs
        .iter()
        .map(|r| CsvRow {
            dataset: result.dataset.clone(),
            task: task_str(result.task).to_string(),
            variant: result.variant.to_string(),
            seed: r.seed,
            split_seed: r.split_seed,
            metric_name: if r.diverged {
                "diverged".to_string()
            } else {
                result.metric_name.clone()
            },
            metric_value: r.metric,
            epochs_run: r.epochs_run,
            wall_ms: r.wall_ms,
        })
        .collect()
}

/// Canonical emission order, independent of how runs were collected.
pub fn sort_rows(rows: &mut [CsvRow]) {
    rows.sort_by(|a, b| {
        (&a.dataset, &a.task, &a.variant, a.split_seed, a.seed, &a.metric_name).cmp(&(
            &b.dataset,
            &b.task,
            &b.variant,
            b.split_seed,
            b.seed,
            &b.metric_name,
        ))
    });
}

pub fn runs_csv(rows: &[CsvRow]) -> String {
    let mut out = String::from(RUNS_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.dataset,
            r.task,
            r.variant,
            r.seed,
            r.split_seed,
            r.metric_name,
            r.metric_value,
            r.epochs_run,
            r.wall_ms
        ));
    }
    out
}

pub fn parse_runs_csv(text: &str) -> Result<Vec<CsvRow>, HarnessError> {
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 {
            if line != RUNS_HEADER {
                return Err(HarnessError::InvalidConfig(format!(
                    "unexpected CSV header: {line}"
                )));
            }
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 9 {
            return Err(HarnessError::InvalidConfig(format!(
                "CSV line {i} has {} fields",
                parts.len()
            )));
        }
        let parse = |s: &str, what: &str| -> Result<f64, HarnessError> {
            s.parse()
                .map_err(|_| HarnessError::InvalidConfig(format!("bad {what} on line {i}: {s}")))
        };
        rows.push(CsvRow {
            dataset: parts[0].to_string(),
            task: parts[1].to_string(),
            variant: parts[2].to_string(),
            seed: parse(parts[3], "seed")? as u64,
            split_seed: parse(parts[4], "split_seed")? as u64,
            metric_name: parts[5].to_string(),
            metric_value: parse(parts[6], "metric_value")?,
            epochs_run: parse(parts[7], "epochs_run")? as usize,
            wall_ms: parse(parts[8], "wall_ms")? as u128,
        });
    }
    Ok(rows)
}

/// Aggregate statistics for one (dataset, task, variant, metric) group.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub dataset: String,
    pub task: String,
    pub variant: String,
    pub metric_name: String,
    pub runs: usize,
    pub diverged: usize,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

pub const SUMMARY_HEADER: &str =
    "dataset,task,variant,metric_name,runs,diverged,mean,std,min,max";

/// Groups rows by (dataset, task, variant, metric name) and computes mean,
/// sample standard deviation, min, and max. Diverged rows are counted
/// under every metric group of their (dataset, task, variant) and excluded
/// from the statistics.
pub fn aggregate_runs(rows: &[CsvRow]) -> Vec<SummaryRow> {
    let mut groups: BTreeMap<(String, String, String, String), Vec<f64>> = BTreeMap::new();
    let mut diverged: BTreeMap<(String, String, String), usize> = BTreeMap::new();
    for r in rows {
        if r.metric_name == "diverged" {
            *diverged
                .entry((r.dataset.clone(), r.task.clone(), r.variant.clone()))
                .or_default() += 1;
        } else {
            groups
                .entry((
                    r.dataset.clone(),
                    r.task.clone(),
                    r.variant.clone(),
                    r.metric_name.clone(),
                ))
                .or_default()
                .push(r.metric_value);
        }
    }
    groups
        .into_iter()
        .map(|((dataset, task, variant, metric_name), values)| {
            let (mean, std) = mean_std(&values);
            let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
            let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let d = diverged
                .get(&(dataset.clone(), task.clone(), variant.clone()))
                .copied()
                .unwrap_or(0);
            SummaryRow {
                dataset,
                task,
                variant,
                metric_name,
                runs: values.len(),
                diverged: d,
                mean,
                std,
                min,
                max,
            }
        })
        .collect()
}

pub fn summary_csv(summaries: &[SummaryRow]) -> String {
    let mut out = String::from(SUMMARY_HEADER);
    out.push('\n');
    for s in summaries {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            s.dataset,
            s.task,
            s.variant,
            s.metric_name,
            s.runs,
            s.diverged,
            s.mean,
            s.std,
            s.min,
            s.max
        ));
    }
    out
}

/// A grid of datasets x variants sharing the seed protocol. Splits are
/// shared across variants within each split seed so comparisons are fair.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepConfig {
    pub datasets: Vec<DatasetSpec>,
    pub variants: Vec<Variant>,
    #[serde(default = "default_layers")]
    pub layers: usize,
    #[serde(default = "default_hidden")]
    pub hidden: usize,
    #[serde(default = "default_sets")]
    pub num_anchor_sets: usize,
    #[serde(default = "default_mode")]
    pub schedule_mode: ScheduleMode,
    #[serde(default = "default_strategy")]
    pub anchor_strategy: AnchorStrategy,
    #[serde(default = "default_anchor_count")]
    pub anchor_count: usize,
    #[serde(default)]
    pub hyper: Hyper,
    pub seeds: Vec<u64>,
    pub split_seeds: Vec<u64>,
}

impl SweepConfig {
    pub fn experiments(&self) -> Vec<ExperimentConfig> {
        let mut out = Vec::with_capacity(self.datasets.len() * self.variants.len());
        for dataset in &self.datasets {
            for &variant in &self.variants {
                out.push(ExperimentConfig {
                    dataset: dataset.clone(),
                    variant,
                    layers: self.layers,
                    hidden: self.hidden,
                    num_anchor_sets: self.num_anchor_sets,
                    schedule_mode: self.schedule_mode,
                    anchor_strategy: self.anchor_strategy,
                    anchor_count: self.anchor_count,
                    hyper: self.hyper.clone(),
                    seeds: self.seeds.clone(),
                    split_seeds: self.split_seeds.clone(),
                });
            }
        }
        out
    }
}

pub fn load_sweep_config(path: &Path) -> Result<SweepConfig, HarnessError> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

pub fn run_sweep(config: &SweepConfig) -> Result<Vec<RunResult>, HarnessError> {
    config.experiments().iter().map(run_experiment).collect()
}

/// The paper-scale protocol: 20 model seeds x 5 split seeds.
pub fn full_protocol_seeds() -> (Vec<u64>, Vec<u64>) {
    ((0..20).collect(), (0..5).collect())
}

/// Desk-scale protocol: 5 model seeds x 3 split seeds.
pub fn desk_scale_seeds() -> (Vec<u64>, Vec<u64>) {
    ((0..5).collect(), (0..3).collect())
}

/// Fusion experiment: the two-expert bundle over a seed grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FusionExperimentConfig {
    pub dataset: DatasetSpec,
    pub modes: Vec<FusionMode>,
    #[serde(default = "default_layers")]
    pub layers: usize,
    #[serde(default = "default_hidden")]
    pub hidden: usize,
    #[serde(default = "default_fwr")]
    pub fwr_coefficient: f64,
    #[serde(default = "default_tau")]
    pub temperature: f64,
    /// Anchors for the frontier-view expert.
    #[serde(default = "default_fusion_anchors")]
    pub anchor_count: usize,
    #[serde(default)]
    pub hyper: Hyper,
    pub seeds: Vec<u64>,
    pub split_seeds: Vec<u64>,
}

fn default_fwr() -> f64 {
    0.1
}

fn default_tau() -> f64 {
    1.0
}

fn default_fusion_anchors() -> usize {
    1
}

pub fn load_fusion_config(path: &Path) -> Result<FusionExperimentConfig, HarnessError> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

/// The standard two-view expert pair: a frontier view (GIR-A from the
/// dataset-preferred anchor) and a neighborhood view (GCN).
pub fn two_view_experts(
    data: &Dataset,
    layers: usize,
    hidden: usize,
    anchors: AnchorSet,
) -> Vec<ExpertSpec> {
    let classes = data.task.num_classes();
    vec![
        ExpertSpec {
            config: ModelConfig::new(Variant::GirA, layers, hidden, classes),
            anchors: Some(anchors),
        },
        ExpertSpec {
            config: ModelConfig::new(Variant::Gcn, layers, hidden, classes),
            anchors: None,
        },
    ]
}

/// Runs fusion modes over the seed grid, emitting one row per metric:
/// per-expert test accuracy, fused test accuracy, and the bundle's
/// expert-complementarity aggregate on the test split.
pub fn run_fusion_experiment(
    config: &FusionExperimentConfig,
) -> Result<Vec<CsvRow>, HarnessError> {
    if config.seeds.is_empty() || config.split_seeds.is_empty() {
        return Err(HarnessError::InvalidConfig("seed lists must be nonempty".into()));
    }
    let data = materialize_dataset(&config.dataset)?;
    if data.task.kind != TaskKind::NodeClassification {
        return Err(HarnessError::InvalidConfig(
            "fusion experiments need a node classification dataset".into(),
        ));
    }
    let anchors = select_anchors(
        &data.graph,
        config.anchor_count,
        AnchorStrategy::TopDegree,
        0,
    )?;
    let specs = two_view_experts(&data, config.layers, config.hidden, anchors);

    let mut rows = Vec::new();
    for &split_seed in &config.split_seeds {
        let split = split_dataset(&data.task, split_seed)?;
        for &seed in &config.seeds {
            for &mode in &config.modes {
                let start = Instant::now();
                let mut hyper = config.hyper.clone();
                hyper.seed = seed;
                let options = FusionOptions {
                    mode,
                    fwr_coefficient: config.fwr_coefficient,
                    temperature: config.temperature,
                };
                let out = two_stage_train(
                    &specs,
                    &data.graph,
                    &data.features,
                    &data.task,
                    &split,
                    &hyper,
                    &options,
                )?;
                let logits = bundle_logits(&out.bundle, &data.graph, &data.features)?;
                let fused = fused_accuracy(&logits, &out.gate, &data.task, &split.test)?;
                let labels: Vec<u32> = split
                    .test
                    .iter()
                    .map(|&i| data.task.node_items()[i].1)
                    .collect();
                let ec = bundle_complementarity(&logits, &data.task, &split.test)?;
                let wall_ms = start.elapsed().as_millis();
                let variant = format!("gcn-gir-{}", mode.as_str());
                let epochs_run = out.trace.len();
                let mut push = |metric_name: &str, value: f64| {
                    rows.push(CsvRow {
                        dataset: data.name.clone(),
                        task: task_str(data.task.kind).to_string(),
                        variant: variant.clone(),
                        seed,
                        split_seed,
                        metric_name: metric_name.to_string(),
                        metric_value: value,
                        epochs_run,
                        wall_ms,
                    });
                };
                for (i, z) in logits.iter().enumerate() {
                    let acc = accuracy(&predictions_at(z, &data.task, &split.test), &labels)?;
                    push(&format!("expert{i}-test-acc"), acc);
                }
                push("fused-test-acc", fused);
                push("ec-aggregate", ec.aggregate);
            }
        }
    }
    Ok(rows)
}
