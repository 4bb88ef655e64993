//! The model family: GCN baselines and anchor-frontier models, with feature
//! augmentation, task decoders, and full-batch training.
//!
//! Every forward is expressed in ndiff primitives, so analytic gradients are
//! available for the whole family and the finite-difference check applies to
//! any variant end to end.

use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::anchors::{AnchorError, AnchorSet};
use crate::graph::{Graph, GraphError, LabeledTask, NodeFeatures, SplitSpec, TaskKind};
use crate::metrics::{accuracy, roc_auc, MetricError};
use crate::ndiff::{Adam, NdiffError, Tape, Tensor, Var};
use crate::schedule::{build_schedule, FrontierSchedule, ScheduleError, ScheduleMode};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("schedule has {got} layers, config wants {expected}")]
    ScheduleMismatch { expected: usize, got: usize },
    #[error("feature matrix has {got} rows for a graph of {expected} nodes")]
    FeatureRows { expected: usize, got: usize },
    #[error("anchor set required for this variant")]
    MissingAnchors,
    #[error("training diverged at epoch {epoch} (non-finite loss)")]
    Diverged { epoch: usize },
    #[error("task/split mismatch: {0}")]
    TaskMismatch(String),
    #[error(transparent)]
    Ndiff(#[from] NdiffError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error(transparent)]
    Anchor(#[from] AnchorError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Model variant. The -A suffix adds anchor one-hot labeling, -O node
/// one-hot labeling; MIX runs one frontier per anchor subset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Gcn,
    GcnA,
    GcnO,
    Gir,
    GirA,
    GirO,
    GirMix,
}

pub const ALL_VARIANTS: [Variant; 7] = [
    Variant::Gcn,
    Variant::GcnA,
    Variant::GcnO,
    Variant::Gir,
    Variant::GirA,
    Variant::GirO,
    Variant::GirMix,
];

impl Variant {
    pub fn is_gcn(self) -> bool {
        matches!(self, Variant::Gcn | Variant::GcnA | Variant::GcnO)
    }

    pub fn augment_mode(self) -> AugmentMode {
        match self {
            Variant::GcnA | Variant::GirA => AugmentMode::AnchorOnehot,
            Variant::GcnO | Variant::GirO => AugmentMode::NodeOnehot,
            _ => AugmentMode::None,
        }
    }

    /// Needs an anchor set to run (labeling or frontier propagation).
    pub fn needs_anchors(self) -> bool {
        !matches!(self, Variant::Gcn | Variant::GcnO)
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            Variant::Gcn => "gcn",
            Variant::GcnA => "gcn-a",
            Variant::GcnO => "gcn-o",
            Variant::Gir => "gir",
            Variant::GirA => "gir-a",
            Variant::GirO => "gir-o",
            Variant::GirMix => "gir-mix",
        };
        write!(f, "{name}")
    }
}

impl std::str::FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "gcn" => Ok(Variant::Gcn),
            "gcn-a" => Ok(Variant::GcnA),
            "gcn-o" => Ok(Variant::GcnO),
            "gir" => Ok(Variant::Gir),
            "gir-a" => Ok(Variant::GirA),
            "gir-o" => Ok(Variant::GirO),
            "gir-mix" => Ok(Variant::GirMix),
            other => Err(format!("unknown variant '{other}'")),
        }
    }
}

/// Feature labeling applied before the first layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AugmentMode {
    None,
    AnchorOnehot,
    NodeOnehot,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct ModelConfig {
    pub variant: Variant,
    pub layers: usize,
    pub hidden: usize,
    pub out_dim: usize,
    /// Number of anchor subsets; meaningful for GIR-MIX, 1 otherwise.
    pub num_anchor_sets: usize,
    pub schedule_mode: ScheduleMode,
}

impl ModelConfig {
    pub fn new(variant: Variant, layers: usize, hidden: usize, out_dim: usize) -> ModelConfig {
        ModelConfig {
            variant,
            layers,
            hidden,
            out_dim,
            num_anchor_sets: 1,
            schedule_mode: ScheduleMode::Literal,
        }
    }

    pub fn with_anchor_sets(mut self, k: usize) -> ModelConfig {
        self.num_anchor_sets = k;
        self
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.layers == 0 {
            return Err(ModelError::InvalidConfig("layers must be >= 1".into()));
        }
        if self.hidden == 0 || self.out_dim == 0 {
            return Err(ModelError::InvalidConfig("zero width".into()));
        }
        if self.num_anchor_sets == 0 {
            return Err(ModelError::InvalidConfig("zero anchor sets".into()));
        }
        if self.variant == Variant::GirMix {
            if self.hidden % self.num_anchor_sets != 0 {
                return Err(ModelError::InvalidConfig(format!(
                    "hidden width {} not divisible by {} anchor sets",
                    self.hidden, self.num_anchor_sets
                )));
            }
        } else if self.num_anchor_sets != 1 {
            return Err(ModelError::InvalidConfig(
                "anchor sets > 1 only valid for gir-mix".into(),
            ));
        }
        Ok(())
    }

    fn blocks(&self) -> usize {
        if self.variant == Variant::GirMix {
            self.num_anchor_sets
        } else {
            1
        }
    }
}

/// One weight/bias pair.
#[derive(Debug, Clone)]
pub struct LayerParams {
    pub w: Tensor,
    pub b: Tensor,
}

/// All learned tensors: `layers[l][block]`.
#[derive(Debug, Clone)]
pub struct ModelParams {
    pub layers: Vec<Vec<LayerParams>>,
}

impl ModelParams {
    /// Glorot-initialized parameters for `config` on inputs of width `in_dim`
    /// (after augmentation).
    pub fn init(config: &ModelConfig, in_dim: usize, seed: u64) -> Result<ModelParams, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let blocks = config.blocks();
        let block_hidden = config.hidden / blocks;
        let mut layers = Vec::with_capacity(config.layers);
        let mut prev = in_dim;
        for l in 0..config.layers {
            let last = l + 1 == config.layers;
            let block_out = if last { config.out_dim } else { block_hidden };
            let block_in = if config.variant.is_gcn() { prev } else { 2 * prev };
            let row: Vec<LayerParams> = (0..blocks)
                .map(|_| LayerParams {
                    w: Tensor::glorot(block_in, block_out, &mut rng),
                    b: Tensor::zeros(1, block_out),
                })
                .collect();
            layers.push(row);
            prev = if last { config.out_dim } else { config.hidden };
        }
        Ok(ModelParams { layers })
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        self.layers
            .iter()
            .flatten()
            .flat_map(|p| [&p.w, &p.b])
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers
            .iter_mut()
            .flatten()
            .flat_map(|p| [&mut p.w, &mut p.b])
            .collect()
    }

    /// Stable names for checkpointing: layer{l}.block{k}.{w,b}.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (l, row) in self.layers.iter().enumerate() {
            for (k, p) in row.iter().enumerate() {
                out.push((format!("layer{l}.block{k}.w"), &p.w));
                out.push((format!("layer{l}.block{k}.b"), &p.b));
            }
        }
        out
    }
}

/// Node embeddings: one row per node, finite values (enforced by the tape).
pub type Embeddings = Tensor;

/// Appends labeling columns to the base attributes.
pub fn augment_features(
    x: &NodeFeatures,
    mode: AugmentMode,
    anchors: Option<&AnchorSet>,
) -> Result<NodeFeatures, ModelError> {
    let n = x.rows;
    let extra = match mode {
        AugmentMode::None => 0,
        AugmentMode::AnchorOnehot => anchors.ok_or(ModelError::MissingAnchors)?.len(),
        AugmentMode::NodeOnehot => n,
    };
    if extra == 0 {
        return Ok(x.clone());
    }
    let cols = x.cols + extra;
    let mut values = vec![0.0; n * cols];
    for v in 0..n {
        values[v * cols..v * cols + x.cols].copy_from_slice(x.row(v as u32));
        match mode {
            AugmentMode::AnchorOnehot => {
                if let Some(k) = anchors.unwrap().position(v as u32) {
                    values[v * cols + x.cols + k] = 1.0;
                }
            }
            AugmentMode::NodeOnehot => {
                values[v * cols + x.cols + v] = 1.0;
            }
            AugmentMode::None => unreachable!(),
        }
    }
    Ok(NodeFeatures::from_matrix(n, cols, values))
}

/// Splits anchors into `k` near-equal contiguous subsets (sorted order).
pub fn partition_anchors(anchors: &AnchorSet, k: usize, n: usize) -> Result<Vec<AnchorSet>, ModelError> {
    if k == 0 || k > anchors.len() {
        return Err(ModelError::InvalidConfig(format!(
            "cannot split {} anchors into {k} sets",
            anchors.len()
        )));
    }
    let ids = anchors.ids();
    let total = ids.len();
    let base = total / k;
    let rem = total % k;
    let mut out = Vec::with_capacity(k);
    let mut start = 0;
    for i in 0..k {
        let len = base + usize::from(i < rem);
        out.push(AnchorSet::new(ids[start..start + len].to_vec(), n)?);
        start += len;
    }
    Ok(out)
}

/// Precomputed aggregation structure for one graph + model combination.
///
/// GCN uses a single group list (in-neighbors plus self); frontier variants
/// hold, per block and per layer, each node's active in-neighbors.
pub struct ForwardPlan {
    gcn_groups: Option<Vec<Vec<u32>>>,
    gir_groups: Vec<Vec<Vec<Vec<u32>>>>,
    n: usize,
    layers: usize,
}

impl ForwardPlan {
    /// Plan for GCN variants: all edges, every layer.
    pub fn gcn(g: &Graph) -> ForwardPlan {
        let groups = (0..g.node_count() as u32)
            .map(|v| {
                let mut grp: Vec<u32> = g.in_neighbors(v).to_vec();
                match grp.binary_search(&v) {
                    Ok(_) => {}
                    Err(pos) => grp.insert(pos, v),
                }
                grp
            })
            .collect();
        ForwardPlan {
            gcn_groups: Some(groups),
            gir_groups: Vec::new(),
            n: g.node_count(),
            layers: 0,
        }
    }

    /// Plan for frontier variants, one schedule per block.
    pub fn frontier(g: &Graph, schedules: &[FrontierSchedule]) -> Result<ForwardPlan, ModelError> {
        assert!(!schedules.is_empty(), "need at least one schedule");
        let layers = schedules[0].num_layers();
        let mut gir_groups = Vec::with_capacity(schedules.len());
        for sched in schedules {
            if sched.num_layers() != layers {
                return Err(ModelError::ScheduleMismatch {
                    expected: layers,
                    got: sched.num_layers(),
                });
            }
            let mut per_layer = Vec::with_capacity(layers);
            for l in 0..layers {
                let groups: Vec<Vec<u32>> = (0..g.node_count() as u32)
                    .map(|v| {
                        g.in_neighbors(v)
                            .iter()
                            .copied()
                            .filter(|&u| sched.contains(l, u))
                            .collect()
                    })
                    .collect();
                per_layer.push(groups);
            }
            gir_groups.push(per_layer);
        }
        Ok(ForwardPlan {
            gcn_groups: None,
            gir_groups,
            n: g.node_count(),
            layers,
        })
    }

    /// Builds the plan a variant needs, deriving schedules from the anchors.
    pub fn for_model(
        config: &ModelConfig,
        g: &Graph,
        anchors: Option<&AnchorSet>,
    ) -> Result<ForwardPlan, ModelError> {
        config.validate()?;
        if config.variant.is_gcn() {
            return Ok(ForwardPlan::gcn(g));
        }
        let anchors = anchors.ok_or(ModelError::MissingAnchors)?;
        let subsets = if config.variant == Variant::GirMix {
            partition_anchors(anchors, config.num_anchor_sets, g.node_count())?
        } else {
            vec![anchors.clone()]
        };
        let schedules: Vec<FrontierSchedule> = subsets
            .iter()
            .map(|sub| build_schedule(g, sub, config.layers, config.schedule_mode))
            .collect::<Result<_, _>>()?;
        ForwardPlan::frontier(g, &schedules)
    }
}

/// Tape handles for registered parameters, mirroring `ModelParams` layout.
pub struct ParamVars {
    pub layers: Vec<Vec<(Var, Var)>>,
}

/// Registers every parameter tensor on the tape (as leaves).
pub fn register_params(tape: &mut Tape, params: &ModelParams) -> ParamVars {
    ParamVars {
        layers: params
            .layers
            .iter()
            .map(|row| {
                row.iter()
                    .map(|p| (tape.param(&p.w), tape.param(&p.b)))
                    .collect()
            })
            .collect(),
    }
}

/// Full forward pass; returns the embedding variable (n x out_dim).
pub fn forward(
    tape: &mut Tape,
    config: &ModelConfig,
    pvars: &ParamVars,
    plan: &ForwardPlan,
    x: Var,
) -> Result<Var, ModelError> {
    config.validate()?;
    if tape.value(x).rows != plan.n {
        return Err(ModelError::FeatureRows {
            expected: plan.n,
            got: tape.value(x).rows,
        });
    }
    if pvars.layers.len() != config.layers {
        return Err(ModelError::InvalidConfig(format!(
            "params have {} layers, config wants {}",
            pvars.layers.len(),
            config.layers
        )));
    }
    if config.variant.is_gcn() {
        let groups = plan
            .gcn_groups
            .as_ref()
            .ok_or_else(|| ModelError::InvalidConfig("plan built for frontier variant".into()))?;
        let mut h = x;
        for (l, row) in pvars.layers.iter().enumerate() {
            let (w, b) = row[0];
            let m = tape.grouped_mean(h, groups.clone())?;
            let z = tape.affine(m, w, b)?;
            h = if l + 1 == config.layers { z } else { tape.relu(z)? };
        }
        return Ok(h);
    }

    if plan.layers != config.layers {
        return Err(ModelError::ScheduleMismatch {
            expected: config.layers,
            got: plan.layers,
        });
    }
    let blocks = config.blocks();
    if plan.gir_groups.len() != blocks {
        return Err(ModelError::InvalidConfig(format!(
            "plan has {} blocks, config wants {blocks}",
            plan.gir_groups.len()
        )));
    }

    let mut h = x;
    for l in 0..config.layers {
        let last = l + 1 == config.layers;
        let mut outs = Vec::with_capacity(blocks);
        for (k, row) in plan.gir_groups.iter().enumerate() {
            let (w, b) = pvars.layers[l][k];
            let m = tape.grouped_mean(h, row[l].clone())?;
            let c = tape.concat_cols(&[h, m])?;
            let z = tape.affine(c, w, b)?;
            outs.push(if last { z } else { tape.relu(z)? });
        }
        h = if blocks == 1 {
            outs[0]
        } else if last {
            // Blocks each emit out_dim logits; combine by arithmetic mean.
            let n = tape.value(outs[0]).rows;
            let w = tape.constant(Tensor::from_vec(
                n,
                blocks,
                vec![1.0 / blocks as f64; n * blocks],
            ));
            tape.mix_experts(w, &outs)?
        } else {
            tape.concat_cols(&outs)?
        };
    }
    Ok(h)
}

/// Dot product of two embedding rows; the pair-task logit.
pub fn pair_score(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Embeddings for frozen parameters (no gradient bookkeeping kept).
pub fn embed(
    config: &ModelConfig,
    params: &ModelParams,
    plan: &ForwardPlan,
    x: &NodeFeatures,
) -> Result<Embeddings, ModelError> {
    let mut tape = Tape::new();
    let xv = tape.constant(Tensor::from_vec(x.rows, x.cols, x.values.clone()));
    let pvars = register_params(&mut tape, params);
    let z = forward(&mut tape, config, &pvars, plan, xv)?;
    Ok(tape.value(z).clone())
}

/// End-to-end outputs from raw (unaugmented) features: augments, plans,
/// and runs the forward pass.
pub fn model_outputs(
    config: &ModelConfig,
    params: &ModelParams,
    g: &Graph,
    anchors: Option<&AnchorSet>,
    x: &NodeFeatures,
) -> Result<Embeddings, ModelError> {
    let x_aug = augment_features(x, config.variant.augment_mode(), anchors)?;
    let plan = ForwardPlan::for_model(config, g, anchors)?;
    embed(config, params, &plan, &x_aug)
}

/// Metric used on validation/test splits: accuracy for node classification,
/// ROC AUC for pair tasks.
pub fn evaluate_split(
    z: &Embeddings,
    task: &LabeledTask,
    indices: &[usize],
) -> Result<f64, ModelError> {
    if indices.is_empty() {
        return Err(ModelError::TaskMismatch("empty split".into()));
    }
    match task.kind {
        TaskKind::NodeClassification => {
            let items = task.node_items();
            let mut pred = Vec::with_capacity(indices.len());
            let mut truth = Vec::with_capacity(indices.len());
            for &i in indices {
                let (node, label) = items[i];
                let row = z.row(node as usize);
                let argmax = row
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                    .map(|(j, _)| j as u32)
                    .unwrap();
                pred.push(argmax);
                truth.push(label);
            }
            Ok(accuracy(&pred, &truth)?)
        }
        TaskKind::LinkPrediction | TaskKind::NodePairClassification => {
            let items = task.pair_items();
            let mut scores = Vec::with_capacity(indices.len());
            let mut labels = Vec::with_capacity(indices.len());
            for &i in indices {
                let (u, v, label) = items[i];
                scores.push(pair_score(z.row(u as usize), z.row(v as usize)));
                labels.push(label);
            }
            Ok(roc_auc(&scores, &labels)?)
        }
    }
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct Hyper {
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub patience: usize,
    pub seed: u64,
}

impl Default for Hyper {
    fn default() -> Self {
        Hyper {
            lr: 0.01,
            weight_decay: 1e-5,
            epochs: 200,
            patience: 50,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_metric: f64,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub trace: Vec<EpochStats>,
    pub best_epoch: usize,
    pub best_val: f64,
    pub epochs_run: usize,
}

/// Builds the training loss for one epoch on the tape and returns it with
/// the embedding variable.
fn epoch_loss(
    tape: &mut Tape,
    config: &ModelConfig,
    pvars: &ParamVars,
    plan: &ForwardPlan,
    x: Var,
    task: &LabeledTask,
    train: &[usize],
) -> Result<(Var, Var), ModelError> {
    let z = forward(tape, config, pvars, plan, x)?;
    let loss = match task.kind {
        TaskKind::NodeClassification => {
            let items = task.node_items();
            let nodes: Vec<u32> = train.iter().map(|&i| items[i].0).collect();
            let labels: Vec<u32> = train.iter().map(|&i| items[i].1).collect();
            let logits = tape.gather_rows(z, nodes)?;
            tape.cross_entropy(logits, labels)?
        }
        TaskKind::LinkPrediction | TaskKind::NodePairClassification => {
            let items = task.pair_items();
            let pairs: Vec<(u32, u32)> = train.iter().map(|&i| (items[i].0, items[i].1)).collect();
            let targets: Vec<f64> = train.iter().map(|&i| items[i].2 as f64).collect();
            let scores = tape.pair_scores(z, pairs)?;
            tape.bce_with_logits(scores, targets)?
        }
    };
    Ok((loss, z))
}

/// Full-batch training with best-validation model selection.
///
/// The validation metric for an epoch is computed from the same forward pass
/// that produced the training loss, so the returned parameters are exactly
/// the ones that achieved `best_val`.
pub fn train_model(
    config: &ModelConfig,
    g: &Graph,
    anchors: Option<&AnchorSet>,
    x: &NodeFeatures,
    task: &LabeledTask,
    split: &SplitSpec,
    hyper: &Hyper,
) -> Result<TrainOutcome, ModelError> {
    config.validate()?;
    task.validate(g.node_count())?;
    if x.rows != g.node_count() {
        return Err(ModelError::FeatureRows {
            expected: g.node_count(),
            got: x.rows,
        });
    }
    let x_aug = augment_features(x, config.variant.augment_mode(), anchors)?;
    let plan = ForwardPlan::for_model(config, g, anchors)?;
    let mut params = ModelParams::init(config, x_aug.cols, hyper.seed)?;
    let x_tensor = Tensor::from_vec(x_aug.rows, x_aug.cols, x_aug.values);

    let mut adam = Adam::new(hyper.lr, hyper.weight_decay);
    let mut best: Option<(f64, usize, ModelParams)> = None;
    let mut trace = Vec::with_capacity(hyper.epochs);

    for epoch in 0..hyper.epochs {
        let mut tape = Tape::new();
        let xv = tape.constant(x_tensor.clone());
        let pvars = register_params(&mut tape, &params);
        let (loss, z) = epoch_loss(&mut tape, config, &pvars, &plan, xv, task, &split.train)?;
        let train_loss = tape.value(loss).item();
        if !train_loss.is_finite() {
            return Err(ModelError::Diverged { epoch });
        }
        let val_metric = evaluate_split(tape.value(z), task, &split.val)?;
        trace.push(EpochStats {
            epoch,
            train_loss,
            val_metric,
        });

        let improved = match &best {
            None => true,
            Some((best_val, _, _)) => val_metric > *best_val,
        };
        if improved {
            best = Some((val_metric, epoch, params.clone()));
        } else if let Some((_, best_epoch, _)) = &best {
            if epoch - best_epoch >= hyper.patience {
                break;
            }
        }

        let grads = tape.backward(loss)?;
        let grad_tensors: Vec<Tensor> = pvars
            .layers
            .iter()
            .flatten()
            .flat_map(|&(w, b)| [grads.get(w), grads.get(b)])
            .collect();
        let mut tensors = params.tensors_mut();
        let mut refs: Vec<Tensor> = tensors.iter().map(|t| (**t).clone()).collect();
        adam.step(&mut refs, &grad_tensors)?;
        for (dst, src) in tensors.iter_mut().zip(refs) {
            **dst = src;
        }
    }

    let (best_val, best_epoch, best_params) = best.expect("at least one epoch runs");
    Ok(TrainOutcome {
        params: best_params,
        epochs_run: trace.len(),
        trace,
        best_epoch,
        best_val,
    })
}

/// Writes embeddings as CSV: node id, then one column per dimension.
pub fn write_embeddings_csv(path: &Path, z: &Embeddings) -> Result<(), ModelError> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for i in 0..z.rows {
        write!(f, "{i}")?;
        for v in z.row(i) {
            write!(f, ",{v}")?;
        }
        writeln!(f)?;
    }
    Ok(())
}
