//! Mixture-of-experts decision fusion over node classifiers, fusion-weight
//! regularization, and the expert-complementarity metric.
//!
//! A bundle holds k trained experts emitting n x C logits each. The gate is
//! a single affine map from the concatenation of all expert logits to k
//! mixing logits; fused logits are the softmax-weighted sum of expert
//! logits, node by node.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::anchors::AnchorSet;
use crate::graph::{Graph, LabeledTask, NodeFeatures, SplitSpec, TaskKind};
use crate::metrics::{accuracy, MetricError};
use crate::model::{
    augment_features, evaluate_split, forward, model_outputs, register_params, EpochStats,
    ForwardPlan, Hyper, ModelConfig, ModelError, ModelParams,
};
use crate::ndiff::{Adam, NdiffError, Tape, Tensor, Var};

#[derive(Debug, Error)]
pub enum FusionError {
    #[error("fusion needs at least 2 experts, got {0}")]
    TooFewExperts(usize),
    #[error("fusion supports node classification tasks only")]
    NodeTaskOnly,
    #[error("expert logit shapes differ: {0}")]
    ShapeMismatch(String),
    #[error("temperature must be positive, got {0}")]
    NonpositiveTau(f64),
    #[error("expert {index} failed in pretraining: {source}")]
    ExpertTraining { index: usize, source: ModelError },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Ndiff(#[from] NdiffError),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

/// An untrained expert: model shape plus the anchors it propagates from.
#[derive(Debug, Clone)]
pub struct ExpertSpec {
    pub config: ModelConfig,
    pub anchors: Option<AnchorSet>,
}

/// A trained expert; parameters stay fixed unless a no-freeze mode
/// fine-tunes them.
#[derive(Debug, Clone)]
pub struct TrainedExpert {
    pub config: ModelConfig,
    pub anchors: Option<AnchorSet>,
    pub params: ModelParams,
}

#[derive(Debug, Clone)]
pub struct ExpertBundle {
    pub experts: Vec<TrainedExpert>,
}

/// Gate: affine map from concatenated expert logits (k*C wide) to k mixing
/// logits.
#[derive(Debug, Clone)]
pub struct GateParams {
    pub w: Tensor,
    pub b: Tensor,
}

impl GateParams {
    pub fn init(num_experts: usize, classes: usize, seed: u64) -> GateParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        GateParams {
            w: Tensor::glorot(num_experts * classes, num_experts, &mut rng),
            b: Tensor::zeros(1, num_experts),
        }
    }
}

/// Training regime. The two-stage modes pretrain experts independently
/// first; the joint modes train everything in one pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FusionMode {
    /// Pretrain, freeze experts, train gate with the weight regularizer.
    TwoStage,
    /// Pretrain, then fine-tune experts together with the gate.
    TwoStageNoFreeze,
    /// Pretrain, freeze, train gate without the weight regularizer.
    TwoStageNoFwr,
    /// Single stage, fused loss only.
    Joint,
    /// Single stage, fused loss plus unit-weight per-expert losses.
    JointWithUniLosses,
}

pub const ALL_FUSION_MODES: [FusionMode; 5] = [
    FusionMode::TwoStage,
    FusionMode::TwoStageNoFreeze,
    FusionMode::TwoStageNoFwr,
    FusionMode::Joint,
    FusionMode::JointWithUniLosses,
];

impl FusionMode {
    pub fn pretrains(self) -> bool {
        matches!(
            self,
            FusionMode::TwoStage | FusionMode::TwoStageNoFreeze | FusionMode::TwoStageNoFwr
        )
    }

    pub fn freezes_experts(self) -> bool {
        matches!(self, FusionMode::TwoStage | FusionMode::TwoStageNoFwr)
    }

    pub fn uses_fwr(self) -> bool {
        matches!(self, FusionMode::TwoStage | FusionMode::TwoStageNoFreeze)
    }

    pub fn uses_uni_losses(self) -> bool {
        matches!(self, FusionMode::JointWithUniLosses)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            FusionMode::TwoStage => "two-stage",
            FusionMode::TwoStageNoFreeze => "two-stage-no-freeze",
            FusionMode::TwoStageNoFwr => "two-stage-no-fwr",
            FusionMode::Joint => "joint",
            FusionMode::JointWithUniLosses => "joint-with-uni-losses",
        }
    }
}

impl std::fmt::Display for FusionMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for FusionMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ALL_FUSION_MODES
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown fusion mode '{s}'"))
    }
}

#[derive(Debug, Clone)]
pub struct FusionOptions {
    pub mode: FusionMode,
    pub fwr_coefficient: f64,
    pub temperature: f64,
}

impl Default for FusionOptions {
    fn default() -> Self {
        FusionOptions {
            mode: FusionMode::TwoStage,
            fwr_coefficient: 0.1,
            temperature: 1.0,
        }
    }
}

/// Applies the gate to full expert logit matrices.
///
/// Returns fused logits (n x C) and the per-node mixing weights (n x k).
pub fn gate_fuse(
    expert_logits: &[Tensor],
    gate: &GateParams,
) -> Result<(Tensor, Tensor), FusionError> {
    check_logit_shapes(expert_logits)?;
    let mut tape = Tape::new();
    let logit_vars: Vec<Var> = expert_logits
        .iter()
        .map(|t| tape.constant(t.clone()))
        .collect();
    let gw = tape.param(&gate.w);
    let gb = tape.param(&gate.b);
    let gate_logits = gate_logits_on_tape(&mut tape, &logit_vars, gw, gb)?;
    let weights = tape.softmax_rows(gate_logits)?;
    let fused = tape.mix_experts(weights, &logit_vars)?;
    Ok((tape.value(fused).clone(), tape.value(weights).clone()))
}

fn check_logit_shapes(expert_logits: &[Tensor]) -> Result<(), FusionError> {
    if expert_logits.len() < 2 {
        return Err(FusionError::TooFewExperts(expert_logits.len()));
    }
    let shape = expert_logits[0].shape();
    for (i, t) in expert_logits.iter().enumerate() {
        if t.shape() != shape {
            return Err(FusionError::ShapeMismatch(format!(
                "expert 0 is {}x{}, expert {i} is {}x{}",
                shape.0, shape.1, t.rows, t.cols
            )));
        }
    }
    Ok(())
}

/// The gate's mixing logits: concatenate expert logits, apply the affine.
fn gate_logits_on_tape(
    tape: &mut Tape,
    expert_logits: &[Var],
    gw: Var,
    gb: Var,
) -> Result<Var, FusionError> {
    let input = tape.concat_cols(expert_logits)?;
    Ok(tape.affine(input, gw, gb)?)
}

/// Target mixing distribution: softmax of negative per-expert losses over
/// temperature. Lower loss, higher target weight.
pub fn fwr_targets(losses: &Tensor, tau: f64) -> Result<Tensor, FusionError> {
    if tau <= 0.0 {
        return Err(FusionError::NonpositiveTau(tau));
    }
    let mut out = Tensor::zeros(losses.rows, losses.cols);
    for i in 0..losses.rows {
        let row = losses.row(i);
        let max = row.iter().map(|&l| -l / tau).fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for (j, &l) in row.iter().enumerate() {
            let e = (-l / tau - max).exp();
            out.set(i, j, e);
            sum += e;
        }
        for j in 0..losses.cols {
            out.set(i, j, out.get(i, j) / sum);
        }
    }
    Ok(out)
}

/// Fusion-weight regularization: mean cross-entropy from the gate's weights
/// to the loss-derived target distribution.
pub fn fwr_penalty(weights: &Tensor, losses: &Tensor, tau: f64) -> Result<f64, FusionError> {
    if weights.shape() != losses.shape() {
        return Err(FusionError::ShapeMismatch(format!(
            "weights {}x{}, losses {}x{}",
            weights.rows, weights.cols, losses.rows, losses.cols
        )));
    }
    let targets = fwr_targets(losses, tau)?;
    let mut total = 0.0;
    for i in 0..weights.rows {
        for j in 0..weights.cols {
            let t = targets.get(i, j);
            if t > 0.0 {
                total -= t * weights.get(i, j).ln();
            }
        }
    }
    Ok(total / weights.rows as f64)
}

/// Per-item cross-entropy of one logit row against a hard label.
fn ce_row(row: &[f64], label: u32) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|&z| (z - max).exp()).sum::<f64>().ln();
    lse - row[label as usize]
}

fn argmax_row(row: &[f64]) -> u32 {
    row.iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .map(|(j, _)| j as u32)
        .unwrap()
}

/// Expert complementarity report.
#[derive(Debug, Clone, PartialEq)]
pub struct ECReport {
    /// EC per expert.
    pub per_expert: Vec<f64>,
    /// Arithmetic mean of the per-expert values.
    pub aggregate: f64,
    /// Items each expert got wrong.
    pub false_sizes: Vec<usize>,
    /// Items some other expert got right.
    pub others_true_sizes: Vec<usize>,
    /// Overlap of the two sets above.
    pub intersection_sizes: Vec<usize>,
}

/// How much of each expert's errors the rest of the bundle corrects.
///
/// For expert i, with F_i the items it gets wrong and T_i the items some
/// other expert gets right, EC_i is the harmonic mean of |F_i ∩ T_i|/|F_i|
/// and |F_i ∩ T_i|/|T_i|. A zero denominator makes its ratio 0, and any
/// zero operand makes the harmonic mean 0, so a perfect expert scores 0.
pub fn expert_complementarity(
    predictions: &[Vec<u32>],
    labels: &[u32],
) -> Result<ECReport, FusionError> {
    if predictions.len() < 2 {
        return Err(FusionError::TooFewExperts(predictions.len()));
    }
    for (i, p) in predictions.iter().enumerate() {
        if p.len() != labels.len() {
            return Err(FusionError::ShapeMismatch(format!(
                "expert {i} has {} predictions for {} labels",
                p.len(),
                labels.len()
            )));
        }
    }
    let k = predictions.len();
    let correct: Vec<Vec<bool>> = predictions
        .iter()
        .map(|p| p.iter().zip(labels).map(|(a, b)| a == b).collect())
        .collect();

    let mut per_expert = Vec::with_capacity(k);
    let mut false_sizes = Vec::with_capacity(k);
    let mut others_true_sizes = Vec::with_capacity(k);
    let mut intersection_sizes = Vec::with_capacity(k);
    for i in 0..k {
        let mut s_f = 0usize;
        let mut s_t = 0usize;
        let mut inter = 0usize;
        for item in 0..labels.len() {
            let wrong_here = !correct[i][item];
            let other_right = (0..k).any(|j| j != i && correct[j][item]);
            s_f += wrong_here as usize;
            s_t += other_right as usize;
            inter += (wrong_here && other_right) as usize;
        }
        let r1 = if s_f == 0 { 0.0 } else { inter as f64 / s_f as f64 };
        let r2 = if s_t == 0 { 0.0 } else { inter as f64 / s_t as f64 };
        let ec = if r1 == 0.0 || r2 == 0.0 {
            0.0
        } else {
            2.0 * r1 * r2 / (r1 + r2)
        };
        per_expert.push(ec);
        false_sizes.push(s_f);
        others_true_sizes.push(s_t);
        intersection_sizes.push(inter);
    }
    let aggregate = per_expert.iter().sum::<f64>() / k as f64;
    Ok(ECReport {
        per_expert,
        aggregate,
        false_sizes,
        others_true_sizes,
        intersection_sizes,
    })
}

/// Full n x C logits for each expert under its own feature augmentation.
pub fn bundle_logits(
    bundle: &ExpertBundle,
    g: &Graph,
    x: &NodeFeatures,
) -> Result<Vec<Tensor>, FusionError> {
    bundle
        .experts
        .iter()
        .map(|e| Ok(model_outputs(&e.config, &e.params, g, e.anchors.as_ref(), x)?))
        .collect()
}

/// Argmax class predictions at the given task items.
pub fn predictions_at(logits: &Tensor, task: &LabeledTask, indices: &[usize]) -> Vec<u32> {
    let items = task.node_items();
    indices
        .iter()
        .map(|&i| argmax_row(logits.row(items[i].0 as usize)))
        .collect()
}

fn labels_at(task: &LabeledTask, indices: &[usize]) -> Vec<u32> {
    let items = task.node_items();
    indices.iter().map(|&i| items[i].1).collect()
}

/// Fused accuracy over a split.
pub fn fused_accuracy(
    expert_logits: &[Tensor],
    gate: &GateParams,
    task: &LabeledTask,
    indices: &[usize],
) -> Result<f64, FusionError> {
    let (fused, _) = gate_fuse(expert_logits, gate)?;
    let pred = predictions_at(&fused, task, indices);
    Ok(accuracy(&pred, &labels_at(task, indices))?)
}

/// Expert complementarity of the bundle on a split (typically test).
pub fn bundle_complementarity(
    expert_logits: &[Tensor],
    task: &LabeledTask,
    indices: &[usize],
) -> Result<ECReport, FusionError> {
    let preds: Vec<Vec<u32>> = expert_logits
        .iter()
        .map(|z| predictions_at(z, task, indices))
        .collect();
    expert_complementarity(&preds, &labels_at(task, indices))
}

#[derive(Debug)]
pub struct FusionOutcome {
    pub bundle: ExpertBundle,
    pub gate: GateParams,
    /// Pretraining best validation accuracy per expert (zeros for joint
    /// modes, which skip pretraining).
    pub expert_val: Vec<f64>,
    /// Gate-training trace: total loss and fused validation accuracy.
    pub trace: Vec<EpochStats>,
    pub best_epoch: usize,
    pub best_val: f64,
}

/// Pretrains one expert to the full epoch budget and keeps the final
/// parameters.
///
/// Unlike standalone training, experts are not snapshotted at the best
/// validation epoch: argmax accuracy saturates early while the logit
/// margins that the fused decision relies on keep sharpening, so an early
/// snapshot would hand the gate uniformly diffident experts.
pub fn pretrain_expert(
    spec: &ExpertSpec,
    g: &Graph,
    x: &NodeFeatures,
    task: &LabeledTask,
    split: &SplitSpec,
    hyper: &Hyper,
) -> Result<(TrainedExpert, f64), FusionError> {
    if task.kind != TaskKind::NodeClassification {
        return Err(FusionError::NodeTaskOnly);
    }
    let x_aug = augment_features(x, spec.config.variant.augment_mode(), spec.anchors.as_ref())?;
    let plan = ForwardPlan::for_model(&spec.config, g, spec.anchors.as_ref())?;
    let mut params = ModelParams::init(&spec.config, x_aug.cols, hyper.seed)?;
    let x_tensor = Tensor::from_vec(x_aug.rows, x_aug.cols, x_aug.values);
    let items = task.node_items();
    let train_nodes: Vec<u32> = split.train.iter().map(|&i| items[i].0).collect();
    let train_labels: Vec<u32> = split.train.iter().map(|&i| items[i].1).collect();

    let mut adam = Adam::new(hyper.lr, hyper.weight_decay);
    let mut val = 0.0;
    for epoch in 0..hyper.epochs {
        let mut tape = Tape::new();
        let xv = tape.constant(x_tensor.clone());
        let pvars = register_params(&mut tape, &params);
        let z = forward(&mut tape, &spec.config, &pvars, &plan, xv)?;
        let logits = tape.gather_rows(z, train_nodes.clone())?;
        let loss = tape.cross_entropy(logits, train_labels.clone())?;
        if !tape.value(loss).item().is_finite() {
            return Err(ModelError::Diverged { epoch }.into());
        }
        val = evaluate_split(tape.value(z), task, &split.val)?;

        let grads = tape.backward(loss)?;
        let grad_tensors: Vec<Tensor> = pvars
            .layers
            .iter()
            .flatten()
            .flat_map(|&(w, b)| [grads.get(w), grads.get(b)])
            .collect();
        let mut param_tensors: Vec<Tensor> = params
            .layers
            .iter()
            .flatten()
            .flat_map(|p| [p.w.clone(), p.b.clone()])
            .collect();
        adam.step(&mut param_tensors, &grad_tensors)?;
        let mut it = param_tensors.into_iter();
        for row in params.layers.iter_mut() {
            for p in row.iter_mut() {
                p.w = it.next().unwrap();
                p.b = it.next().unwrap();
            }
        }
    }

    Ok((
        TrainedExpert {
            config: spec.config.clone(),
            anchors: spec.anchors.clone(),
            params,
        },
        val,
    ))
}

/// Trains a fused bundle per the selected mode.
///
/// Two-stage modes pretrain each expert independently to convergence
/// (expert i trains with seed hyper.seed + i), then optimize the gate on
/// fused cross-entropy, freezing experts and adding the weight regularizer
/// as the mode dictates. Joint modes skip pretraining and optimize gate
/// and experts together. Node classification only.
pub fn two_stage_train(
    specs: &[ExpertSpec],
    g: &Graph,
    x: &NodeFeatures,
    task: &LabeledTask,
    split: &SplitSpec,
    hyper: &Hyper,
    options: &FusionOptions,
) -> Result<FusionOutcome, FusionError> {
    if specs.len() < 2 {
        return Err(FusionError::TooFewExperts(specs.len()));
    }
    if task.kind != TaskKind::NodeClassification {
        return Err(FusionError::NodeTaskOnly);
    }
    if options.temperature <= 0.0 {
        return Err(FusionError::NonpositiveTau(options.temperature));
    }
    let classes = task.num_classes();
    for (i, s) in specs.iter().enumerate() {
        if s.config.out_dim != classes {
            return Err(FusionError::ShapeMismatch(format!(
                "expert {i} emits {} logits for {classes} classes",
                s.config.out_dim
            )));
        }
    }

    let item_nodes: Vec<u32> = task.node_items().iter().map(|&(v, _)| v).collect();
    let train_pos: Vec<u32> = split.train.iter().map(|&i| i as u32).collect();
    let train_labels = labels_at(task, &split.train);
    let val_labels = labels_at(task, &split.val);

    // Stage 1: independent pretraining, or a fresh init for joint modes.
    let mut experts = Vec::with_capacity(specs.len());
    let mut expert_val = Vec::with_capacity(specs.len());
    for (i, spec) in specs.iter().enumerate() {
        let mut h = hyper.clone();
        h.seed = hyper.seed + i as u64;
        let (expert, val) = if options.mode.pretrains() {
            pretrain_expert(spec, g, x, task, split, &h).map_err(|e| match e {
                FusionError::Model(source) => FusionError::ExpertTraining { index: i, source },
                other => other,
            })?
        } else {
            let x_aug =
                augment_features(x, spec.config.variant.augment_mode(), spec.anchors.as_ref())?;
            (
                TrainedExpert {
                    config: spec.config.clone(),
                    anchors: spec.anchors.clone(),
                    params: ModelParams::init(&spec.config, x_aug.cols, h.seed)?,
                },
                0.0,
            )
        };
        expert_val.push(val);
        experts.push(expert);
    }

    let frozen = options.mode.freezes_experts();

    // Frozen expert logits are fixed for all of stage 2; compute them once,
    // gathered at the task items.
    let frozen_item_logits: Option<Vec<Tensor>> = if frozen {
        let bundle = ExpertBundle {
            experts: experts.clone(),
        };
        let full = bundle_logits(&bundle, g, x)?;
        Some(full.iter().map(|z| gather_item_rows(z, &item_nodes)).collect())
    } else {
        None
    };

    // Live experts need their plan and augmented features each epoch.
    let expert_setups: Vec<(ForwardPlan, Tensor)> = if frozen {
        Vec::new()
    } else {
        experts
            .iter()
            .map(|e| {
                let x_aug =
                    augment_features(x, e.config.variant.augment_mode(), e.anchors.as_ref())?;
                let plan = ForwardPlan::for_model(&e.config, g, e.anchors.as_ref())?;
                Ok((plan, Tensor::from_vec(x_aug.rows, x_aug.cols, x_aug.values)))
            })
            .collect::<Result<_, FusionError>>()?
    };

    let mut gate = GateParams::init(specs.len(), classes, hyper.seed + 7919);
    let mut adam = Adam::new(hyper.lr, hyper.weight_decay);
    let mut best: Option<(f64, usize, GateParams, Vec<ModelParams>)> = None;
    let mut trace: Vec<EpochStats> = Vec::new();

    for epoch in 0..hyper.epochs {
        let mut tape = Tape::new();
        let gw = tape.param(&gate.w);
        let gb = tape.param(&gate.b);

        // Expert logits at the task items: constants when frozen, live
        // forwards when the mode fine-tunes experts.
        let mut expert_param_vars = Vec::new();
        let item_logit_vars: Vec<Var> = match &frozen_item_logits {
            Some(fixed) => fixed.iter().map(|t| tape.constant(t.clone())).collect(),
            None => {
                let mut vars = Vec::with_capacity(experts.len());
                for (e, (plan, x_tensor)) in experts.iter().zip(&expert_setups) {
                    let xv = tape.constant(x_tensor.clone());
                    let pvars = register_params(&mut tape, &e.params);
                    let z = forward(&mut tape, &e.config, &pvars, plan, xv)?;
                    vars.push(tape.gather_rows(z, item_nodes.clone())?);
                    expert_param_vars.push(pvars);
                }
                vars
            }
        };

        let gate_logits = gate_logits_on_tape(&mut tape, &item_logit_vars, gw, gb)?;
        let weights = tape.softmax_rows(gate_logits)?;
        let fused = tape.mix_experts(weights, &item_logit_vars)?;

        let fused_train = tape.gather_rows(fused, train_pos.clone())?;
        let mut loss = tape.cross_entropy(fused_train, train_labels.clone())?;

        if options.mode.uses_fwr() {
            // Per-item per-expert losses on the training rows drive the
            // target mixing distribution.
            let mut per_item = Tensor::zeros(train_pos.len(), experts.len());
            for (k, lv) in item_logit_vars.iter().enumerate() {
                let logits = tape.value(*lv).clone();
                for (r, &pos) in train_pos.iter().enumerate() {
                    per_item.set(r, k, ce_row(logits.row(pos as usize), train_labels[r]));
                }
            }
            let targets = fwr_targets(&per_item, options.temperature)?;
            let gate_train = tape.gather_rows(gate_logits, train_pos.clone())?;
            let fwr = tape.soft_cross_entropy(gate_train, targets)?;
            loss = tape.add_scaled(loss, fwr, options.fwr_coefficient)?;
        }

        if options.mode.uses_uni_losses() {
            for lv in &item_logit_vars {
                let expert_train = tape.gather_rows(*lv, train_pos.clone())?;
                let uni = tape.cross_entropy(expert_train, train_labels.clone())?;
                loss = tape.add(loss, uni)?;
            }
        }

        let train_loss = tape.value(loss).item();
        if !train_loss.is_finite() {
            return Err(ModelError::Diverged { epoch }.into());
        }

        let fused_values = tape.value(fused);
        let val_pred: Vec<u32> = split
            .val
            .iter()
            .map(|&i| argmax_row(fused_values.row(i)))
            .collect();
        let val_metric = accuracy(&val_pred, &val_labels)?;
        trace.push(EpochStats {
            epoch,
            train_loss,
            val_metric,
        });

        let improved = match &best {
            None => true,
            Some((b, _, _, _)) => val_metric > *b,
        };
        if improved {
            best = Some((
                val_metric,
                epoch,
                gate.clone(),
                experts.iter().map(|e| e.params.clone()).collect(),
            ));
        } else if let Some((_, be, _, _)) = &best {
            if epoch - be >= hyper.patience {
                break;
            }
        }

        let grads = tape.backward(loss)?;
        let mut grad_tensors = vec![grads.get(gw), grads.get(gb)];
        let mut param_tensors = vec![gate.w.clone(), gate.b.clone()];
        for (e, pvars) in experts.iter().zip(&expert_param_vars) {
            for (row, vars) in e.params.layers.iter().zip(&pvars.layers) {
                for (p, &(wv, bv)) in row.iter().zip(vars) {
                    param_tensors.push(p.w.clone());
                    param_tensors.push(p.b.clone());
                    grad_tensors.push(grads.get(wv));
                    grad_tensors.push(grads.get(bv));
                }
            }
        }
        adam.step(&mut param_tensors, &grad_tensors)?;
        let mut it = param_tensors.into_iter();
        gate.w = it.next().unwrap();
        gate.b = it.next().unwrap();
        if !frozen {
            for e in experts.iter_mut() {
                for row in e.params.layers.iter_mut() {
                    for p in row.iter_mut() {
                        p.w = it.next().unwrap();
                        p.b = it.next().unwrap();
                    }
                }
            }
        }
    }

    let (best_val, best_epoch, best_gate, best_expert_params) =
        best.expect("at least one epoch runs");
    for (e, p) in experts.iter_mut().zip(best_expert_params) {
        e.params = p;
    }

    Ok(FusionOutcome {
        bundle: ExpertBundle { experts },
        gate: best_gate,
        expert_val,
        trace,
        best_epoch,
        best_val,
    })
}

fn gather_item_rows(z: &Tensor, nodes: &[u32]) -> Tensor {
    let mut out = Tensor::zeros(nodes.len(), z.cols);
    for (i, &v) in nodes.iter().enumerate() {
        out.row_mut(i).copy_from_slice(z.row(v as usize));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::split_dataset;
    use crate::model::Variant;
    use crate::synth::{make_two_view_fixture, TwoViewFixture};

    #[test]
    fn uniform_weights_average_experts() {
        let e0 = Tensor::from_vec(2, 2, vec![4.0, 0.0, 2.0, 2.0]);
        let e1 = Tensor::from_vec(2, 2, vec![0.0, 4.0, 0.0, 0.0]);
        // A zero gate gives uniform softmax regardless of input.
        let gate = GateParams {
            w: Tensor::zeros(4, 2),
            b: Tensor::zeros(1, 2),
        };
        let (fused, weights) = gate_fuse(&[e0, e1], &gate).unwrap();
        assert_eq!(fused.row(0), &[2.0, 2.0]);
        assert_eq!(fused.row(1), &[1.0, 1.0]);
        for i in 0..2 {
            assert!((weights.get(i, 0) - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn extreme_bias_selects_one_expert() {
        let e0 = Tensor::from_vec(1, 2, vec![4.0, 0.0]);
        let e1 = Tensor::from_vec(1, 2, vec![0.0, 4.0]);
        let gate = GateParams {
            w: Tensor::zeros(4, 2),
            b: Tensor::from_vec(1, 2, vec![0.0, 60.0]),
        };
        let (fused, weights) = gate_fuse(&[e0, e1.clone()], &gate).unwrap();
        assert!((weights.get(0, 1) - 1.0).abs() < 1e-12);
        for j in 0..2 {
            assert!((fused.get(0, j) - e1.get(0, j)).abs() < 1e-12);
        }
    }

    #[test]
    fn quarter_weights_blend_rows() {
        // Weights (0.25, 0.75) over rows (4,0) and (0,4) give (1,3); reach
        // those weights through a bias of ln 3.
        let gate = GateParams {
            w: Tensor::zeros(4, 2),
            b: Tensor::from_vec(1, 2, vec![0.0, 3.0f64.ln()]),
        };
        let e0 = Tensor::from_vec(1, 2, vec![4.0, 0.0]);
        let e1 = Tensor::from_vec(1, 2, vec![0.0, 4.0]);
        let (fused, weights) = gate_fuse(&[e0, e1], &gate).unwrap();
        assert!((weights.get(0, 0) - 0.25).abs() < 1e-12);
        assert!((fused.get(0, 0) - 1.0).abs() < 1e-12);
        assert!((fused.get(0, 1) - 3.0).abs() < 1e-12);
    }

    #[test]
    fn gate_fuse_is_permutation_equivariant() {
        let e0 = Tensor::from_vec(3, 2, vec![1.0, 0.5, -0.25, 2.0, 0.0, 1.0]);
        let e1 = Tensor::from_vec(3, 2, vec![0.2, -1.0, 0.75, 0.5, 1.5, -0.5]);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let gate = GateParams {
            w: Tensor::glorot(4, 2, &mut rng),
            b: Tensor::from_vec(1, 2, vec![0.1, -0.2]),
        };
        // Swap the experts along with the gate's input blocks and output
        // columns; fused logits must match and weights must swap.
        let mut swapped_w = Tensor::zeros(4, 2);
        for block in 0..2 {
            for r in 0..2 {
                for c in 0..2 {
                    swapped_w.set((1 - block) * 2 + r, 1 - c, gate.w.get(block * 2 + r, c));
                }
            }
        }
        let swapped = GateParams {
            w: swapped_w,
            b: Tensor::from_vec(1, 2, vec![-0.2, 0.1]),
        };
        let (fused_a, weights_a) = gate_fuse(&[e0.clone(), e1.clone()], &gate).unwrap();
        let (fused_b, weights_b) = gate_fuse(&[e1, e0], &swapped).unwrap();
        for i in 0..3 {
            assert!((fused_a.get(i, 0) - fused_b.get(i, 0)).abs() < 1e-12);
            assert!((fused_a.get(i, 1) - fused_b.get(i, 1)).abs() < 1e-12);
            assert!((weights_a.get(i, 0) - weights_b.get(i, 1)).abs() < 1e-12);
        }
    }

    #[test]
    fn fwr_targets_follow_losses() {
        let losses = Tensor::from_vec(1, 2, vec![0.0, 4.0f64.ln()]);
        let t = fwr_targets(&losses, 1.0).unwrap();
        assert!((t.get(0, 0) - 0.8).abs() < 1e-12);
        assert!((t.get(0, 1) - 0.2).abs() < 1e-12);

        // A huge temperature flattens the target.
        let t = fwr_targets(&losses, 1e9).unwrap();
        assert!((t.get(0, 0) - 0.5).abs() < 1e-6);
    }

    #[test]
    fn fwr_penalty_at_target_weights_is_target_entropy() {
        let losses = Tensor::from_vec(1, 2, vec![0.0, 4.0f64.ln()]);
        let weights = Tensor::from_vec(1, 2, vec![0.8, 0.2]);
        let p = fwr_penalty(&weights, &losses, 1.0).unwrap();
        assert!((p - 0.500402).abs() < 1e-6);
    }

    #[test]
    fn fwr_equal_losses_prefer_uniform_weights() {
        let losses = Tensor::from_vec(1, 2, vec![0.7, 0.7]);
        let uniform = Tensor::from_vec(1, 2, vec![0.5, 0.5]);
        let skewed = Tensor::from_vec(1, 2, vec![0.9, 0.1]);
        let pu = fwr_penalty(&uniform, &losses, 1.0).unwrap();
        let ps = fwr_penalty(&skewed, &losses, 1.0).unwrap();
        assert!(pu < ps);
    }

    #[test]
    fn fwr_rejects_bad_tau() {
        let losses = Tensor::zeros(1, 2);
        assert!(matches!(
            fwr_penalty(&losses.clone(), &losses, 0.0),
            Err(FusionError::NonpositiveTau(_))
        ));
    }

    #[test]
    fn ec_identical_experts_is_zero() {
        let p = vec![vec![1, 0, 1], vec![1, 0, 1]];
        let r = expert_complementarity(&p, &[1, 1, 0]).unwrap();
        assert_eq!(r.per_expert, vec![0.0, 0.0]);
        assert_eq!(r.aggregate, 0.0);
    }

    #[test]
    fn ec_perfectly_complementary_is_one() {
        // Two items; each expert correct exactly where the other errs.
        let p = vec![vec![1, 0], vec![0, 1]];
        let r = expert_complementarity(&p, &[1, 1]).unwrap();
        assert_eq!(r.per_expert, vec![1.0, 1.0]);
        assert_eq!(r.aggregate, 1.0);
    }

    #[test]
    fn ec_hand_worked_example() {
        // 4 items, all true label 1. Expert 1 correct on items 0 and 1,
        // expert 2 on item 2 only.
        let p = vec![vec![1, 1, 0, 0], vec![0, 0, 1, 0]];
        let r = expert_complementarity(&p, &[1, 1, 1, 1]).unwrap();
        assert!((r.per_expert[0] - 2.0 / 3.0).abs() < 1e-12);
        assert!((r.per_expert[1] - 4.0 / 5.0).abs() < 1e-12);
        assert!((r.aggregate - 11.0 / 15.0).abs() < 1e-12);
        assert_eq!(r.false_sizes, vec![2, 3]);
        assert_eq!(r.others_true_sizes, vec![1, 2]);
        assert_eq!(r.intersection_sizes, vec![1, 2]);
    }

    #[test]
    fn ec_perfect_expert_scores_zero() {
        let p = vec![vec![1, 1], vec![0, 1]];
        let r = expert_complementarity(&p, &[1, 1]).unwrap();
        assert_eq!(r.per_expert[0], 0.0);
        assert!(r.per_expert.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn ec_rejects_mismatched_lengths() {
        let p = vec![vec![1], vec![1, 0]];
        assert!(matches!(
            expert_complementarity(&p, &[1]),
            Err(FusionError::ShapeMismatch(_))
        ));
    }

    fn two_view_specs(fix: &TwoViewFixture) -> Vec<ExpertSpec> {
        vec![
            ExpertSpec {
                config: ModelConfig::new(Variant::GirA, 2, 8, 2),
                anchors: Some(fix.anchors.clone()),
            },
            ExpertSpec {
                config: ModelConfig::new(Variant::Gcn, 2, 8, 2),
                anchors: None,
            },
        ]
    }

    #[test]
    fn frozen_experts_stay_bit_identical_through_stage_two() {
        let fix = make_two_view_fixture(8);
        let split = split_dataset(&fix.task, 3).unwrap();
        let hyper = Hyper {
            epochs: 25,
            ..Hyper::default()
        };
        let specs = two_view_specs(&fix);
        let out = two_stage_train(
            &specs,
            &fix.graph,
            &fix.features,
            &fix.task,
            &split,
            &hyper,
            &FusionOptions::default(),
        )
        .unwrap();

        // Reproduce stage 1 alone and compare bits.
        for (i, spec) in specs.iter().enumerate() {
            let mut h = hyper.clone();
            h.seed = hyper.seed + i as u64;
            let (solo, _) = pretrain_expert(
                spec,
                &fix.graph,
                &fix.features,
                &fix.task,
                &split,
                &h,
            )
            .unwrap();
            for (a, b) in out.bundle.experts[i]
                .params
                .tensors()
                .iter()
                .zip(solo.params.tensors())
            {
                let ab: Vec<u64> = a.data.iter().map(|v| v.to_bits()).collect();
                let bb: Vec<u64> = b.data.iter().map(|v| v.to_bits()).collect();
                assert_eq!(ab, bb, "expert {i} drifted");
            }
        }
    }

    #[test]
    fn no_freeze_moves_expert_params() {
        // Short pretraining leaves validation headroom, so stage two's
        // best snapshot lands after fine-tuning steps.
        let fix = make_two_view_fixture(32);
        let split = split_dataset(&fix.task, 3).unwrap();
        let hyper = Hyper {
            epochs: 8,
            ..Hyper::default()
        };
        let specs = two_view_specs(&fix);
        let frozen = two_stage_train(
            &specs,
            &fix.graph,
            &fix.features,
            &fix.task,
            &split,
            &hyper,
            &FusionOptions::default(),
        )
        .unwrap();
        let nf = two_stage_train(
            &specs,
            &fix.graph,
            &fix.features,
            &fix.task,
            &split,
            &hyper,
            &FusionOptions {
                mode: FusionMode::TwoStageNoFreeze,
                ..FusionOptions::default()
            },
        )
        .unwrap();
        let frozen_first = &frozen.bundle.experts[0].params.tensors()[0].data;
        let nf_first = &nf.bundle.experts[0].params.tensors()[0].data;
        assert_ne!(frozen_first, nf_first);
    }

    #[test]
    fn stage_two_gradients_skip_frozen_expert_params() {
        // Frozen logits enter the gate tape as constants; registering the
        // expert parameters on the same tape shows no gradient reaches
        // them while the gate still trains.
        let fix = make_two_view_fixture(6);
        let split = split_dataset(&fix.task, 1).unwrap();
        let hyper = Hyper {
            epochs: 5,
            ..Hyper::default()
        };
        let out = two_stage_train(
            &two_view_specs(&fix),
            &fix.graph,
            &fix.features,
            &fix.task,
            &split,
            &hyper,
            &FusionOptions::default(),
        )
        .unwrap();

        let logits = bundle_logits(&out.bundle, &fix.graph, &fix.features).unwrap();
        let item_nodes: Vec<u32> = fix.task.node_items().iter().map(|&(v, _)| v).collect();
        let mut tape = Tape::new();
        let frozen_vars: Vec<Var> = logits
            .iter()
            .map(|z| tape.constant(gather_item_rows(z, &item_nodes)))
            .collect();
        let expert_w = tape.param(&out.bundle.experts[0].params.layers[0][0].w);
        let gw = tape.param(&out.gate.w);
        let gb = tape.param(&out.gate.b);
        let gate_logits = gate_logits_on_tape(&mut tape, &frozen_vars, gw, gb).unwrap();
        let weights = tape.softmax_rows(gate_logits).unwrap();
        let fused = tape.mix_experts(weights, &frozen_vars).unwrap();
        let labels: Vec<u32> = fix.task.node_items().iter().map(|&(_, l)| l).collect();
        let loss = tape.cross_entropy(fused, labels).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert!(grads.get(expert_w).data.iter().all(|&g| g == 0.0));
        assert!(grads.get(gw).data.iter().any(|&g| g != 0.0));
    }

    #[test]
    fn fused_beats_single_views_on_two_view_fixture() {
        let fix = make_two_view_fixture(24);
        let split = split_dataset(&fix.task, 2).unwrap();
        let hyper = Hyper {
            epochs: 150,
            seed: 1,
            ..Hyper::default()
        };
        let out = two_stage_train(
            &two_view_specs(&fix),
            &fix.graph,
            &fix.features,
            &fix.task,
            &split,
            &hyper,
            &FusionOptions::default(),
        )
        .unwrap();
        let logits = bundle_logits(&out.bundle, &fix.graph, &fix.features).unwrap();
        // Full item set: each solo expert caps at 3/4 (blind to one view),
        // while the fused decision can read both.
        let all: Vec<usize> = (0..fix.task.len()).collect();
        let fused_all = fused_accuracy(&logits, &out.gate, &fix.task, &all).unwrap();
        let labels: Vec<u32> = all.iter().map(|&i| fix.task.node_items()[i].1).collect();
        let best_solo = logits
            .iter()
            .map(|z| accuracy(&predictions_at(z, &fix.task, &all), &labels).unwrap())
            .fold(0.0, f64::max);
        assert!(best_solo <= 0.8, "solo expert should stay view-limited");
        assert!(
            fused_all >= best_solo + 0.1,
            "fused {fused_all} vs best expert {best_solo}"
        );
    }

    #[test]
    fn joint_modes_train_from_scratch() {
        let fix = make_two_view_fixture(8);
        let split = split_dataset(&fix.task, 5).unwrap();
        let hyper = Hyper {
            epochs: 40,
            ..Hyper::default()
        };
        for mode in [FusionMode::Joint, FusionMode::JointWithUniLosses] {
            let out = two_stage_train(
                &two_view_specs(&fix),
                &fix.graph,
                &fix.features,
                &fix.task,
                &split,
                &hyper,
                &FusionOptions {
                    mode,
                    ..FusionOptions::default()
                },
            )
            .unwrap();
            assert!(out.best_val > 0.5, "{mode:?} stuck at {}", out.best_val);
        }
    }

    #[test]
    fn fusion_mode_names_round_trip() {
        for mode in ALL_FUSION_MODES {
            assert_eq!(mode.as_str().parse::<FusionMode>().unwrap(), mode);
        }
        assert!("two-phase".parse::<FusionMode>().is_err());
    }

    #[test]
    fn rejects_pair_tasks_and_tiny_bundles() {
        let fix = make_two_view_fixture(6);
        let task = LabeledTask::link_prediction(vec![
            (0, 1, 1),
            (1, 2, 0),
            (2, 3, 1),
            (3, 4, 0),
            (4, 5, 1),
        ]);
        let split = split_dataset(&task, 0).unwrap();
        let hyper = Hyper::default();
        let err = two_stage_train(
            &two_view_specs(&fix),
            &fix.graph,
            &fix.features,
            &task,
            &split,
            &hyper,
            &FusionOptions::default(),
        );
        assert!(matches!(err, Err(FusionError::NodeTaskOnly)));

        let specs = two_view_specs(&fix);
        let split2 = split_dataset(&fix.task, 0).unwrap();
        assert!(matches!(
            two_stage_train(
                &specs[..1],
                &fix.graph,
                &fix.features,
                &fix.task,
                &split2,
                &hyper,
                &FusionOptions::default()
            ),
            Err(FusionError::TooFewExperts(1))
        ));
    }
}
