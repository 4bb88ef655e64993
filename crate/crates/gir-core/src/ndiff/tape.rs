use super::{NdiffError, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Leaf,
    /// x·W + b, b broadcast over rows.
    Affine { x: usize, w: usize, b: usize },
    Relu { x: usize },
    ConcatCols { xs: Vec<usize> },
    /// Row v of the output is the mean of the listed input rows; an empty
    /// list produces a zero row.
    GroupedMean { x: usize, groups: Vec<Vec<u32>> },
    SoftmaxRows { x: usize },
    GatherRows { x: usize, idx: Vec<u32> },
    /// Row-pair dot products: out[i] = x[u_i] . x[v_i].
    PairScores { x: usize, pairs: Vec<(u32, u32)> },
    CrossEntropy { logits: usize, labels: Vec<u32> },
    BceWithLogits { logits: usize, targets: Vec<f64> },
    /// Cross entropy of softmax(logits) against fixed soft target rows.
    SoftCrossEntropy { logits: usize, targets: Tensor },
    /// fused[i] = sum_k weights[i,k] * experts_k[i]; convex row mixing.
    MixExperts { weights: usize, experts: Vec<usize> },
    /// a + c*b elementwise.
    AddScaled { a: usize, b: usize, c: f64 },
    Mul { a: usize, b: usize },
}

/// Recorded computation graph. Values are computed eagerly as ops are
/// pushed; construction order is the topological order used by backward.
pub struct Tape {
    values: Vec<Tensor>,
    ops: Vec<Op>,
}

/// Gradients from one backward pass, indexed by the originating [`Var`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Gradient for `v`; zero tensor if the loss never touched it.
    pub fn get(&self, v: Var) -> Tensor {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(self.shapes[v.0].0, self.shapes[v.0].1),
        }
    }
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Tape {
        Tape {
            values: Vec::new(),
            ops: Vec::new(),
        }
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.values[v.0]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Registers a trainable parameter leaf (value is copied in).
    pub fn param(&mut self, t: &Tensor) -> Var {
        self.push_unchecked(t.clone(), Op::Leaf)
    }

    /// Registers a non-trainable input leaf.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push_unchecked(t, Op::Leaf)
    }

    fn push_unchecked(&mut self, value: Tensor, op: Op) -> Var {
        self.values.push(value);
        self.ops.push(op);
        Var(self.values.len() - 1)
    }

    fn push(&mut self, name: &'static str, value: Tensor, op: Op) -> Result<Var, NdiffError> {
        if !value.is_all_finite() {
            return Err(NdiffError::NonFinite { op: name });
        }
        Ok(self.push_unchecked(value, op))
    }

    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var, NdiffError> {
        let (xv, wv, bv) = (&self.values[x.0], &self.values[w.0], &self.values[b.0]);
        if xv.cols != wv.rows || bv.rows != 1 || bv.cols != wv.cols {
            return Err(NdiffError::ShapeMismatch {
                op: "affine",
                detail: format!(
                    "x {}x{}, W {}x{}, b {}x{}",
                    xv.rows, xv.cols, wv.rows, wv.cols, bv.rows, bv.cols
                ),
            });
        }
        let (n, d, k) = (xv.rows, xv.cols, wv.cols);
        let mut out = Tensor::zeros(n, k);
        for i in 0..n {
            let xi = xv.row(i);
            let oi = out.row_mut(i);
            oi.copy_from_slice(bv.row(0));
            for (l, &xval) in xi.iter().enumerate().take(d) {
                if xval == 0.0 {
                    continue;
                }
                let wrow = wv.row(l);
                for j in 0..k {
                    oi[j] += xval * wrow[j];
                }
            }
        }
        self.push("affine", out, Op::Affine { x: x.0, w: w.0, b: b.0 })
    }

    pub fn relu(&mut self, x: Var) -> Result<Var, NdiffError> {
        let xv = &self.values[x.0];
        let out = Tensor::from_vec(
            xv.rows,
            xv.cols,
            xv.data.iter().map(|&v| v.max(0.0)).collect(),
        );
        self.push("relu", out, Op::Relu { x: x.0 })
    }

    pub fn concat_cols(&mut self, xs: &[Var]) -> Result<Var, NdiffError> {
        assert!(!xs.is_empty(), "concat_cols needs at least one input");
        let rows = self.values[xs[0].0].rows;
        let mut cols = 0;
        for &x in xs {
            let v = &self.values[x.0];
            if v.rows != rows {
                return Err(NdiffError::ShapeMismatch {
                    op: "concat_cols",
                    detail: format!("row counts {} vs {}", rows, v.rows),
                });
            }
            cols += v.cols;
        }
        let mut out = Tensor::zeros(rows, cols);
        for i in 0..rows {
            let mut offset = 0;
            for &x in xs {
                let v = &self.values[x.0];
                out.row_mut(i)[offset..offset + v.cols].copy_from_slice(v.row(i));
                offset += v.cols;
            }
        }
        self.push(
            "concat_cols",
            out,
            Op::ConcatCols {
                xs: xs.iter().map(|v| v.0).collect(),
            },
        )
    }

    /// Mean of selected input rows per output row; empty selection gives a
    /// zero row.
    pub fn grouped_mean(&mut self, x: Var, groups: Vec<Vec<u32>>) -> Result<Var, NdiffError> {
        let xv = &self.values[x.0];
        for g in &groups {
            for &u in g {
                if u as usize >= xv.rows {
                    return Err(NdiffError::IndexOutOfRange {
                        op: "grouped_mean",
                        index: u as usize,
                        bound: xv.rows,
                    });
                }
            }
        }
        let mut out = Tensor::zeros(groups.len(), xv.cols);
        for (r, group) in groups.iter().enumerate() {
            if group.is_empty() {
                continue;
            }
            let scale = 1.0 / group.len() as f64;
            let orow = out.row_mut(r);
            for &u in group {
                for (j, &v) in xv.row(u as usize).iter().enumerate() {
                    orow[j] += v * scale;
                }
            }
        }
        self.push("grouped_mean", out, Op::GroupedMean { x: x.0, groups })
    }

    pub fn softmax_rows(&mut self, x: Var) -> Result<Var, NdiffError> {
        let xv = &self.values[x.0];
        let mut out = Tensor::zeros(xv.rows, xv.cols);
        for i in 0..xv.rows {
            softmax_into(xv.row(i), out.row_mut(i));
        }
        self.push("softmax_rows", out, Op::SoftmaxRows { x: x.0 })
    }

    pub fn gather_rows(&mut self, x: Var, idx: Vec<u32>) -> Result<Var, NdiffError> {
        let xv = &self.values[x.0];
        let mut out = Tensor::zeros(idx.len(), xv.cols);
        for (i, &r) in idx.iter().enumerate() {
            if r as usize >= xv.rows {
                return Err(NdiffError::IndexOutOfRange {
                    op: "gather_rows",
                    index: r as usize,
                    bound: xv.rows,
                });
            }
            out.row_mut(i).copy_from_slice(xv.row(r as usize));
        }
        self.push("gather_rows", out, Op::GatherRows { x: x.0, idx })
    }

    pub fn pair_scores(&mut self, x: Var, pairs: Vec<(u32, u32)>) -> Result<Var, NdiffError> {
        let xv = &self.values[x.0];
        let mut out = Tensor::zeros(pairs.len(), 1);
        for (i, &(u, v)) in pairs.iter().enumerate() {
            for &node in &[u, v] {
                if node as usize >= xv.rows {
                    return Err(NdiffError::IndexOutOfRange {
                        op: "pair_scores",
                        index: node as usize,
                        bound: xv.rows,
                    });
                }
            }
            let dot: f64 = xv
                .row(u as usize)
                .iter()
                .zip(xv.row(v as usize))
                .map(|(a, b)| a * b)
                .sum();
            out.data[i] = dot;
        }
        self.push("pair_scores", out, Op::PairScores { x: x.0, pairs })
    }

    /// Mean negative log-likelihood of hard labels under softmax(logits).
    pub fn cross_entropy(&mut self, logits: Var, labels: Vec<u32>) -> Result<Var, NdiffError> {
        let lv = &self.values[logits.0];
        if labels.len() != lv.rows {
            return Err(NdiffError::ShapeMismatch {
                op: "cross_entropy",
                detail: format!("{} labels for {} rows", labels.len(), lv.rows),
            });
        }
        let mut total = 0.0;
        for (i, &label) in labels.iter().enumerate() {
            if label as usize >= lv.cols {
                return Err(NdiffError::LabelOutOfRange {
                    label,
                    classes: lv.cols,
                });
            }
            total += log_sum_exp(lv.row(i)) - lv.get(i, label as usize);
        }
        let loss = Tensor::scalar(total / lv.rows as f64);
        self.push(
            "cross_entropy",
            loss,
            Op::CrossEntropy {
                logits: logits.0,
                labels,
            },
        )
    }

    /// Mean binary cross entropy on logits, stabilized.
    pub fn bce_with_logits(&mut self, logits: Var, targets: Vec<f64>) -> Result<Var, NdiffError> {
        let lv = &self.values[logits.0];
        if lv.cols != 1 || targets.len() != lv.rows {
            return Err(NdiffError::ShapeMismatch {
                op: "bce_with_logits",
                detail: format!(
                    "logits {}x{}, {} targets",
                    lv.rows,
                    lv.cols,
                    targets.len()
                ),
            });
        }
        let mut total = 0.0;
        for (i, &t) in targets.iter().enumerate() {
            let z = lv.data[i];
            total += z.max(0.0) - z * t + (-z.abs()).exp().ln_1p();
        }
        let loss = Tensor::scalar(total / lv.rows as f64);
        self.push(
            "bce_with_logits",
            loss,
            Op::BceWithLogits {
                logits: logits.0,
                targets,
            },
        )
    }

    /// Mean cross entropy of softmax(logits) against fixed soft target
    /// distributions (one per row, entries summing to 1).
    pub fn soft_cross_entropy(&mut self, logits: Var, targets: Tensor) -> Result<Var, NdiffError> {
        let lv = &self.values[logits.0];
        if targets.shape() != lv.shape() {
            return Err(NdiffError::ShapeMismatch {
                op: "soft_cross_entropy",
                detail: format!(
                    "logits {}x{}, targets {}x{}",
                    lv.rows, lv.cols, targets.rows, targets.cols
                ),
            });
        }
        let mut total = 0.0;
        for i in 0..lv.rows {
            let lse = log_sum_exp(lv.row(i));
            for (j, &t) in targets.row(i).iter().enumerate() {
                if t != 0.0 {
                    total += t * (lse - lv.get(i, j));
                }
            }
        }
        let loss = Tensor::scalar(total / lv.rows as f64);
        self.push(
            "soft_cross_entropy",
            loss,
            Op::SoftCrossEntropy {
                logits: logits.0,
                targets,
            },
        )
    }

    /// Convex mixture of expert rows: out[i] = sum_k weights[i,k] * experts_k[i].
    pub fn mix_experts(&mut self, weights: Var, experts: &[Var]) -> Result<Var, NdiffError> {
        assert!(!experts.is_empty(), "mix_experts needs at least one expert");
        let wv = &self.values[weights.0];
        if wv.cols != experts.len() {
            return Err(NdiffError::ShapeMismatch {
                op: "mix_experts",
                detail: format!("{} weight columns, {} experts", wv.cols, experts.len()),
            });
        }
        let (n, c) = self.values[experts[0].0].shape();
        for &e in experts {
            let ev = &self.values[e.0];
            if ev.shape() != (n, c) || wv.rows != n {
                return Err(NdiffError::ShapeMismatch {
                    op: "mix_experts",
                    detail: format!(
                        "weights {}x{}, expert {}x{}",
                        wv.rows, wv.cols, ev.rows, ev.cols
                    ),
                });
            }
        }
        let mut out = Tensor::zeros(n, c);
        for i in 0..n {
            for (k, &e) in experts.iter().enumerate() {
                let w = self.values[weights.0].get(i, k);
                let erow = self.values[e.0].row(i);
                let orow = out.row_mut(i);
                for j in 0..c {
                    orow[j] += w * erow[j];
                }
            }
        }
        self.push(
            "mix_experts",
            out,
            Op::MixExperts {
                weights: weights.0,
                experts: experts.iter().map(|v| v.0).collect(),
            },
        )
    }

    /// a + c*b elementwise.
    pub fn add_scaled(&mut self, a: Var, b: Var, c: f64) -> Result<Var, NdiffError> {
        let (av, bv) = (&self.values[a.0], &self.values[b.0]);
        if av.shape() != bv.shape() {
            return Err(NdiffError::ShapeMismatch {
                op: "add_scaled",
                detail: format!(
                    "{}x{} vs {}x{}",
                    av.rows, av.cols, bv.rows, bv.cols
                ),
            });
        }
        let data = av
            .data
            .iter()
            .zip(&bv.data)
            .map(|(&x, &y)| x + c * y)
            .collect();
        let out = Tensor::from_vec(av.rows, av.cols, data);
        self.push("add_scaled", out, Op::AddScaled { a: a.0, b: b.0, c })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NdiffError> {
        self.add_scaled(a, b, 1.0)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NdiffError> {
        let (av, bv) = (&self.values[a.0], &self.values[b.0]);
        if av.shape() != bv.shape() {
            return Err(NdiffError::ShapeMismatch {
                op: "mul",
                detail: format!(
                    "{}x{} vs {}x{}",
                    av.rows, av.cols, bv.rows, bv.cols
                ),
            });
        }
        let data = av.data.iter().zip(&bv.data).map(|(&x, &y)| x * y).collect();
        let out = Tensor::from_vec(av.rows, av.cols, data);
        self.push("mul", out, Op::Mul { a: a.0, b: b.0 })
    }

    /// Reverse accumulation from a scalar loss. Each node is visited once,
    /// in reverse construction order.
    pub fn backward(&self, loss: Var) -> Result<Gradients, NdiffError> {
        let lv = &self.values[loss.0];
        if lv.shape() != (1, 1) {
            return Err(NdiffError::NonScalarLoss {
                rows: lv.rows,
                cols: lv.cols,
            });
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.values.len()];
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            self.accumulate(id, &g, &mut grads);
            grads[id] = Some(g);
        }

        Ok(Gradients {
            grads,
            shapes: self.values.iter().map(|v| v.shape()).collect(),
        })
    }

    fn accumulate(&self, id: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let mut bump = |target: usize, update: &dyn Fn(&mut Tensor)| {
            let slot = grads[target].get_or_insert_with(|| {
                Tensor::zeros(self.values[target].rows, self.values[target].cols)
            });
            update(slot);
        };
        match &self.ops[id] {
            Op::Leaf => {}
            Op::Affine { x, w, b } => {
                let xv = &self.values[*x];
                let wv = &self.values[*w];
                let (n, d, k) = (xv.rows, xv.cols, wv.cols);
                bump(*x, &|gx: &mut Tensor| {
                    for i in 0..n {
                        let grow = g.row(i);
                        let gxrow = gx.row_mut(i);
                        for l in 0..d {
                            let wrow = wv.row(l);
                            let mut acc = 0.0;
                            for j in 0..k {
                                acc += grow[j] * wrow[j];
                            }
                            gxrow[l] += acc;
                        }
                    }
                });
                bump(*w, &|gw: &mut Tensor| {
                    for i in 0..n {
                        let xrow = xv.row(i);
                        let grow = g.row(i);
                        for l in 0..d {
                            if xrow[l] == 0.0 {
                                continue;
                            }
                            let gwrow = gw.row_mut(l);
                            for j in 0..k {
                                gwrow[j] += xrow[l] * grow[j];
                            }
                        }
                    }
                });
                bump(*b, &|gb: &mut Tensor| {
                    for i in 0..n {
                        for (j, &gv) in g.row(i).iter().enumerate() {
                            gb.data[j] += gv;
                        }
                    }
                });
            }
            Op::Relu { x } => {
                let xv = &self.values[*x];
                bump(*x, &|gx: &mut Tensor| {
                    for (i, gv) in gx.data.iter_mut().enumerate() {
                        if xv.data[i] > 0.0 {
                            *gv += g.data[i];
                        }
                    }
                });
            }
            Op::ConcatCols { xs } => {
                let mut offset = 0;
                for &x in xs {
                    let cols = self.values[x].cols;
                    let rows = self.values[x].rows;
                    bump(x, &|gx: &mut Tensor| {
                        for i in 0..rows {
                            for j in 0..cols {
                                gx.row_mut(i)[j] += g.row(i)[offset + j];
                            }
                        }
                    });
                    offset += cols;
                }
            }
            Op::GroupedMean { x, groups } => {
                bump(*x, &|gx: &mut Tensor| {
                    for (r, group) in groups.iter().enumerate() {
                        if group.is_empty() {
                            continue;
                        }
                        let scale = 1.0 / group.len() as f64;
                        let grow = g.row(r);
                        for &u in group {
                            let gxrow = gx.row_mut(u as usize);
                            for (j, &gv) in grow.iter().enumerate() {
                                gxrow[j] += gv * scale;
                            }
                        }
                    }
                });
            }
            Op::SoftmaxRows { x } => {
                let sv = &self.values[id];
                bump(*x, &|gx: &mut Tensor| {
                    for i in 0..sv.rows {
                        let srow = sv.row(i);
                        let grow = g.row(i);
                        let dot: f64 = srow.iter().zip(grow).map(|(s, gv)| s * gv).sum();
                        let gxrow = gx.row_mut(i);
                        for j in 0..sv.cols {
                            gxrow[j] += srow[j] * (grow[j] - dot);
                        }
                    }
                });
            }
            Op::GatherRows { x, idx } => {
                bump(*x, &|gx: &mut Tensor| {
                    for (i, &r) in idx.iter().enumerate() {
                        let gxrow = gx.row_mut(r as usize);
                        for (j, &gv) in g.row(i).iter().enumerate() {
                            gxrow[j] += gv;
                        }
                    }
                });
            }
            Op::PairScores { x, pairs } => {
                let xv = &self.values[*x];
                bump(*x, &|gx: &mut Tensor| {
                    for (i, &(u, v)) in pairs.iter().enumerate() {
                        let gv = g.data[i];
                        for j in 0..xv.cols {
                            gx.row_mut(u as usize)[j] += gv * xv.get(v as usize, j);
                        }
                        for j in 0..xv.cols {
                            gx.row_mut(v as usize)[j] += gv * xv.get(u as usize, j);
                        }
                    }
                });
            }
            Op::CrossEntropy { logits, labels } => {
                let lv = &self.values[*logits];
                let scale = g.item() / lv.rows as f64;
                bump(*logits, &|gl: &mut Tensor| {
                    let mut probs = vec![0.0; lv.cols];
                    for (i, &label) in labels.iter().enumerate() {
                        softmax_into(lv.row(i), &mut probs);
                        let glrow = gl.row_mut(i);
                        for (j, &p) in probs.iter().enumerate() {
                            let target = if j == label as usize { 1.0 } else { 0.0 };
                            glrow[j] += scale * (p - target);
                        }
                    }
                });
            }
            Op::BceWithLogits { logits, targets } => {
                let lv = &self.values[*logits];
                let scale = g.item() / lv.rows as f64;
                bump(*logits, &|gl: &mut Tensor| {
                    for (i, &t) in targets.iter().enumerate() {
                        let sig = sigmoid(lv.data[i]);
                        gl.data[i] += scale * (sig - t);
                    }
                });
            }
            Op::SoftCrossEntropy { logits, targets } => {
                let lv = &self.values[*logits];
                let scale = g.item() / lv.rows as f64;
                bump(*logits, &|gl: &mut Tensor| {
                    let mut probs = vec![0.0; lv.cols];
                    for i in 0..lv.rows {
                        softmax_into(lv.row(i), &mut probs);
                        let glrow = gl.row_mut(i);
                        for (j, &p) in probs.iter().enumerate() {
                            glrow[j] += scale * (p - targets.get(i, j));
                        }
                    }
                });
            }
            Op::MixExperts { weights, experts } => {
                let wv = &self.values[*weights];
                let (n, c) = self.values[experts[0]].shape();
                bump(*weights, &|gw: &mut Tensor| {
                    for i in 0..n {
                        for (k, &e) in experts.iter().enumerate() {
                            let erow = self.values[e].row(i);
                            let dot: f64 =
                                g.row(i).iter().zip(erow).map(|(gv, ev)| gv * ev).sum();
                            gw.row_mut(i)[k] += dot;
                        }
                    }
                });
                for (k, &e) in experts.iter().enumerate() {
                    bump(e, &|ge: &mut Tensor| {
                        for i in 0..n {
                            let w = wv.get(i, k);
                            let gerow = ge.row_mut(i);
                            for (j, &gv) in g.row(i).iter().enumerate().take(c) {
                                gerow[j] += w * gv;
                            }
                        }
                    });
                }
            }
            Op::AddScaled { a, b, c } => {
                bump(*a, &|ga: &mut Tensor| {
                    for (i, gv) in ga.data.iter_mut().enumerate() {
                        *gv += g.data[i];
                    }
                });
                bump(*b, &|gb: &mut Tensor| {
                    for (i, gv) in gb.data.iter_mut().enumerate() {
                        *gv += c * g.data[i];
                    }
                });
            }
            Op::Mul { a, b } => {
                let av = &self.values[*a];
                let bv = &self.values[*b];
                bump(*a, &|ga: &mut Tensor| {
                    for (i, gv) in ga.data.iter_mut().enumerate() {
                        *gv += g.data[i] * bv.data[i];
                    }
                });
                bump(*b, &|gb: &mut Tensor| {
                    for (i, gv) in gb.data.iter_mut().enumerate() {
                        *gv += g.data[i] * av.data[i];
                    }
                });
            }
        }
    }
}

fn softmax_into(logits: &[f64], out: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &z) in out.iter_mut().zip(logits) {
        *o = (z - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

fn log_sum_exp(logits: &[f64]) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits.iter().map(|&z| (z - max).exp()).sum();
    max + sum.ln()
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ndiff::gradcheck;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn affine_identity() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]));
        let w = tape.param(&Tensor::from_vec(2, 2, vec![1.0, 0.0, 0.0, 1.0]));
        let b = tape.param(&Tensor::zeros(1, 2));
        let y = tape.affine(x, w, b).unwrap();
        assert_eq!(tape.value(y).data, vec![1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn relu_clamps_negatives() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_vec(1, 2, vec![-1.0, 2.0]));
        let y = tape.relu(x).unwrap();
        assert_eq!(tape.value(y).data, vec![0.0, 2.0]);
    }

    #[test]
    fn softmax_uniform_on_equal_logits() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_vec(1, 4, vec![3.0; 4]));
        let y = tape.softmax_rows(x).unwrap();
        for &v in &tape.value(y).data {
            assert!((v - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_rows_sum_to_one_and_are_nonnegative() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::glorot(6, 5, &mut rng));
        let y = tape.softmax_rows(x).unwrap();
        for i in 0..6 {
            let row = tape.value(y).row(i);
            assert!(row.iter().all(|&v| v >= 0.0));
            let sum: f64 = row.iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn grouped_mean_averages_rows() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_vec(3, 2, vec![9.0, 9.0, 2.0, 0.0, 4.0, 2.0]));
        let y = tape
            .grouped_mean(x, vec![vec![1, 2], vec![], vec![0]])
            .unwrap();
        let v = tape.value(y);
        assert_eq!(v.row(0), &[3.0, 1.0]);
        assert_eq!(v.row(1), &[0.0, 0.0]);
        assert_eq!(v.row(2), &[9.0, 9.0]);
    }

    #[test]
    fn grouped_mean_rejects_bad_index() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(2, 2));
        assert!(matches!(
            tape.grouped_mean(x, vec![vec![5]]),
            Err(NdiffError::IndexOutOfRange { .. })
        ));
    }

    #[test]
    fn cross_entropy_uniform_logits_is_ln_k() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(3, 2));
        let loss = tape.cross_entropy(x, vec![0, 1, 0]).unwrap();
        assert!((tape.value(loss).item() - 2.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_rejects_bad_label() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(1, 3));
        assert!(matches!(
            tape.cross_entropy(x, vec![3]),
            Err(NdiffError::LabelOutOfRange { label: 3, .. })
        ));
    }

    #[test]
    fn bce_zero_logit_label_one_is_ln_two() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(1, 1));
        let loss = tape.bce_with_logits(x, vec![1.0]).unwrap();
        assert!((tape.value(loss).item() - 2.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn bce_is_stable_at_extreme_logits() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_vec(2, 1, vec![500.0, -500.0]));
        let loss = tape.bce_with_logits(x, vec![1.0, 0.0]).unwrap();
        assert!(tape.value(loss).item().abs() < 1e-12);
    }

    #[test]
    fn soft_cross_entropy_matches_hard_labels_on_onehot_targets() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let logits = Tensor::glorot(4, 3, &mut rng);
        let labels = vec![2u32, 0, 1, 1];
        let mut onehot = Tensor::zeros(4, 3);
        for (i, &l) in labels.iter().enumerate() {
            onehot.set(i, l as usize, 1.0);
        }
        let mut tape = Tape::new();
        let x = tape.constant(logits.clone());
        let hard = tape.cross_entropy(x, labels).unwrap();
        let soft = tape.soft_cross_entropy(x, onehot).unwrap();
        assert!((tape.value(hard).item() - tape.value(soft).item()).abs() < 1e-12);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(2, 2));
        assert!(matches!(
            tape.backward(x),
            Err(NdiffError::NonScalarLoss { rows: 2, cols: 2 })
        ));
    }

    #[test]
    fn product_rule_on_scalars() {
        let mut tape = Tape::new();
        let x = tape.param(&Tensor::scalar(3.0));
        let y = tape.param(&Tensor::scalar(5.0));
        let z = tape.mul(x, y).unwrap();
        let grads = tape.backward(z).unwrap();
        assert_eq!(grads.get(x).item(), 5.0);
        assert_eq!(grads.get(y).item(), 3.0);
    }

    #[test]
    fn untouched_leaf_gets_zero_gradient() {
        let mut tape = Tape::new();
        let x = tape.param(&Tensor::scalar(3.0));
        let unused = tape.param(&Tensor::zeros(2, 2));
        let y = tape.mul(x, x).unwrap();
        let grads = tape.backward(y).unwrap();
        assert_eq!(grads.get(unused).data, vec![0.0; 4]);
        assert_eq!(grads.get(x).item(), 6.0);
    }

    #[test]
    fn mix_experts_with_onehot_weights_selects_expert() {
        let mut tape = Tape::new();
        let w = tape.constant(Tensor::from_vec(2, 2, vec![1.0, 0.0, 0.0, 1.0]));
        let e0 = tape.constant(Tensor::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]));
        let e1 = tape.constant(Tensor::from_vec(2, 2, vec![5.0, 6.0, 7.0, 8.0]));
        let fused = tape.mix_experts(w, &[e0, e1]).unwrap();
        assert_eq!(tape.value(fused).data, vec![1.0, 2.0, 7.0, 8.0]);
    }

    #[test]
    fn nonfinite_outputs_are_rejected() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::scalar(1e308));
        let b = tape.constant(Tensor::scalar(1e308));
        assert!(matches!(
            tape.add(a, b),
            Err(NdiffError::NonFinite { op: "add_scaled" })
        ));
    }

    fn check_op(build: impl Fn(&mut Tape, &[Var]) -> Var, params: &[Tensor], tol: f64) {
        let err = gradcheck::max_relative_error(params, 1e-4, |tape, vars| build(tape, vars));
        assert!(err < tol, "gradient mismatch: relative error {err}");
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = Tensor::glorot(4, 3, &mut rng);
        let w = Tensor::glorot(3, 2, &mut rng);
        let b = Tensor::glorot(1, 2, &mut rng);

        // affine -> relu -> cross entropy
        check_op(
            |tape, vars| {
                let h = tape.affine(vars[0], vars[1], vars[2]).unwrap();
                let h = tape.relu(h).unwrap();
                tape.cross_entropy(h, vec![0, 1, 0, 1]).unwrap()
            },
            &[x.clone(), w.clone(), b.clone()],
            1e-5,
        );

        // grouped mean, including an empty group
        check_op(
            |tape, vars| {
                let m = tape
                    .grouped_mean(vars[0], vec![vec![1, 2], vec![], vec![0, 3], vec![2]])
                    .unwrap();
                tape.cross_entropy(m, vec![0, 1, 2, 0]).unwrap()
            },
            &[x.clone()],
            1e-5,
        );

        // pair scores -> bce
        check_op(
            |tape, vars| {
                let s = tape.pair_scores(vars[0], vec![(0, 1), (2, 3), (1, 3)]).unwrap();
                tape.bce_with_logits(s, vec![1.0, 0.0, 1.0]).unwrap()
            },
            &[x.clone()],
            1e-5,
        );

        // softmax composed through mul with itself via concat
        check_op(
            |tape, vars| {
                let s = tape.softmax_rows(vars[0]).unwrap();
                let c = tape.concat_cols(&[s, vars[0]]).unwrap();
                let g = tape.gather_rows(c, vec![0, 2, 2]).unwrap();
                tape.cross_entropy(g, vec![0, 3, 5]).unwrap()
            },
            &[x.clone()],
            1e-5,
        );

        // mixture of experts with a soft cross entropy regularizer
        let w2 = Tensor::glorot(4, 2, &mut rng);
        let e1 = Tensor::glorot(4, 3, &mut rng);
        let targets = Tensor::from_vec(
            4,
            2,
            vec![0.8, 0.2, 0.5, 0.5, 0.1, 0.9, 0.3, 0.7],
        );
        check_op(
            move |tape, vars| {
                let weights = tape.softmax_rows(vars[0]).unwrap();
                let fused = tape.mix_experts(weights, &[vars[1], vars[2]]).unwrap();
                let ce = tape.cross_entropy(fused, vec![0, 1, 2, 0]).unwrap();
                let fwr = tape.soft_cross_entropy(vars[0], targets.clone()).unwrap();
                tape.add_scaled(ce, fwr, 0.1).unwrap()
            },
            &[w2, x, e1],
            1e-5,
        );
    }
}
