use crate::autodiff::params::{ParamId, ParamStore};
use crate::error::{Error, Result};
use crate::metrics::LOGIT_CLAMP;
use crate::tensor::{sigmoid, BinaryOp, Real, Tensor, UnaryOp};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Backward rule of a user-defined op: `(grad_out, input_values, output_value)`
/// to one gradient per input.
pub type BackwardFn<T> = Box<dyn Fn(&Tensor<T>, &[&Tensor<T>], &Tensor<T>) -> Result<Vec<Tensor<T>>> + Send + Sync>;

enum Op<T> {
    Constant,
    Param(ParamId),
    MatMul(NodeId, NodeId),
    // rhs may be a 1 × cols row broadcast over lhs rows
    Binary(BinaryOp, NodeId, NodeId),
    MulConst(NodeId, Tensor<T>),
    Unary(UnaryOp, NodeId),
    Affine(NodeId, T),
    Broadcast(NodeId),
    NormalizeRows(NodeId, T),
    Gather(NodeId, Vec<usize>),
    SelectRows(Vec<NodeId>, Vec<usize>),
    SumAll(NodeId),
    Bce {
        logits: NodeId,
        targets: Tensor<T>,
        weights: Vec<T>,
    },
    SoftmaxXent {
        logits: NodeId,
        targets: Vec<usize>,
        weights: Vec<T>,
    },
    SquaredError {
        pred: NodeId,
        targets: Tensor<T>,
        weights: Vec<T>,
    },
    Custom(Vec<NodeId>, BackwardFn<T>),
}

struct Node<T> {
    op: Op<T>,
    value: Tensor<T>,
}

/// Operation record of one forward pass.
///
/// Nodes are appended in evaluation order, so every node's inputs precede it.
/// A parameter enters the tape once no matter how many timesteps reuse it;
/// its gradient is the sum over all uses.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    param_nodes: Vec<Option<NodeId>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients of leaf nodes (constants and parameters) after a backward pass.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, node: NodeId) -> Option<&Tensor<T>> {
        self.grads.get(node.0).and_then(Option::as_ref)
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            param_nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> [usize; 2] {
        self.nodes[id.0].value.shape()
    }

    fn push(&mut self, op: Op<T>, value: Tensor<T>) -> NodeId {
        self.nodes.push(Node { op, value });
        NodeId(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> NodeId {
        self.push(Op::Constant, value)
    }

    /// Leaf for a parameter; repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> NodeId {
        let idx = id.index();
        if self.param_nodes.len() <= idx {
            self.param_nodes.resize(idx + 1, None);
        }
        if let Some(node) = self.param_nodes[idx] {
            return node;
        }
        let node = self.push(Op::Param(id), store.value(id).clone());
        self.param_nodes[idx] = Some(node);
        node
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).matmul(self.value(b))?;
        Ok(self.push(Op::MatMul(a, b), v))
    }

    pub fn binary(&mut self, op: BinaryOp, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).binary(op, self.value(b))?;
        Ok(self.push(Op::Binary(op, a, b), v))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(BinaryOp::Add, a, b)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(BinaryOp::Sub, a, b)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(BinaryOp::Mul, a, b)
    }

    /// Product with a fixed tensor (dropout masks); the mask gets no gradient.
    pub fn mul_const(&mut self, a: NodeId, mask: Tensor<T>) -> Result<NodeId> {
        let v = self.value(a).mul(&mask)?;
        Ok(self.push(Op::MulConst(a, mask), v))
    }

    pub fn unary(&mut self, op: UnaryOp, a: NodeId) -> NodeId {
        let v = self.value(a).unary(op);
        self.push(Op::Unary(op, a), v)
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        self.unary(UnaryOp::Relu, a)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        self.unary(UnaryOp::Sigmoid, a)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        self.unary(UnaryOp::Tanh, a)
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        self.unary(UnaryOp::Exp, a)
    }

    pub fn log(&mut self, a: NodeId) -> NodeId {
        self.unary(UnaryOp::Log, a)
    }

    /// `scale · a + shift`.
    pub fn affine(&mut self, a: NodeId, scale: T, shift: T) -> NodeId {
        let v = self.value(a).map(|x| x * scale + shift);
        self.push(Op::Affine(a, scale), v)
    }

    pub fn scale(&mut self, a: NodeId, s: T) -> NodeId {
        self.affine(a, s, T::zero())
    }

    /// Repeats a `1 × 1` node into a `1 × cols` row.
    pub fn broadcast(&mut self, a: NodeId, cols: usize) -> Result<NodeId> {
        let x = self.value(a).item()?;
        Ok(self.push(Op::Broadcast(a), Tensor::full(1, cols, x)))
    }

    /// Rescales each row to L2 norm `sqrt(cols)`; rows with norm below `eps`
    /// are divided by `eps` instead.
    pub fn normalize_rows(&mut self, a: NodeId, eps: T) -> NodeId {
        let v = normalize_rows(self.value(a), eps);
        self.push(Op::NormalizeRows(a, eps), v)
    }

    /// Embedding lookup: row `i` of the result is row `ids[i]` of `table`.
    pub fn gather(&mut self, table: NodeId, ids: &[usize]) -> Result<NodeId> {
        let t = self.value(table);
        if let Some(&bad) = ids.iter().find(|&&i| i >= t.rows()) {
            return Err(Error::InvalidArgument(format!(
                "id {bad} out of range for {} rows",
                t.rows()
            )));
        }
        let rows: Vec<&[T]> = ids.iter().map(|&i| t.row(i)).collect();
        let v = Tensor::stack_rows(&rows)?;
        Ok(self.push(Op::Gather(table, ids.to_vec()), v))
    }

    /// Row `r` of the result is row `r` of `sources[picks[r]]`.
    pub fn select_rows(&mut self, sources: &[NodeId], picks: &[usize]) -> Result<NodeId> {
        let first = *sources
            .first()
            .ok_or_else(|| Error::InvalidArgument("select_rows without sources".into()))?;
        let shape = self.shape(first);
        for &s in sources {
            if self.shape(s) != shape {
                return Err(Error::shape("select_rows", shape, self.shape(s)));
            }
        }
        if picks.len() != shape[0] || picks.iter().any(|&p| p >= sources.len()) {
            return Err(Error::InvalidArgument("select_rows picks do not match sources".into()));
        }
        let rows: Vec<&[T]> = picks
            .iter()
            .enumerate()
            .map(|(r, &p)| self.value(sources[p]).row(r))
            .collect();
        let v = Tensor::stack_rows(&rows)?;
        Ok(self.push(Op::SelectRows(sources.to_vec(), picks.to_vec()), v))
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let s = self.value(a).sum();
        self.push(Op::SumAll(a), Tensor::scalar(s))
    }

    /// `Σ_r w_r Σ_i bce(z_ri, y_ri)` with logits clamped to `±LOGIT_CLAMP`.
    pub fn bce_with_logits(&mut self, logits: NodeId, targets: Tensor<T>, weights: Vec<T>) -> Result<NodeId> {
        let z = self.value(logits);
        check_weights(z, &weights)?;
        if z.shape() != targets.shape() {
            return Err(Error::shape("bce_with_logits", z.shape(), targets.shape()));
        }
        let mut total = T::zero();
        for (r, &w) in weights.iter().enumerate() {
            if w == T::zero() {
                continue;
            }
            let row: T = z.row(r).iter().zip(targets.row(r)).map(|(&z, &y)| bce(z, y)).sum();
            total += w * row;
        }
        Ok(self.push(
            Op::Bce {
                logits,
                targets,
                weights,
            },
            Tensor::scalar(total),
        ))
    }

    /// `Σ_r w_r · (−log softmax(z_r)[target_r])` with logits clamped to `±LOGIT_CLAMP`.
    pub fn softmax_xent(&mut self, logits: NodeId, targets: Vec<usize>, weights: Vec<T>) -> Result<NodeId> {
        let z = self.value(logits);
        check_weights(z, &weights)?;
        if targets.len() != z.rows() {
            return Err(Error::InvalidArgument("one target per row required".into()));
        }
        let mut total = T::zero();
        for (r, (&t, &w)) in targets.iter().zip(&weights).enumerate() {
            if w == T::zero() {
                continue;
            }
            if t >= z.cols() {
                return Err(Error::InvalidArgument(format!(
                    "target id {t} out of range for {} classes",
                    z.cols()
                )));
            }
            total += w * xent_row(z.row(r), t);
        }
        Ok(self.push(
            Op::SoftmaxXent {
                logits,
                targets,
                weights,
            },
            Tensor::scalar(total),
        ))
    }

    /// `Σ_r w_r Σ_i (p_ri − y_ri)²`.
    pub fn squared_error(&mut self, pred: NodeId, targets: Tensor<T>, weights: Vec<T>) -> Result<NodeId> {
        let p = self.value(pred);
        check_weights(p, &weights)?;
        if p.shape() != targets.shape() {
            return Err(Error::shape("squared_error", p.shape(), targets.shape()));
        }
        let mut total = T::zero();
        for (r, &w) in weights.iter().enumerate() {
            let row: T = p
                .row(r)
                .iter()
                .zip(targets.row(r))
                .map(|(&a, &b)| (a - b) * (a - b))
                .sum();
            total += w * row;
        }
        Ok(self.push(Op::SquaredError { pred, targets, weights }, Tensor::scalar(total)))
    }

    /// Records an op whose forward value was computed by the caller.
    pub fn custom(&mut self, inputs: &[NodeId], value: Tensor<T>, backward: BackwardFn<T>) -> NodeId {
        self.push(Op::Custom(inputs.to_vec(), backward), value)
    }

    /// True when `id` is a parameter or a pointwise function of a single parameter.
    pub fn is_parameter_derived(&self, id: NodeId) -> bool {
        match &self.nodes[id.0].op {
            Op::Param(_) => true,
            Op::Unary(_, a) | Op::Affine(a, _) | Op::Broadcast(a) => self.is_parameter_derived(*a),
            _ => false,
        }
    }

    /// Smallest `|x|` over all ReLU inputs, i.e. the distance of this forward
    /// pass to the nearest kink. Finite differences are only meaningful when
    /// it exceeds the perturbation size.
    pub fn min_relu_margin(&self) -> Option<T> {
        self.nodes
            .iter()
            .filter_map(|n| match n.op {
                Op::Unary(UnaryOp::Relu, a) => {
                    Some(self.value(a).data().iter().fold(T::infinity(), |m, v| m.min(v.abs())))
                }
                _ => None,
            })
            .reduce(|a, b| a.min(b))
    }

    /// Operand pairs of every recorded elementwise product.
    pub fn elementwise_products(&self) -> Vec<(NodeId, NodeId)> {
        self.nodes
            .iter()
            .filter_map(|n| match n.op {
                Op::Binary(BinaryOp::Mul, a, b) => Some((a, b)),
                _ => None,
            })
            .collect()
    }

    /// Accumulates `∂loss/∂value` into the `grad` of every parameter on the tape.
    ///
    /// Gradients are added to whatever the parameters already hold, so two
    /// passes without `zero_grad` double them.
    pub fn backward(&self, loss: NodeId, store: &mut ParamStore<T>) -> Result<Gradients<T>> {
        let loss_value = self.value(loss);
        if loss_value.shape() != [1, 1] {
            return Err(Error::InvalidArgument(format!(
                "loss must be a 1x1 scalar, got {:?}",
                loss_value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(T::one()));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            let is_leaf = matches!(node.op, Op::Constant | Op::Param(_));
            let g = if is_leaf {
                match &grads[i] {
                    Some(g) => g.clone(),
                    None => continue,
                }
            } else {
                match grads[i].take() {
                    Some(g) => g,
                    None => continue,
                }
            };
            self.propagate(i, &g, &mut grads, store)?;
        }
        Ok(Gradients { grads })
    }

    fn propagate(
        &self,
        i: usize,
        g: &Tensor<T>,
        grads: &mut [Option<Tensor<T>>],
        store: &mut ParamStore<T>,
    ) -> Result<()> {
        let node = &self.nodes[i];
        match &node.op {
            Op::Constant => {}
            Op::Param(id) => store.get_mut(*id).grad.add_assign(g)?,
            Op::MatMul(a, b) => {
                let ga = g.matmul_nt(self.value(*b))?;
                let gb = self.value(*a).matmul_tn(g)?;
                accumulate(grads, *a, ga)?;
                accumulate(grads, *b, gb)?;
            }
            Op::Binary(op, a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let broadcast = vb.rows() != va.rows();
                let (ga, gb) = match op {
                    BinaryOp::Add => (g.clone(), g.clone()),
                    BinaryOp::Sub => (g.clone(), g.scale(-T::one())),
                    BinaryOp::Mul => (g.mul(vb)?, g.mul(va)?),
                };
                accumulate(grads, *a, ga)?;
                accumulate(grads, *b, if broadcast { gb.sum_rows() } else { gb })?;
            }
            Op::MulConst(a, mask) => accumulate(grads, *a, g.mul(mask)?)?,
            Op::Unary(op, a) => {
                let x = self.value(*a);
                let y = &node.value;
                let mut ga = g.clone();
                for ((gv, &xv), &yv) in ga.data_mut().iter_mut().zip(x.data()).zip(y.data()) {
                    *gv *= op.derivative(xv, yv);
                }
                accumulate(grads, *a, ga)?;
            }
            Op::Affine(a, s) => accumulate(grads, *a, g.scale(*s))?,
            Op::Broadcast(a) => accumulate(grads, *a, Tensor::scalar(g.sum()))?,
            Op::NormalizeRows(a, eps) => {
                let ga = normalize_rows_backward(self.value(*a), g, *eps);
                accumulate(grads, *a, ga)?;
            }
            Op::Gather(table, ids) => {
                let t = self.value(*table);
                let mut gt = Tensor::zeros(t.rows(), t.cols());
                for (r, &id) in ids.iter().enumerate() {
                    for (o, &v) in gt.row_mut(id).iter_mut().zip(g.row(r)) {
                        *o += v;
                    }
                }
                accumulate(grads, *table, gt)?;
            }
            Op::SelectRows(sources, picks) => {
                let [rows, cols] = g.shape();
                let mut parts: Vec<Option<Tensor<T>>> = vec![None; sources.len()];
                for (r, &p) in picks.iter().enumerate() {
                    let part = parts[p].get_or_insert_with(|| Tensor::zeros(rows, cols));
                    part.row_mut(r).copy_from_slice(g.row(r));
                }
                for (src, part) in sources.iter().zip(parts) {
                    if let Some(part) = part {
                        accumulate(grads, *src, part)?;
                    }
                }
            }
            Op::SumAll(a) => {
                let [r, c] = self.shape(*a);
                accumulate(grads, *a, Tensor::full(r, c, g.item()?))?;
            }
            Op::Bce {
                logits,
                targets,
                weights,
            } => {
                let scale = g.item()?;
                let z = self.value(*logits);
                let mut gz = Tensor::zeros(z.rows(), z.cols());
                for (r, &w) in weights.iter().enumerate() {
                    let w = w * scale;
                    for ((o, &zv), &y) in gz.row_mut(r).iter_mut().zip(z.row(r)).zip(targets.row(r)) {
                        if zv.abs() < T::lit(LOGIT_CLAMP) {
                            *o = w * (sigmoid(zv) - y);
                        }
                    }
                }
                accumulate(grads, *logits, gz)?;
            }
            Op::SoftmaxXent {
                logits,
                targets,
                weights,
            } => {
                let scale = g.item()?;
                let z = self.value(*logits);
                let mut gz = Tensor::zeros(z.rows(), z.cols());
                for (r, (&t, &w)) in targets.iter().zip(weights).enumerate() {
                    if w == T::zero() {
                        continue;
                    }
                    let probs = softmax_clamped(z.row(r));
                    let w = w * scale;
                    for (c, ((o, &p), &zv)) in gz.row_mut(r).iter_mut().zip(&probs).zip(z.row(r)).enumerate() {
                        if zv.abs() < T::lit(LOGIT_CLAMP) {
                            let onehot = if c == t { T::one() } else { T::zero() };
                            *o = w * (p - onehot);
                        }
                    }
                }
                accumulate(grads, *logits, gz)?;
            }
            Op::SquaredError { pred, targets, weights } => {
                let scale = g.item()?;
                let p = self.value(*pred);
                let mut gp = Tensor::zeros(p.rows(), p.cols());
                for (r, &w) in weights.iter().enumerate() {
                    let w = T::lit(2.0) * w * scale;
                    for ((o, &a), &b) in gp.row_mut(r).iter_mut().zip(p.row(r)).zip(targets.row(r)) {
                        *o = w * (a - b);
                    }
                }
                accumulate(grads, *pred, gp)?;
            }
            Op::Custom(inputs, backward) => {
                let values: Vec<&Tensor<T>> = inputs.iter().map(|&a| self.value(a)).collect();
                let gs = backward(g, &values, &node.value)?;
                if gs.len() != inputs.len() {
                    return Err(Error::InvalidArgument("custom backward returned wrong arity".into()));
                }
                for (&a, ga) in inputs.iter().zip(gs) {
                    accumulate(grads, a, ga)?;
                }
            }
        }
        Ok(())
    }
}

fn accumulate<T: Real>(grads: &mut [Option<Tensor<T>>], id: NodeId, g: Tensor<T>) -> Result<()> {
    match &mut grads[id.0] {
        Some(existing) => existing.add_assign(&g),
        slot => {
            *slot = Some(g);
            Ok(())
        }
    }
}

fn check_weights<T: Real>(z: &Tensor<T>, weights: &[T]) -> Result<()> {
    if weights.len() != z.rows() {
        return Err(Error::InvalidArgument(format!(
            "{} row weights for {} rows",
            weights.len(),
            z.rows()
        )));
    }
    Ok(())
}

#[inline]
fn clamp<T: Real>(z: T) -> T {
    let c = T::lit(LOGIT_CLAMP);
    z.max(-c).min(c)
}

/// Binary cross-entropy on a clamped logit, stable for either sign.
#[inline]
pub(crate) fn bce<T: Real>(z: T, y: T) -> T {
    let z = clamp(z);
    z.max(T::zero()) - z * y + (-z.abs()).exp().ln_1p()
}

pub(crate) fn softmax_clamped<T: Real>(row: &[T]) -> Vec<T> {
    let m = row.iter().fold(T::neg_infinity(), |m, &v| m.max(clamp(v)));
    let exps: Vec<T> = row.iter().map(|&v| (clamp(v) - m).exp()).collect();
    let s: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / s).collect()
}

/// `−log softmax(row)[target]` on clamped logits.
pub(crate) fn xent_row<T: Real>(row: &[T], target: usize) -> T {
    let m = row.iter().fold(T::neg_infinity(), |m, &v| m.max(clamp(v)));
    let s: T = row.iter().map(|&v| (clamp(v) - m).exp()).sum();
    m + s.ln() - clamp(row[target])
}

pub(crate) fn normalize_rows<T: Real>(v: &Tensor<T>, eps: T) -> Tensor<T> {
    let k = T::lit(v.cols() as f64).sqrt();
    let mut out = v.clone();
    for r in 0..v.rows() {
        let row = out.row_mut(r);
        let norm = row.iter().map(|&x| x * x).sum::<T>().sqrt();
        let s = k / norm.max(eps);
        row.iter_mut().for_each(|x| *x *= s);
    }
    out
}

fn normalize_rows_backward<T: Real>(v: &Tensor<T>, g: &Tensor<T>, eps: T) -> Tensor<T> {
    let k = T::lit(v.cols() as f64).sqrt();
    let mut out = Tensor::zeros(v.rows(), v.cols());
    for r in 0..v.rows() {
        let (vr, gr) = (v.row(r), g.row(r));
        let norm = vr.iter().map(|&x| x * x).sum::<T>().sqrt();
        let orow = out.row_mut(r);
        if norm > eps {
            // d(k v/|v|) = k/|v| (I − v vᵀ/|v|²)
            let dot: T = vr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
            let c = dot / (norm * norm);
            for ((o, &x), &gv) in orow.iter_mut().zip(vr).zip(gr) {
                *o = k / norm * (gv - x * c);
            }
        } else {
            for (o, &gv) in orow.iter_mut().zip(gr) {
                *o = gv * k / eps;
            }
        }
    }
    out
}
