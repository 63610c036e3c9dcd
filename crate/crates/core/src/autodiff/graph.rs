use super::{AutodiffError, Scalar, Tensor2};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Constant,
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    AddBias(NodeId, NodeId),
    Relu(NodeId),
    L2NormalizeRows { input: NodeId, eps: f64 },
    Transpose(NodeId),
    Exp(NodeId),
    Log(NodeId),
    Scale(NodeId, f64),
    RowLogSumExp(NodeId),
    Diag(NodeId),
    Sum(NodeId),
    Mean(NodeId),
    FrobeniusSq(NodeId),
    Trace(NodeId),
    WeightedSum(Vec<(NodeId, f64)>),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Constant => "constant",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::AddBias(..) => "add_bias",
            Op::Relu(_) => "relu",
            Op::L2NormalizeRows { .. } => "l2_normalize_rows",
            Op::Transpose(_) => "transpose",
            Op::Exp(_) => "exp",
            Op::Log(_) => "log",
            Op::Scale(..) => "scale",
            Op::RowLogSumExp(_) => "row_logsumexp",
            Op::Diag(_) => "diag",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::FrobeniusSq(_) => "frobenius_sq",
            Op::Trace(_) => "trace",
            Op::WeightedSum(_) => "weighted_sum",
        }
    }

    fn inputs(&self) -> Vec<NodeId> {
        match self {
            Op::Leaf | Op::Constant => Vec::new(),
            Op::MatMul(a, b) | Op::Add(a, b) | Op::Sub(a, b) | Op::AddBias(a, b) => vec![*a, *b],
            Op::Relu(x)
            | Op::L2NormalizeRows { input: x, .. }
            | Op::Transpose(x)
            | Op::Exp(x)
            | Op::Log(x)
            | Op::Scale(x, _)
            | Op::RowLogSumExp(x)
            | Op::Diag(x)
            | Op::Sum(x)
            | Op::Mean(x)
            | Op::FrobeniusSq(x)
            | Op::Trace(x) => vec![*x],
            Op::WeightedSum(terms) => terms.iter().map(|(id, _)| *id).collect(),
        }
    }
}

#[derive(Clone, Debug)]
struct Node<T: Scalar> {
    op: Op,
    value: Tensor2<T>,
    requires_grad: bool,
    grad: Option<Tensor2<T>>,
}

/// Computation graph recording forward values for reverse-mode
/// differentiation.
///
/// Nodes are appended in evaluation order and may only reference earlier
/// nodes, so the node vector is already a topological order. Every op checks
/// its inputs' shapes and rejects non-finite outputs.
#[derive(Clone, Debug, Default)]
pub struct Graph<T: Scalar = f32> {
    nodes: Vec<Node<T>>,
    backward_done: bool,
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            backward_done: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Adds a differentiable leaf (a parameter).
    pub fn leaf(&mut self, value: Tensor2<T>) -> NodeId {
        self.push_unchecked(Op::Leaf, value, true)
    }

    /// Adds a non-differentiable input.
    pub fn constant(&mut self, value: Tensor2<T>) -> NodeId {
        self.push_unchecked(Op::Constant, value, false)
    }

    pub fn value(&self, id: NodeId) -> &Tensor2<T> {
        &self.nodes[id.0].value
    }

    /// Value of a 1x1 node widened to `f64`.
    pub fn scalar_value(&self, id: NodeId) -> f64 {
        let v = self.value(id);
        debug_assert_eq!(v.shape(), (1, 1));
        v.data()[0].widen()
    }

    /// Gradient accumulated by the last [`Graph::backward`], if the node
    /// took part in it.
    pub fn grad(&self, id: NodeId) -> Option<&Tensor2<T>> {
        self.nodes[id.0].grad.as_ref()
    }

    pub fn reset_grads(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
        self.backward_done = false;
    }

    /// Sign pattern of every ReLU input (`true` where strictly positive), in
    /// node order. Two evaluations with equal patterns lie on the same
    /// smooth piece of the function.
    pub fn relu_pattern(&self) -> Vec<bool> {
        let mut pattern = Vec::new();
        for node in &self.nodes {
            if let Op::Relu(x) = node.op {
                pattern.extend(self.nodes[x.0].value.data().iter().map(|v| v.widen() > 0.0));
            }
        }
        pattern
    }

    fn push_unchecked(&mut self, op: Op, value: Tensor2<T>, requires_grad: bool) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
            grad: None,
        });
        id
    }

    fn push(&mut self, op: Op, value: Tensor2<T>) -> Result<NodeId, AutodiffError> {
        value.check_finite(op.name())?;
        let requires_grad = op.inputs().iter().any(|i| self.nodes[i.0].requires_grad);
        Ok(self.push_unchecked(op, value, requires_grad))
    }

    fn same_shape(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<(), AutodiffError> {
        let (l, r) = (self.value(a).shape(), self.value(b).shape());
        if l != r {
            return Err(AutodiffError::ShapeMismatch {
                op,
                left: l,
                right: r,
            });
        }
        Ok(())
    }

    fn expect_scalar(&self, op: &'static str, id: NodeId) -> Result<(), AutodiffError> {
        let shape = self.value(id).shape();
        if shape != (1, 1) {
            return Err(AutodiffError::NotScalar { op, shape });
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AutodiffError> {
        let value = self.value(a).matmul(self.value(b))?;
        self.push(Op::MatMul(a, b), value)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AutodiffError> {
        self.same_shape("add", a, b)?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y);
        self.push(Op::Add(a, b), value)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AutodiffError> {
        self.same_shape("sub", a, b)?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y);
        self.push(Op::Sub(a, b), value)
    }

    /// Adds a `1 x n` bias row to every row of an `m x n` input.
    pub fn add_bias(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId, AutodiffError> {
        let (xv, bv) = (self.value(x), self.value(bias));
        if bv.rows() != 1 || bv.cols() != xv.cols() {
            return Err(AutodiffError::ShapeMismatch {
                op: "add_bias",
                left: xv.shape(),
                right: bv.shape(),
            });
        }
        let value = Tensor2::from_fn(xv.rows(), xv.cols(), |i, j| {
            T::narrow(xv.get(i, j).widen() + bv.get(0, j).widen())
        });
        self.push(Op::AddBias(x, bias), value)
    }

    /// Elementwise `max(0, x)`; the subgradient at zero is zero.
    pub fn relu(&mut self, x: NodeId) -> Result<NodeId, AutodiffError> {
        let value = self.value(x).map(|v| if v > 0.0 { v } else { 0.0 });
        self.push(Op::Relu(x), value)
    }

    /// Divides each row by `max(||row||, eps)`.
    pub fn l2_normalize_rows(&mut self, x: NodeId, eps: f64) -> Result<NodeId, AutodiffError> {
        if eps.is_nan() || eps <= 0.0 {
            return Err(AutodiffError::InvalidArgument {
                op: "l2_normalize_rows",
                reason: format!("eps must be > 0, got {eps}"),
            });
        }
        let xv = self.value(x);
        let norms = row_norms(xv);
        let value = Tensor2::from_fn(xv.rows(), xv.cols(), |i, j| {
            T::narrow(xv.get(i, j).widen() / norms[i].max(eps))
        });
        self.push(Op::L2NormalizeRows { input: x, eps }, value)
    }

    pub fn transpose(&mut self, x: NodeId) -> Result<NodeId, AutodiffError> {
        let value = self.value(x).transpose();
        self.push(Op::Transpose(x), value)
    }

    pub fn exp(&mut self, x: NodeId) -> Result<NodeId, AutodiffError> {
        let value = self.value(x).map(f64::exp);
        self.push(Op::Exp(x), value)
    }

    /// Natural log. Non-positive inputs produce a non-finite error.
    pub fn log(&mut self, x: NodeId) -> Result<NodeId, AutodiffError> {
        let value = self.value(x).map(f64::ln);
        self.push(Op::Log(x), value)
    }

    pub fn scale(&mut self, x: NodeId, factor: f64) -> Result<NodeId, AutodiffError> {
        let value = self.value(x).map(|v| v * factor);
        self.push(Op::Scale(x, factor), value)
    }

    /// Per-row `log(sum_j exp(x_ij))` with max subtraction; output is `m x 1`.
    pub fn row_logsumexp(&mut self, x: NodeId) -> Result<NodeId, AutodiffError> {
        let xv = self.value(x);
        if xv.cols() == 0 {
            return Err(AutodiffError::InvalidArgument {
                op: "row_logsumexp",
                reason: "input has no columns".into(),
            });
        }
        let data = xv.iter_rows().map(|row| T::narrow(logsumexp(row))).collect();
        let value = Tensor2::new(xv.rows(), 1, data)?;
        self.push(Op::RowLogSumExp(x), value)
    }

    /// Main diagonal of a square matrix as an `n x 1` column.
    pub fn diag(&mut self, x: NodeId) -> Result<NodeId, AutodiffError> {
        let xv = self.value(x);
        if xv.rows() != xv.cols() {
            return Err(AutodiffError::ShapeMismatch {
                op: "diag",
                left: xv.shape(),
                right: (xv.cols(), xv.rows()),
            });
        }
        let value = Tensor2::from_fn(xv.rows(), 1, |i, _| xv.get(i, i));
        self.push(Op::Diag(x), value)
    }

    pub fn sum(&mut self, x: NodeId) -> Result<NodeId, AutodiffError> {
        let value = Tensor2::scalar(T::narrow(self.value(x).sum()));
        self.push(Op::Sum(x), value)
    }

    pub fn mean(&mut self, x: NodeId) -> Result<NodeId, AutodiffError> {
        let xv = self.value(x);
        if xv.is_empty() {
            return Err(AutodiffError::InvalidArgument {
                op: "mean",
                reason: "empty input".into(),
            });
        }
        let value = Tensor2::scalar(T::narrow(xv.sum() / xv.len() as f64));
        self.push(Op::Mean(x), value)
    }

    /// Squared Frobenius norm as a 1x1 node.
    pub fn frobenius_sq(&mut self, x: NodeId) -> Result<NodeId, AutodiffError> {
        let value = Tensor2::scalar(T::narrow(self.value(x).frobenius_sq()));
        self.push(Op::FrobeniusSq(x), value)
    }

    pub fn trace(&mut self, x: NodeId) -> Result<NodeId, AutodiffError> {
        let xv = self.value(x);
        if xv.rows() != xv.cols() {
            return Err(AutodiffError::ShapeMismatch {
                op: "trace",
                left: xv.shape(),
                right: (xv.cols(), xv.rows()),
            });
        }
        let t: f64 = (0..xv.rows()).map(|i| xv.get(i, i).widen()).sum();
        let value = Tensor2::scalar(T::narrow(t));
        self.push(Op::Trace(x), value)
    }

    /// `sum_k coeff_k * s_k` over 1x1 nodes.
    pub fn weighted_sum(&mut self, terms: &[(NodeId, f64)]) -> Result<NodeId, AutodiffError> {
        let mut total = 0.0;
        for &(id, coeff) in terms {
            self.expect_scalar("weighted_sum", id)?;
            total += coeff * self.scalar_value(id);
        }
        self.push(Op::WeightedSum(terms.to_vec()), Tensor2::scalar(T::narrow(total)))
    }

    /// Reverse-mode sweep from a 1x1 root. Afterwards every node that the
    /// root depends on through differentiable paths holds `d root / d node`.
    ///
    /// Calling it again before [`Graph::reset_grads`] is an error.
    pub fn backward(&mut self, root: NodeId) -> Result<(), AutodiffError> {
        if self.backward_done {
            return Err(AutodiffError::BackwardAlreadyRun);
        }
        if root.0 >= self.nodes.len() {
            return Err(AutodiffError::UnknownNode(root.0));
        }
        self.expect_scalar("backward", root)?;
        for (index, node) in self.nodes.iter().enumerate() {
            if let Some(bad) = node.op.inputs().into_iter().find(|i| i.0 >= index) {
                return Err(AutodiffError::Cycle {
                    node: index,
                    input: bad.0,
                });
            }
        }

        let mut grads: Vec<Option<Tensor2<T>>> = vec![None; root.0 + 1];
        grads[root.0] = Some(Tensor2::scalar(T::narrow(1.0)));

        for index in (0..=root.0).rev() {
            let Some(upstream) = grads[index].take() else {
                continue;
            };
            if !self.nodes[index].requires_grad {
                continue;
            }
            for (input, contribution) in self.input_grads(index, &upstream)? {
                if !self.nodes[input.0].requires_grad {
                    continue;
                }
                accumulate(&mut grads[input.0], contribution);
            }
            self.nodes[index].grad = Some(upstream);
        }
        self.backward_done = true;
        Ok(())
    }

    fn input_grads(
        &self,
        index: usize,
        g: &Tensor2<T>,
    ) -> Result<Vec<(NodeId, Tensor2<T>)>, AutodiffError> {
        let node = &self.nodes[index];
        let out = &node.value;
        let grads = match &node.op {
            Op::Leaf | Op::Constant => Vec::new(),
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let mut v = Vec::with_capacity(2);
                if self.nodes[a.0].requires_grad {
                    v.push((*a, g.matmul(&bv.transpose())?));
                }
                if self.nodes[b.0].requires_grad {
                    v.push((*b, av.transpose().matmul(g)?));
                }
                v
            }
            Op::Add(a, b) => vec![(*a, g.clone()), (*b, g.clone())],
            Op::Sub(a, b) => vec![(*a, g.clone()), (*b, g.map(|v| -v))],
            Op::AddBias(x, bias) => {
                let mut col = vec![0.0f64; g.cols()];
                for row in g.iter_rows() {
                    for (c, &v) in col.iter_mut().zip(row) {
                        *c += v.widen();
                    }
                }
                let db = Tensor2::from_fn(1, g.cols(), |_, j| T::narrow(col[j]));
                vec![(*x, g.clone()), (*bias, db)]
            }
            Op::Relu(x) => {
                let xv = self.value(*x);
                vec![(*x, g.zip_map(xv, |gv, xv| if xv > 0.0 { gv } else { 0.0 }))]
            }
            Op::L2NormalizeRows { input, eps } => {
                let xv = self.value(*input);
                let norms = row_norms(xv);
                let mut dx = Tensor2::zeros(xv.rows(), xv.cols());
                for (i, &norm) in norms.iter().enumerate() {
                    let (y, gr) = (out.row(i), g.row(i));
                    if norm > *eps {
                        let dot: f64 = y.iter().zip(gr).map(|(a, b)| a.widen() * b.widen()).sum();
                        for (j, (yv, gv)) in y.iter().zip(gr).enumerate() {
                            dx.set(i, j, T::narrow((gv.widen() - yv.widen() * dot) / norm));
                        }
                    } else {
                        for (j, gv) in gr.iter().enumerate() {
                            dx.set(i, j, T::narrow(gv.widen() / eps));
                        }
                    }
                }
                vec![(*input, dx)]
            }
            Op::Transpose(x) => vec![(*x, g.transpose())],
            Op::Exp(x) => vec![(*x, g.zip_map(out, |gv, y| gv * y))],
            Op::Log(x) => vec![(*x, g.zip_map(self.value(*x), |gv, xv| gv / xv))],
            Op::Scale(x, factor) => vec![(*x, g.map(|v| v * factor))],
            Op::RowLogSumExp(x) => {
                let xv = self.value(*x);
                let dx = Tensor2::from_fn(xv.rows(), xv.cols(), |i, j| {
                    let p = (xv.get(i, j).widen() - out.get(i, 0).widen()).exp();
                    T::narrow(g.get(i, 0).widen() * p)
                });
                vec![(*x, dx)]
            }
            Op::Diag(x) => {
                let n = self.value(*x).rows();
                let dx = Tensor2::from_fn(n, n, |i, j| if i == j { g.get(i, 0) } else { T::default() });
                vec![(*x, dx)]
            }
            Op::Sum(x) => {
                let (r, c) = self.value(*x).shape();
                vec![(*x, Tensor2::filled(r, c, g.data()[0]))]
            }
            Op::Mean(x) => {
                let (r, c) = self.value(*x).shape();
                let v = g.data()[0].widen() / (r * c) as f64;
                vec![(*x, Tensor2::filled(r, c, T::narrow(v)))]
            }
            Op::FrobeniusSq(x) => {
                let s = 2.0 * g.data()[0].widen();
                vec![(*x, self.value(*x).map(|v| s * v))]
            }
            Op::Trace(x) => {
                let n = self.value(*x).rows();
                let gv = g.data()[0];
                vec![(*x, Tensor2::from_fn(n, n, |i, j| if i == j { gv } else { T::default() }))]
            }
            Op::WeightedSum(terms) => {
                let gv = g.data()[0].widen();
                terms
                    .iter()
                    .map(|&(id, c)| (id, Tensor2::scalar(T::narrow(gv * c))))
                    .collect()
            }
        };
        for (id, grad) in &grads {
            debug_assert_eq!(grad.shape(), self.value(*id).shape(), "{}", node.op.name());
            grad.check_finite("backward")?;
        }
        Ok(grads)
    }
}

fn accumulate<T: Scalar>(slot: &mut Option<Tensor2<T>>, contribution: Tensor2<T>) {
    match slot {
        None => *slot = Some(contribution),
        Some(existing) => *existing = existing.zip_map(&contribution, |a, b| a + b),
    }
}

fn row_norms<T: Scalar>(x: &Tensor2<T>) -> Vec<f64> {
    (0..x.rows())
        .map(|i| x.row(i).iter().map(|v| v.widen() * v.widen()).sum::<f64>().sqrt())
        .collect()
}

pub(crate) fn logsumexp<T: Scalar>(row: &[T]) -> f64 {
    let max = row.iter().map(|v| v.widen()).fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = row.iter().map(|v| (v.widen() - max).exp()).sum();
    max + s.ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(rows: &[&[f64]]) -> Tensor2<f64> {
        Tensor2::from_rows(rows).unwrap()
    }

    #[test]
    fn relu_forward_and_mask() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(t(&[&[-1.0, 0.0, 2.0]]));
        let y = g.relu(x).unwrap();
        assert_eq!(g.value(y).data(), &[0.0, 0.0, 2.0]);
        let s = g.sum(y).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn relu_all_negative_is_zero() {
        let mut g = Graph::<f32>::new();
        let x = g.constant(Tensor2::filled(2, 3, -0.25));
        let y = g.relu(x).unwrap();
        assert!(g.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sum_of_squares_gradient() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(t(&[&[1.5, -2.0], &[0.25, 3.0]]));
        let s = g.frobenius_sq(x).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[3.0, -4.0, 0.5, 6.0]);
    }

    #[test]
    fn sum_relu_gradient() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(t(&[&[-1.0, 2.0]]));
        let r = g.relu(x).unwrap();
        let s = g.sum(r).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[0.0, 1.0]);
    }

    #[test]
    fn normalize_rows_values() {
        let mut g = Graph::<f32>::new();
        let x = g.constant(Tensor2::from_rows(&[[3.0f32, 4.0], [0.6, 0.8], [0.0, 0.0]]).unwrap());
        let y = g.l2_normalize_rows(x, 1e-12).unwrap();
        let v = g.value(y);
        assert!((v.get(0, 0) - 0.6).abs() < 1e-7 && (v.get(0, 1) - 0.8).abs() < 1e-7);
        assert!((v.get(1, 0) - 0.6).abs() < 1e-6 && (v.get(1, 1) - 0.8).abs() < 1e-6);
        assert_eq!(v.row(2), &[0.0, 0.0]);
        assert!(g.l2_normalize_rows(x, 0.0).is_err());
    }

    #[test]
    fn backward_twice_is_an_error_until_reset() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(t(&[&[1.0]]));
        let s = g.sum(x).unwrap();
        g.backward(s).unwrap();
        assert!(matches!(g.backward(s), Err(AutodiffError::BackwardAlreadyRun)));
        g.reset_grads();
        assert!(g.grad(x).is_none());
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[1.0]);
    }

    #[test]
    fn backward_requires_scalar_root() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(t(&[&[1.0, 2.0]]));
        assert!(matches!(g.backward(x), Err(AutodiffError::NotScalar { .. })));
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut g = Graph::<f64>::new();
        let c = g.constant(t(&[&[2.0]]));
        let x = g.leaf(t(&[&[3.0]]));
        let y = g.matmul(c, x).unwrap();
        let s = g.sum(y).unwrap();
        g.backward(s).unwrap();
        assert!(g.grad(c).is_none());
        assert_eq!(g.grad(x).unwrap().data(), &[2.0]);
    }

    #[test]
    fn shared_input_accumulates() {
        // y = x * x^T, sum -> d/dx of (sum x)^2 = 2 sum(x)
        let mut g = Graph::<f64>::new();
        let x = g.leaf(t(&[&[1.0], &[2.0]]));
        let xt = g.transpose(x).unwrap();
        let y = g.matmul(x, xt).unwrap();
        let s = g.sum(y).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[6.0, 6.0]);
    }

    #[test]
    fn log_of_zero_is_non_finite_error() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(t(&[&[0.0]]));
        assert!(matches!(g.log(x), Err(AutodiffError::NonFinite { op: "log", .. })));
    }

    #[test]
    fn logsumexp_is_stable() {
        let mut g = Graph::<f32>::new();
        let x = g.constant(Tensor2::from_rows(&[[1000.0f32, 1000.0]]).unwrap());
        let y = g.row_logsumexp(x).unwrap();
        let expected = 1000.0 + 2f64.ln();
        assert!((g.scalar_value(y) - expected).abs() < 1e-3);
    }

    #[test]
    fn relu_pattern_tracks_signs() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(t(&[&[-1.0, 0.5], &[0.0, 2.0]]));
        g.relu(x).unwrap();
        assert_eq!(g.relu_pattern(), vec![false, true, false, true]);
    }
}
