use crate::Scalar;

use super::{AdError, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Primitive operations recorded on the tape.
#[derive(Clone, Debug)]
pub enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Neg(Var),
    Scale(Var, T),
    AddScalar(Var, T),
    Tanh(Var),
    Exp(Var),
    Log(Var),
    Square(Var),
    /// Sum of all elements to rank 0.
    Sum(Var),
    /// Mean of all elements to rank 0.
    Mean(Var),
    /// Rank-0 to the given shape.
    Expand(Var, Vec<usize>),
    /// `[m]` to `[n, m]`.
    BroadcastRows(Var, usize),
    /// `[n, m]` to `[m]`.
    SumRows(Var),
    /// `[n]` to `[n, m]`.
    BroadcastCols(Var, usize),
    /// `[n, m]` to `[n]`.
    SumCols(Var),
    Min(Var, Var),
    Max(Var, Var),
    Clamp(Var, T, T),
}

#[derive(Clone, Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Append-only record of a forward computation.
///
/// Nodes are stored in creation order, which is a topological order, so the
/// backward sweep is a single reverse pass over the node list.
#[derive(Clone, Debug, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

/// Numeric gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Clone, Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, var: Var) -> Option<&Tensor<T>> {
        self.grads.get(var.0).and_then(|g| g.as_ref())
    }

    /// Gradient for `var`, or zeros of its shape when it does not influence the output.
    pub fn get_or_zeros(&self, tape: &Tape<T>, var: Var) -> Tensor<T> {
        self.get(var).cloned().unwrap_or_else(|| Tensor::zeros(tape.value(var).shape()))
    }
}

fn mask<T: Scalar>(t: &Tensor<T>, f: impl Fn(T) -> bool) -> Tensor<T> {
    t.map(|x| if f(x) { T::one() } else { T::zero() })
}

fn sum_rows<T: Scalar>(t: &Tensor<T>) -> Tensor<T> {
    let (n, m) = (t.rows(), t.cols());
    let mut out = vec![T::zero(); m];
    for i in 0..n {
        for (o, &x) in out.iter_mut().zip(t.row(i)) {
            *o += x;
        }
    }
    Tensor::vector(out)
}

fn sum_cols<T: Scalar>(t: &Tensor<T>) -> Tensor<T> {
    let n = t.rows();
    Tensor::vector((0..n).map(|i| t.row(i).iter().copied().sum()).collect())
}

fn broadcast_rows<T: Scalar>(t: &Tensor<T>, n: usize) -> Tensor<T> {
    let m = t.len();
    let mut data = Vec::with_capacity(n * m);
    for _ in 0..n {
        data.extend_from_slice(t.data());
    }
    Tensor::matrix(n, m, data)
}

fn broadcast_cols<T: Scalar>(t: &Tensor<T>, m: usize) -> Tensor<T> {
    let n = t.len();
    let mut data = Vec::with_capacity(n * m);
    for &x in t.data() {
        data.extend(std::iter::repeat_n(x, m));
    }
    Tensor::matrix(n, m, data)
}

fn check_same<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, what: &str) {
    assert_eq!(a.shape(), b.shape(), "{what}: shape mismatch {:?} vs {:?}", a.shape(), b.shape());
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops every node recorded after the first `len`; handles to them become invalid.
    pub fn truncate(&mut self, len: usize) {
        self.nodes.truncate(len);
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn op(&self, v: Var) -> &Op<T> {
        &self.nodes[v.0].op
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad });
        Var(self.nodes.len() - 1)
    }

    /// Differentiable input.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    /// Input held fixed under differentiation.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    fn inputs(op: &Op<T>) -> Vec<Var> {
        use Op::*;
        match op {
            Leaf => vec![],
            MatMul(a, b) | Add(a, b) | Sub(a, b) | Mul(a, b) | Div(a, b) | Min(a, b) | Max(a, b) => {
                vec![*a, *b]
            }
            Transpose(a) | Neg(a) | Scale(a, _) | AddScalar(a, _) | Tanh(a) | Exp(a) | Log(a)
            | Square(a) | Sum(a) | Mean(a) | Expand(a, _) | BroadcastRows(a, _) | SumRows(a)
            | BroadcastCols(a, _) | SumCols(a) | Clamp(a, _, _) => vec![*a],
        }
    }

    fn eval<'a>(op: &Op<T>, get: impl Fn(Var) -> &'a Tensor<T>) -> Tensor<T>
    where
        T: 'a,
    {
        use Op::*;
        match op {
            Leaf => unreachable!("leaves hold their own value"),
            MatMul(a, b) => {
                let (a, b) = (get(*a), get(*b));
                assert!(a.shape().len() == 2 && b.shape().len() == 2, "matmul needs rank-2 operands");
                a.matmul(&b)
            }
            Transpose(a) => get(*a).transpose(),
            Add(a, b) => {
                let (a, b) = (get(*a), get(*b));
                check_same(&a, &b, "add");
                a.zip_map(&b, |x, y| x + y)
            }
            Sub(a, b) => {
                let (a, b) = (get(*a), get(*b));
                check_same(&a, &b, "sub");
                a.zip_map(&b, |x, y| x - y)
            }
            Mul(a, b) => {
                let (a, b) = (get(*a), get(*b));
                check_same(&a, &b, "mul");
                a.zip_map(&b, |x, y| x * y)
            }
            Div(a, b) => {
                let (a, b) = (get(*a), get(*b));
                check_same(&a, &b, "div");
                a.zip_map(&b, |x, y| x / y)
            }
            Neg(a) => get(*a).map(|x| -x),
            Scale(a, c) => {
                let c = *c;
                get(*a).map(|x| x * c)
            }
            AddScalar(a, c) => {
                let c = *c;
                get(*a).map(|x| x + c)
            }
            Tanh(a) => get(*a).map(|x| x.tanh()),
            Exp(a) => get(*a).map(|x| x.exp()),
            Log(a) => get(*a).map(|x| x.ln()),
            Square(a) => get(*a).map(|x| x * x),
            Sum(a) => Tensor::scalar(get(*a).sum()),
            Mean(a) => {
                let a = get(*a);
                Tensor::scalar(a.sum() / T::from_usize_lossy(a.len()))
            }
            Expand(a, shape) => Tensor::full(shape, get(*a).item()),
            BroadcastRows(a, n) => broadcast_rows(&get(*a), *n),
            SumRows(a) => sum_rows(&get(*a)),
            BroadcastCols(a, m) => broadcast_cols(&get(*a), *m),
            SumCols(a) => sum_cols(&get(*a)),
            Min(a, b) => {
                let (a, b) = (get(*a), get(*b));
                check_same(&a, &b, "min");
                a.zip_map(&b, |x, y| if x <= y { x } else { y })
            }
            Max(a, b) => {
                let (a, b) = (get(*a), get(*b));
                check_same(&a, &b, "max");
                a.zip_map(&b, |x, y| if x >= y { x } else { y })
            }
            Clamp(a, lo, hi) => {
                let (lo, hi) = (*lo, *hi);
                get(*a).map(|x| x.max(lo).min(hi))
            }
        }
    }

    fn push(&mut self, op: Op<T>) -> Var {
        let value = Self::eval(&op, |v| &self.nodes[v.0].value);
        let requires_grad = Self::inputs(&op).iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        self.push(Op::MatMul(a, b))
    }
    pub fn transpose(&mut self, a: Var) -> Var {
        self.push(Op::Transpose(a))
    }
    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.push(Op::Add(a, b))
    }
    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.push(Op::Sub(a, b))
    }
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.push(Op::Mul(a, b))
    }
    pub fn div(&mut self, a: Var, b: Var) -> Var {
        self.push(Op::Div(a, b))
    }
    pub fn neg(&mut self, a: Var) -> Var {
        self.push(Op::Neg(a))
    }
    pub fn scale(&mut self, a: Var, c: T) -> Var {
        self.push(Op::Scale(a, c))
    }
    pub fn add_scalar(&mut self, a: Var, c: T) -> Var {
        self.push(Op::AddScalar(a, c))
    }
    pub fn tanh(&mut self, a: Var) -> Var {
        self.push(Op::Tanh(a))
    }
    pub fn exp(&mut self, a: Var) -> Var {
        self.push(Op::Exp(a))
    }
    pub fn log(&mut self, a: Var) -> Var {
        self.push(Op::Log(a))
    }
    pub fn square(&mut self, a: Var) -> Var {
        self.push(Op::Square(a))
    }
    pub fn sum(&mut self, a: Var) -> Var {
        self.push(Op::Sum(a))
    }
    pub fn mean(&mut self, a: Var) -> Var {
        self.push(Op::Mean(a))
    }
    pub fn expand(&mut self, a: Var, shape: &[usize]) -> Var {
        self.push(Op::Expand(a, shape.to_vec()))
    }
    pub fn broadcast_rows(&mut self, a: Var, n: usize) -> Var {
        self.push(Op::BroadcastRows(a, n))
    }
    pub fn sum_rows(&mut self, a: Var) -> Var {
        self.push(Op::SumRows(a))
    }
    pub fn broadcast_cols(&mut self, a: Var, m: usize) -> Var {
        self.push(Op::BroadcastCols(a, m))
    }
    pub fn sum_cols(&mut self, a: Var) -> Var {
        self.push(Op::SumCols(a))
    }
    pub fn minimum(&mut self, a: Var, b: Var) -> Var {
        self.push(Op::Min(a, b))
    }
    pub fn maximum(&mut self, a: Var, b: Var) -> Var {
        self.push(Op::Max(a, b))
    }
    pub fn clamp(&mut self, a: Var, lo: T, hi: T) -> Var {
        self.push(Op::Clamp(a, lo, hi))
    }

    /// `x · W + b` with `x: [n, in]`, `W: [in, out]`, `b: [out]`.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Var {
        let n = self.value(x).rows();
        let xw = self.matmul(x, w);
        let bb = self.broadcast_rows(b, n);
        self.add(xw, bb)
    }

    /// Sum of elementwise products, reduced to rank 0.
    pub fn dot(&mut self, a: Var, b: Var) -> Var {
        let p = self.mul(a, b);
        self.sum(p)
    }

    /// Recomputes every non-leaf node from the stored leaves.
    pub fn replay(&self) -> Vec<Tensor<T>> {
        let mut values: Vec<Tensor<T>> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let v = match node.op {
                Op::Leaf => node.value.clone(),
                ref op => Self::eval(op, |v| &values[v.0]),
            };
            values.push(v);
        }
        values
    }

    fn check_scalar_output(&self, output: Var) -> Result<(), AdError> {
        let shape = self.value(output).shape();
        if self.value(output).len() != 1 {
            return Err(AdError::Contract(format!("backward needs a scalar output, got shape {shape:?}")));
        }
        Ok(())
    }

    /// Reverse sweep producing numeric gradients of `output` for every node
    /// that requires grad. The tape is not modified.
    pub fn backward(&self, output: Var) -> Result<Gradients<T>, AdError> {
        self.check_scalar_output(output)?;
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; output.0 + 1];
        grads[output.0] = Some(Tensor::full(self.value(output).shape(), T::one()));

        for i in (0..=output.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            for (input, contrib) in self.vjp(i, &g) {
                if !self.nodes[input.0].requires_grad {
                    continue;
                }
                match &mut grads[input.0] {
                    Some(acc) => {
                        for (a, c) in acc.data_mut().iter_mut().zip(contrib.data()) {
                            *a += *c;
                        }
                    }
                    slot @ None => *slot = Some(contrib),
                }
            }
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    /// Convenience wrapper returning gradients for `wrt` in order.
    pub fn backward_wrt(&self, output: Var, wrt: &[Var]) -> Result<Vec<Tensor<T>>, AdError> {
        let g = self.backward(output)?;
        Ok(wrt.iter().map(|&v| g.get_or_zeros(self, v)).collect())
    }

    fn vjp(&self, i: usize, g: &Tensor<T>) -> Vec<(Var, Tensor<T>)> {
        use Op::*;
        let val = |v: Var| &self.nodes[v.0].value;
        let y = &self.nodes[i].value;
        match &self.nodes[i].op {
            Leaf => vec![],
            MatMul(a, b) => {
                let da = g.matmul(&val(*b).transpose());
                let db = val(*a).transpose().matmul(g);
                vec![(*a, da), (*b, db)]
            }
            Transpose(a) => vec![(*a, g.transpose())],
            Add(a, b) => vec![(*a, g.clone()), (*b, g.clone())],
            Sub(a, b) => vec![(*a, g.clone()), (*b, g.map(|x| -x))],
            Mul(a, b) => vec![(*a, g.zip_map(val(*b), |g, b| g * b)), (*b, g.zip_map(val(*a), |g, a| g * a))],
            Div(a, b) => {
                let bv = val(*b);
                let da = g.zip_map(bv, |g, b| g / b);
                let db = g.zip_map(y, |g, y| g * y).zip_map(bv, |gy, b| -gy / b);
                vec![(*a, da), (*b, db)]
            }
            Neg(a) => vec![(*a, g.map(|x| -x))],
            Scale(a, c) => {
                let c = *c;
                vec![(*a, g.map(|x| x * c))]
            }
            AddScalar(a, _) => vec![(*a, g.clone())],
            Tanh(a) => vec![(*a, g.zip_map(y, |g, y| g * (T::one() - y * y)))],
            Exp(a) => vec![(*a, g.zip_map(y, |g, y| g * y))],
            Log(a) => vec![(*a, g.zip_map(val(*a), |g, x| g / x))],
            Square(a) => {
                let two = T::lit(2.0);
                vec![(*a, g.zip_map(val(*a), |g, x| two * g * x))]
            }
            Sum(a) => vec![(*a, Tensor::full(val(*a).shape(), g.item()))],
            Mean(a) => {
                let n = T::from_usize_lossy(val(*a).len());
                vec![(*a, Tensor::full(val(*a).shape(), g.item() / n))]
            }
            Expand(a, _) => vec![(*a, Tensor::full(val(*a).shape(), g.sum()))],
            BroadcastRows(a, _) => vec![(*a, sum_rows(g))],
            SumRows(a) => vec![(*a, broadcast_rows(g, val(*a).rows()))],
            BroadcastCols(a, _) => vec![(*a, sum_cols(g))],
            SumCols(a) => vec![(*a, broadcast_cols(g, val(*a).cols()))],
            Min(a, b) => {
                let m = val(*a).zip_map(val(*b), |x, y| if x <= y { T::one() } else { T::zero() });
                vec![(*a, g.zip_map(&m, |g, m| g * m)), (*b, g.zip_map(&m, |g, m| g * (T::one() - m)))]
            }
            Max(a, b) => {
                let m = val(*a).zip_map(val(*b), |x, y| if x >= y { T::one() } else { T::zero() });
                vec![(*a, g.zip_map(&m, |g, m| g * m)), (*b, g.zip_map(&m, |g, m| g * (T::one() - m)))]
            }
            Clamp(a, lo, hi) => {
                let (lo, hi) = (*lo, *hi);
                let m = mask(val(*a), |x| x >= lo && x <= hi);
                vec![(*a, g.zip_map(&m, |g, m| g * m))]
            }
        }
    }

    /// Records the reverse sweep itself on the tape, returning gradient nodes for
    /// `wrt`. The returned nodes can be differentiated again, which is what
    /// second-order products are built from.
    pub fn grad_graph(&mut self, output: Var, wrt: &[Var]) -> Result<Vec<Var>, AdError> {
        self.check_scalar_output(output)?;
        let shape = self.value(output).shape().to_vec();
        let seed = self.constant(Tensor::full(&shape, T::one()));
        let mut grads: Vec<Option<Var>> = vec![None; output.0 + 1];
        grads[output.0] = Some(seed);

        for i in (0..=output.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i] else { continue };
            for (input, contrib) in self.vjp_graph(i, g) {
                if !self.nodes[input.0].requires_grad {
                    continue;
                }
                grads[input.0] = Some(match grads[input.0] {
                    Some(acc) => self.add(acc, contrib),
                    None => contrib,
                });
            }
        }
        Ok(wrt
            .iter()
            .map(|&v| match grads.get(v.0).copied().flatten() {
                Some(g) => g,
                None => {
                    let z = Tensor::zeros(self.value(v).shape());
                    self.constant(z)
                }
            })
            .collect())
    }

    fn vjp_graph(&mut self, i: usize, g: Var) -> Vec<(Var, Var)> {
        use Op::*;
        let y = Var(i);
        let op = self.nodes[i].op.clone();
        match op {
            Leaf => vec![],
            MatMul(a, b) => {
                let bt = self.transpose(b);
                let da = self.matmul(g, bt);
                let at = self.transpose(a);
                let db = self.matmul(at, g);
                vec![(a, da), (b, db)]
            }
            Transpose(a) => vec![(a, self.transpose(g))],
            Add(a, b) => vec![(a, g), (b, g)],
            Sub(a, b) => {
                let nb = self.neg(g);
                vec![(a, g), (b, nb)]
            }
            Mul(a, b) => {
                let da = self.mul(g, b);
                let db = self.mul(g, a);
                vec![(a, da), (b, db)]
            }
            Div(a, b) => {
                let da = self.div(g, b);
                let gy = self.mul(g, y);
                let q = self.div(gy, b);
                let db = self.neg(q);
                vec![(a, da), (b, db)]
            }
            Neg(a) => vec![(a, self.neg(g))],
            Scale(a, c) => vec![(a, self.scale(g, c))],
            AddScalar(a, _) => vec![(a, g)],
            Tanh(a) => {
                let y2 = self.square(y);
                let ny2 = self.neg(y2);
                let d = self.add_scalar(ny2, T::one());
                vec![(a, self.mul(g, d))]
            }
            Exp(a) => vec![(a, self.mul(g, y))],
            Log(a) => vec![(a, self.div(g, a))],
            Square(a) => {
                let ga = self.mul(g, a);
                vec![(a, self.scale(ga, T::lit(2.0)))]
            }
            Sum(a) => {
                let shape = self.value(a).shape().to_vec();
                vec![(a, self.expand(g, &shape))]
            }
            Mean(a) => {
                let shape = self.value(a).shape().to_vec();
                let n = T::from_usize_lossy(self.value(a).len());
                let e = self.expand(g, &shape);
                vec![(a, self.scale(e, T::one() / n))]
            }
            Expand(a, _) => vec![(a, self.sum(g))],
            BroadcastRows(a, _) => vec![(a, self.sum_rows(g))],
            SumRows(a) => {
                let n = self.value(a).rows();
                vec![(a, self.broadcast_rows(g, n))]
            }
            BroadcastCols(a, _) => vec![(a, self.sum_cols(g))],
            SumCols(a) => {
                let m = self.value(a).cols();
                vec![(a, self.broadcast_cols(g, m))]
            }
            Min(a, b) | Max(a, b) => {
                let is_min = matches!(self.nodes[i].op, Min(..));
                let m = self.value(a).zip_map(self.value(b), |x, y| {
                    let pick_a = if is_min { x <= y } else { x >= y };
                    if pick_a { T::one() } else { T::zero() }
                });
                let inv = m.map(|m| T::one() - m);
                let mv = self.constant(m);
                let iv = self.constant(inv);
                let da = self.mul(g, mv);
                let db = self.mul(g, iv);
                vec![(a, da), (b, db)]
            }
            Clamp(a, lo, hi) => {
                let m = mask(self.value(a), |x| x >= lo && x <= hi);
                let mv = self.constant(m);
                vec![(a, self.mul(g, mv))]
            }
        }
    }
}
