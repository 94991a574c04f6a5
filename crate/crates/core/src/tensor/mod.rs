//! Tape-based reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! Every differentiable computation in the crate is recorded on a [`Tape`]:
//! values are created eagerly, in topological order, and [`Tape::backward`]
//! walks the tape in reverse to accumulate gradients into every node that
//! requires one.
//!
//! Binary elementwise ops require equal shapes. Row/column vector expansion is
//! explicit through [`Tape::broadcast`] so each backward rule stays a plain
//! shape-preserving formula.

mod functional;
mod gradcheck;
mod store;

pub use gradcheck::{grad_check, GradCheckOptions, GradCheckReport, GradEntry};
pub use store::{Bound, ParamStore};

use ndarray::{Array2, Axis};

use crate::error::{Error, Result, Shape};

pub type Matrix = Array2<f64>;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Provenance of a node.
#[derive(Debug, Clone, PartialEq)]
pub enum Op {
    Leaf,
    MatMul,
    Add,
    Sub,
    Mul,
    Div,
    Scale(f64),
    Shift(f64),
    Relu,
    Sigmoid,
    Exp,
    Log,
    Sqrt,
    Clamp { lo: f64, hi: f64 },
    /// Sum of all entries, `[1 x 1]`.
    Sum,
    /// Per-row sum, `[r x 1]`.
    SumRows,
    /// Per-column sum, `[1 x c]`.
    SumCols,
    ConcatCols,
    ConcatRows,
    SliceCols { start: usize, len: usize },
    Broadcast { rows: usize, cols: usize },
    Transpose,
    GatherRows(Vec<usize>),
    ScatterAddRows { index: Vec<usize>, rows: usize },
}

/// A recorded node: data, accumulated gradient, provenance and parents.
#[derive(Debug, Clone)]
pub struct Value {
    pub data: Matrix,
    pub grad: Matrix,
    pub op: Op,
    pub parents: Vec<Var>,
    pub requires_grad: bool,
}

/// Deliberate corruption of a backward rule, used as a negative control for
/// gradient checking.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BackwardFault {
    /// Multiplies the sigmoid derivative by the given factor.
    SigmoidScale(f64),
}

#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Value>,
    fault: Option<BackwardFault>,
}

fn shape(m: &Matrix) -> Shape {
    Shape(m.nrows(), m.ncols())
}

fn same_shape(op: &'static str, a: &Matrix, b: &Matrix) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::dim(op, a.dim(), b.dim()));
    }
    Ok(())
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Forward rule for every op. Shared by node creation and [`Tape::forward`].
fn eval(op: &Op, inputs: &[&Matrix]) -> Result<Matrix> {
    let unary = |f: fn(f64) -> f64| inputs[0].mapv(f);
    Ok(match op {
        Op::Leaf => unreachable!("leaves carry their own data"),
        Op::MatMul => {
            let (a, b) = (inputs[0], inputs[1]);
            if a.ncols() != b.nrows() {
                return Err(Error::dim("matmul", a.dim(), b.dim()));
            }
            a.dot(b)
        }
        Op::Add => {
            same_shape("add", inputs[0], inputs[1])?;
            inputs[0] + inputs[1]
        }
        Op::Sub => {
            same_shape("sub", inputs[0], inputs[1])?;
            inputs[0] - inputs[1]
        }
        Op::Mul => {
            same_shape("mul", inputs[0], inputs[1])?;
            inputs[0] * inputs[1]
        }
        Op::Div => {
            same_shape("div", inputs[0], inputs[1])?;
            inputs[0] / inputs[1]
        }
        Op::Scale(c) => {
            let c = *c;
            inputs[0].mapv(|x| x * c)
        }
        Op::Shift(c) => {
            let c = *c;
            inputs[0].mapv(|x| x + c)
        }
        Op::Relu => unary(|x| if x > 0.0 { x } else { 0.0 }),
        Op::Sigmoid => unary(sigmoid),
        Op::Exp => unary(f64::exp),
        Op::Log => unary(f64::ln),
        Op::Sqrt => unary(f64::sqrt),
        Op::Clamp { lo, hi } => {
            let (lo, hi) = (*lo, *hi);
            inputs[0].mapv(|x| x.clamp(lo, hi))
        }
        Op::Sum => Array2::from_elem((1, 1), inputs[0].sum()),
        Op::SumRows => inputs[0].sum_axis(Axis(1)).insert_axis(Axis(1)),
        Op::SumCols => inputs[0].sum_axis(Axis(0)).insert_axis(Axis(0)),
        Op::ConcatCols => {
            let rows = inputs[0].nrows();
            if let Some(bad) = inputs.iter().find(|m| m.nrows() != rows) {
                return Err(Error::dim("concat_cols", inputs[0].dim(), bad.dim()));
            }
            let views: Vec<_> = inputs.iter().map(|m| m.view()).collect();
            ndarray::concatenate(Axis(1), &views).expect("row counts checked")
        }
        Op::ConcatRows => {
            let cols = inputs[0].ncols();
            if let Some(bad) = inputs.iter().find(|m| m.ncols() != cols) {
                return Err(Error::dim("concat_rows", inputs[0].dim(), bad.dim()));
            }
            let views: Vec<_> = inputs.iter().map(|m| m.view()).collect();
            ndarray::concatenate(Axis(0), &views).expect("column counts checked")
        }
        Op::SliceCols { start, len } => {
            let a = inputs[0];
            if start + len > a.ncols() {
                return Err(Error::dim("slice_cols", a.dim(), (a.nrows(), start + len)));
            }
            a.slice(ndarray::s![.., *start..start + len]).to_owned()
        }
        Op::Broadcast { rows, cols } => {
            let a = inputs[0];
            let ok = (a.nrows() == 1 || a.nrows() == *rows) && (a.ncols() == 1 || a.ncols() == *cols);
            if !ok {
                return Err(Error::dim("broadcast", a.dim(), (*rows, *cols)));
            }
            a.broadcast((*rows, *cols)).expect("broadcast shape checked").to_owned()
        }
        Op::Transpose => inputs[0].t().to_owned(),
        Op::GatherRows(index) => {
            let a = inputs[0];
            if let Some(&bad) = index.iter().find(|&&i| i >= a.nrows()) {
                return Err(Error::dim("gather_rows", a.dim(), (bad + 1, a.ncols())));
            }
            a.select(Axis(0), index)
        }
        Op::ScatterAddRows { index, rows } => {
            let a = inputs[0];
            if index.len() != a.nrows() {
                return Err(Error::dim("scatter_add_rows", a.dim(), (index.len(), a.ncols())));
            }
            let mut out = Array2::zeros((*rows, a.ncols()));
            for (src, &dst) in index.iter().enumerate() {
                if dst >= *rows {
                    return Err(Error::dim("scatter_add_rows", (*rows, a.ncols()), (dst + 1, a.ncols())));
                }
                let mut row = out.row_mut(dst);
                row += &a.row(src);
            }
            out
        }
    })
}

/// Gradient contributions of one node to each of its parents. `None` for
/// parents that do not require a gradient.
fn backward_rule(
    op: &Op,
    inputs: &[&Matrix],
    wants: &[bool],
    out: &Matrix,
    g: &Matrix,
    fault: Option<BackwardFault>,
) -> Vec<Option<Matrix>> {
    let want = |i: usize, f: &dyn Fn() -> Matrix| if wants[i] { Some(f()) } else { None };
    match op {
        Op::Leaf => vec![],
        Op::MatMul => vec![
            want(0, &|| g.dot(&inputs[1].t())),
            want(1, &|| inputs[0].t().dot(g)),
        ],
        Op::Add => vec![want(0, &|| g.clone()), want(1, &|| g.clone())],
        Op::Sub => vec![want(0, &|| g.clone()), want(1, &|| -g)],
        Op::Mul => vec![want(0, &|| g * inputs[1]), want(1, &|| g * inputs[0])],
        Op::Div => vec![
            want(0, &|| g / inputs[1]),
            want(1, &|| {
                let mut d = -(g * inputs[0]);
                d /= inputs[1];
                d /= inputs[1];
                d
            }),
        ],
        Op::Scale(c) => vec![want(0, &|| g * *c)],
        Op::Shift(_) => vec![want(0, &|| g.clone())],
        Op::Relu => vec![want(0, &|| {
            let mut d = g.clone();
            ndarray::Zip::from(&mut d).and(inputs[0]).for_each(|d, &x| {
                if x <= 0.0 {
                    *d = 0.0
                }
            });
            d
        })],
        Op::Sigmoid => {
            let k = match fault {
                Some(BackwardFault::SigmoidScale(k)) => k,
                None => 1.0,
            };
            vec![want(0, &|| {
                let mut d = g.clone();
                ndarray::Zip::from(&mut d).and(out).for_each(|d, &s| *d *= k * s * (1.0 - s));
                d
            })]
        }
        Op::Exp => vec![want(0, &|| g * out)],
        Op::Log => vec![want(0, &|| g / inputs[0])],
        Op::Sqrt => vec![want(0, &|| {
            let mut d = g.clone();
            ndarray::Zip::from(&mut d).and(out).for_each(|d, &s| *d /= 2.0 * s);
            d
        })],
        Op::Clamp { lo, hi } => vec![want(0, &|| {
            let mut d = g.clone();
            ndarray::Zip::from(&mut d).and(inputs[0]).for_each(|d, &x| {
                if x < *lo || x > *hi {
                    *d = 0.0
                }
            });
            d
        })],
        Op::Sum => vec![want(0, &|| Array2::from_elem(inputs[0].dim(), g[[0, 0]]))],
        Op::SumRows => vec![want(0, &|| {
            g.broadcast(inputs[0].dim()).expect("column gradient").to_owned()
        })],
        Op::SumCols => vec![want(0, &|| {
            g.broadcast(inputs[0].dim()).expect("row gradient").to_owned()
        })],
        Op::ConcatCols => {
            let mut at = 0;
            inputs
                .iter()
                .enumerate()
                .map(|(i, m)| {
                    let start = at;
                    at += m.ncols();
                    want(i, &|| g.slice(ndarray::s![.., start..start + m.ncols()]).to_owned())
                })
                .collect()
        }
        Op::ConcatRows => {
            let mut at = 0;
            inputs
                .iter()
                .enumerate()
                .map(|(i, m)| {
                    let start = at;
                    at += m.nrows();
                    want(i, &|| g.slice(ndarray::s![start..start + m.nrows(), ..]).to_owned())
                })
                .collect()
        }
        Op::SliceCols { start, len } => vec![want(0, &|| {
            let mut d = Array2::zeros(inputs[0].dim());
            d.slice_mut(ndarray::s![.., *start..start + len]).assign(g);
            d
        })],
        Op::Broadcast { .. } => vec![want(0, &|| {
            let a = inputs[0];
            let mut d = g.clone();
            if a.nrows() == 1 && g.nrows() != 1 {
                d = d.sum_axis(Axis(0)).insert_axis(Axis(0));
            }
            if a.ncols() == 1 && g.ncols() != 1 {
                d = d.sum_axis(Axis(1)).insert_axis(Axis(1));
            }
            d
        })],
        Op::Transpose => vec![want(0, &|| g.t().to_owned())],
        Op::GatherRows(index) => vec![want(0, &|| {
            let mut d = Array2::zeros(inputs[0].dim());
            for (src, &dst) in index.iter().enumerate() {
                let mut row = d.row_mut(dst);
                row += &g.row(src);
            }
            d
        })],
        Op::ScatterAddRows { index, .. } => vec![want(0, &|| g.select(Axis(0), index))],
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// A tape whose backward pass applies `fault`. Test fixture only.
    pub fn with_fault(fault: BackwardFault) -> Self {
        Tape {
            nodes: Vec::new(),
            fault: Some(fault),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, data: Matrix, requires_grad: bool) -> Var {
        let grad = Array2::zeros(data.dim());
        self.nodes.push(Value {
            data,
            grad,
            op: Op::Leaf,
            parents: Vec::new(),
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, data: Matrix) -> Var {
        self.leaf(data, false)
    }

    pub fn param(&mut self, data: Matrix) -> Var {
        self.leaf(data, true)
    }

    pub fn scalar(&mut self, x: f64) -> Var {
        self.constant(Array2::from_elem((1, 1), x))
    }

    pub fn node(&self, v: Var) -> &Value {
        &self.nodes[v.0]
    }

    pub fn data(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].data
    }

    pub fn grad(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].grad
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].data.dim()
    }

    /// The single entry of a `[1 x 1]` node.
    pub fn item(&self, v: Var) -> Result<f64> {
        let d = self.data(v);
        if d.dim() != (1, 1) {
            return Err(Error::Contract(format!("expected a scalar, found {}", shape(d))));
        }
        Ok(d[[0, 0]])
    }

    /// Copies node data out of the tape, dropping the graph and gradients.
    pub fn detach(&self, v: Var) -> Matrix {
        self.data(v).clone()
    }

    /// Replaces the data of a leaf. Downstream nodes are stale until
    /// [`Tape::forward`] runs.
    pub fn set_leaf(&mut self, v: Var, data: Matrix) -> Result<()> {
        let node = &mut self.nodes[v.0];
        if node.op != Op::Leaf {
            return Err(Error::Contract(format!("node {} is not a leaf", v.0)));
        }
        if node.data.dim() != data.dim() {
            return Err(Error::dim("set_leaf", node.data.dim(), data.dim()));
        }
        node.data = data;
        Ok(())
    }

    /// Recomputes every non-leaf ancestor of `v` from the current leaf data,
    /// in tape order, and returns its data.
    pub fn forward(&mut self, v: Var) -> Result<&Matrix> {
        for i in 0..=v.0 {
            if self.nodes[i].op == Op::Leaf {
                continue;
            }
            let data = {
                let node = &self.nodes[i];
                let inputs: Vec<&Matrix> = node.parents.iter().map(|p| &self.nodes[p.0].data).collect();
                eval(&node.op, &inputs)?
            };
            self.nodes[i].data = data;
        }
        Ok(self.data(v))
    }

    fn push(&mut self, op: Op, parents: Vec<Var>) -> Result<Var> {
        let data = {
            let inputs: Vec<&Matrix> = parents.iter().map(|p| &self.nodes[p.0].data).collect();
            eval(&op, &inputs)?
        };
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        let grad = Array2::zeros(data.dim());
        self.nodes.push(Value {
            data,
            grad,
            op,
            parents,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::MatMul, vec![a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::Add, vec![a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::Sub, vec![a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::Mul, vec![a, b])
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::Div, vec![a, b])
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        self.push(Op::Scale(c), vec![a])
    }

    pub fn shift(&mut self, a: Var, c: f64) -> Result<Var> {
        self.push(Op::Shift(c), vec![a])
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.push(Op::Relu, vec![a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.push(Op::Sigmoid, vec![a])
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.push(Op::Exp, vec![a])
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.push(Op::Log, vec![a])
    }

    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        self.push(Op::Sqrt, vec![a])
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Result<Var> {
        self.push(Op::Clamp { lo, hi }, vec![a])
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.push(Op::Sum, vec![a])
    }

    pub fn sum_rows(&mut self, a: Var) -> Result<Var> {
        self.push(Op::SumRows, vec![a])
    }

    pub fn sum_cols(&mut self, a: Var) -> Result<Var> {
        self.push(Op::SumCols, vec![a])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.shape(a);
        if r * c == 0 {
            return Err(Error::Contract("mean of an empty matrix".into()));
        }
        let s = self.sum(a)?;
        self.scale(s, 1.0 / (r * c) as f64)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::Contract("concat of zero parts".into()));
        }
        self.push(Op::ConcatCols, parts.to_vec())
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::Contract("concat of zero parts".into()));
        }
        self.push(Op::ConcatRows, parts.to_vec())
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        self.push(Op::SliceCols { start, len }, vec![a])
    }

    pub fn broadcast(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var> {
        if self.shape(a) == (rows, cols) {
            return Ok(a);
        }
        self.push(Op::Broadcast { rows, cols }, vec![a])
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        self.push(Op::Transpose, vec![a])
    }

    pub fn gather_rows(&mut self, a: Var, index: Vec<usize>) -> Result<Var> {
        self.push(Op::GatherRows(index), vec![a])
    }

    pub fn scatter_add_rows(&mut self, a: Var, index: Vec<usize>, rows: usize) -> Result<Var> {
        self.push(Op::ScatterAddRows { index, rows }, vec![a])
    }

    /// `a + row` with `row` expanded over the rows of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (r, c) = self.shape(a);
        let b = self.broadcast(row, r, c)?;
        self.add(a, b)
    }

    /// `a ⊙ col` with `col` expanded over the columns of `a`.
    pub fn mul_col(&mut self, a: Var, col: Var) -> Result<Var> {
        let (r, c) = self.shape(a);
        let b = self.broadcast(col, r, c)?;
        self.mul(a, b)
    }

    /// `a - col` with `col` expanded over the columns of `a`.
    pub fn sub_col(&mut self, a: Var, col: Var) -> Result<Var> {
        let (r, c) = self.shape(a);
        let b = self.broadcast(col, r, c)?;
        self.sub(a, b)
    }

    /// `a / col` with `col` expanded over the columns of `a`.
    pub fn div_col(&mut self, a: Var, col: Var) -> Result<Var> {
        let (r, c) = self.shape(a);
        let b = self.broadcast(col, r, c)?;
        self.div(a, b)
    }

    /// Resets every accumulated gradient to zero.
    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            node.grad.fill(0.0);
        }
    }

    /// Accumulates `d root / d node` into the gradient of every ancestor that
    /// requires a gradient. `root` must be `[1 x 1]`.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        let d = self.data(root);
        if d.dim() != (1, 1) {
            return Err(Error::Contract(format!(
                "backward needs a scalar seed, found {}",
                shape(d)
            )));
        }
        if !self.nodes[root.0].requires_grad {
            return Ok(());
        }
        let mut pending: Vec<Option<Matrix>> = vec![None; root.0 + 1];
        pending[root.0] = Some(Array2::ones((1, 1)));
        for i in (0..=root.0).rev() {
            let Some(g) = pending[i].take() else { continue };
            let node = &self.nodes[i];
            if node.op != Op::Leaf {
                let inputs: Vec<&Matrix> = node.parents.iter().map(|p| &self.nodes[p.0].data).collect();
                let wants: Vec<bool> = node.parents.iter().map(|p| self.nodes[p.0].requires_grad).collect();
                let contribs = backward_rule(&node.op, &inputs, &wants, &node.data, &g, self.fault);
                for (p, c) in node.parents.iter().zip(contribs) {
                    let Some(c) = c else { continue };
                    match &mut pending[p.0] {
                        Some(acc) => *acc += &c,
                        slot @ None => *slot = Some(c),
                    }
                }
            }
            self.nodes[i].grad += &g;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn matmul_of_ones() {
        let mut t = Tape::new();
        let a = t.constant(Array2::ones((2, 3)));
        let b = t.constant(Array2::ones((3, 1)));
        let c = t.matmul(a, b).unwrap();
        assert_eq!(t.data(c), &array![[3.0], [3.0]]);
    }

    #[test]
    fn relu_and_sigmoid_definitions() {
        let mut t = Tape::new();
        let x = t.constant(array![[-1.0, 0.0, 2.0]]);
        let r = t.relu(x).unwrap();
        assert_eq!(t.data(r), &array![[0.0, 0.0, 2.0]]);
        let z = t.scalar(0.0);
        let s = t.sigmoid(z).unwrap();
        assert_eq!(t.item(s).unwrap(), 0.5);
    }

    #[test]
    fn shape_mismatch_names_both_shapes() {
        let mut t = Tape::new();
        let a = t.constant(Array2::ones((2, 3)));
        let b = t.constant(Array2::ones((2, 3)));
        let err = t.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("[2x3]") && err.contains("matmul"), "{err}");
        let c = t.constant(Array2::ones((3, 2)));
        let err = t.add(a, c).unwrap_err().to_string();
        assert!(err.contains("[2x3] vs [3x2]"), "{err}");
    }

    #[test]
    fn grad_of_sum_of_squares() {
        let mut t = Tape::new();
        let x = t.param(array![[1.0, 2.0, 3.0]]);
        let sq = t.mul(x, x).unwrap();
        let f = t.sum(sq).unwrap();
        t.backward(f).unwrap();
        assert_eq!(t.grad(x), &array![[2.0, 4.0, 6.0]]);
    }

    #[test]
    fn grad_of_bilinear_product() {
        let mut t = Tape::new();
        let a = t.param(array![[3.0]]);
        let b = t.param(array![[5.0]]);
        let ab = t.matmul(a, b).unwrap();
        let f = t.sum(ab).unwrap();
        t.backward(f).unwrap();
        assert_eq!(t.grad(a)[[0, 0]], 5.0);
        assert_eq!(t.grad(b)[[0, 0]], 3.0);
    }

    #[test]
    fn grad_of_logsumexp_is_softmax() {
        let mut t = Tape::new();
        let x = t.param(array![[0.0, 0.0]]);
        let e = t.exp(x).unwrap();
        let s = t.sum(e).unwrap();
        let f = t.log(s).unwrap();
        t.backward(f).unwrap();
        assert_abs_diff_eq!(t.grad(x), &array![[0.5, 0.5]], epsilon = 1e-15);
    }

    #[test]
    fn non_scalar_seed_is_rejected() {
        let mut t = Tape::new();
        let x = t.param(array![[1.0, 2.0]]);
        assert!(matches!(t.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn frozen_leaves_keep_zero_grad() {
        let mut t = Tape::new();
        let w = t.constant(array![[2.0]]);
        let x = t.param(array![[3.0]]);
        let y = t.mul(w, x).unwrap();
        t.backward(y).unwrap();
        assert_eq!(t.grad(w)[[0, 0]], 0.0);
        assert_eq!(t.grad(x)[[0, 0]], 2.0);
    }

    #[test]
    fn backward_accumulates_across_calls() {
        let mut t = Tape::new();
        let x = t.param(array![[0.3, -0.7]]);
        let s = t.sigmoid(x).unwrap();
        let m = t.mul(s, x).unwrap();
        let f = t.sum(m).unwrap();
        t.backward(f).unwrap();
        let once = t.grad(x).clone();
        t.backward(f).unwrap();
        assert_eq!(t.grad(x), &(&once * 2.0));
        t.zero_grad();
        assert!(t.grad(x).iter().all(|&g| g == 0.0));
    }

    #[test]
    fn fan_out_accumulates() {
        // f = sum(x) + sum(x ⊙ x) through two uses of x
        let mut t = Tape::new();
        let x = t.param(array![[1.0, -2.0]]);
        let a = t.sum(x).unwrap();
        let sq = t.mul(x, x).unwrap();
        let b = t.sum(sq).unwrap();
        let f = t.add(a, b).unwrap();
        t.backward(f).unwrap();
        assert_eq!(t.grad(x), &array![[3.0, -3.0]]);
    }

    #[test]
    fn forward_replay_is_idempotent_and_tracks_leaves() {
        let mut t = Tape::new();
        let x = t.param(array![[1.0, 2.0]]);
        let w = t.param(array![[0.5], [-1.0]]);
        let y = t.matmul(x, w).unwrap();
        let z = t.sigmoid(y).unwrap();
        let first = t.data(z).clone();
        assert_eq!(t.forward(z).unwrap(), &first);
        t.set_leaf(x, array![[0.0, 0.0]]).unwrap();
        assert_eq!(t.forward(z).unwrap()[[0, 0]], 0.5);
    }

    #[test]
    fn broadcast_backward_reduces() {
        let mut t = Tape::new();
        let row = t.param(array![[1.0, 2.0]]);
        let col = t.param(array![[1.0], [2.0], [3.0]]);
        let a = t.broadcast(row, 3, 2).unwrap();
        let b = t.broadcast(col, 3, 2).unwrap();
        let p = t.mul(a, b).unwrap();
        let f = t.sum(p).unwrap();
        t.backward(f).unwrap();
        assert_eq!(t.grad(row), &array![[6.0, 6.0]]);
        assert_eq!(t.grad(col), &array![[3.0], [3.0], [3.0]]);
    }

    #[test]
    fn gather_and_scatter_are_adjoint() {
        let mut t = Tape::new();
        let x = t.param(array![[1.0], [2.0], [3.0]]);
        let g = t.gather_rows(x, vec![2, 0, 2]).unwrap();
        assert_eq!(t.data(g), &array![[3.0], [1.0], [3.0]]);
        let s = t.scatter_add_rows(g, vec![0, 0, 1], 2).unwrap();
        assert_eq!(t.data(s), &array![[4.0], [3.0]]);
        let w = t.constant(array![[10.0], [1.0]]);
        let m = t.mul(s, w).unwrap();
        let f = t.sum(m).unwrap();
        t.backward(f).unwrap();
        // x0 reaches out row 0 once; x2 reaches rows 0 and 1
        assert_eq!(t.grad(x), &array![[10.0], [0.0], [11.0]]);
    }

    #[test]
    fn concat_and_slice_route_gradients() {
        let mut t = Tape::new();
        let a = t.param(array![[1.0], [2.0]]);
        let b = t.param(array![[3.0, 4.0], [5.0, 6.0]]);
        let c = t.concat_cols(&[a, b]).unwrap();
        let s = t.slice_cols(c, 1, 2).unwrap();
        assert_eq!(t.data(s), t.data(b));
        let f = t.sum(s).unwrap();
        t.backward(f).unwrap();
        assert_eq!(t.grad(a), &array![[0.0], [0.0]]);
        assert_eq!(t.grad(b), &Array2::<f64>::ones((2, 2)));
    }
}
