//! Matrix-level reverse-mode automatic differentiation.
//!
//! A [`Tape`] records one forward computation as a list of nodes. Values are
//! computed eagerly when a node is pushed; [`Tape::backward`] walks the list
//! in reverse and accumulates adjoints without touching the stored values.

use super::matrix::Matrix;
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Const,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    /// `a (r x c) + row (1 x c)`
    AddRow(Var, Var),
    /// `a (r x c) * col (r x 1)` per row.
    MulCol(Var, Var),
    /// `a (r x c) * s (1 x 1)`
    MulScalar(Var, Var),
    Scale(Var, f64),
    Offset(Var),
    Silu(Var),
    Square(Var),
    Sqrt(Var),
    Ln(Var),
    ClampMax(Var, f64),
    SumAll(Var),
    SumRows(Var),
    ConcatCols(Vec<Var>),
    GatherRows(Var, Vec<usize>),
    CenterCols(Var),
    NormalizeRows(Var),
    /// Row-wise log-sum-exp with an optional mask of included entries.
    LogSumExpRows(Var, Option<Vec<bool>>),
}

#[derive(Debug, Clone)]
struct Node {
    value: Matrix,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Adjoint of `v`; zeros if `v` does not influence the root.
    pub fn get(&self, v: Var) -> Matrix {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[v.0];
                Matrix::zeros(r, c)
            }
        }
    }

    pub fn take(&mut self, v: Var) -> Matrix {
        match self.grads[v.0].take() {
            Some(g) => g,
            None => {
                let (r, c) = self.shapes[v.0];
                Matrix::zeros(r, c)
            }
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

pub fn silu_derivative(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Matrix, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Differentiable input (parameter or input being attacked).
    pub fn leaf(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Const, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul(self.value(b));
        let rg = self.rg(&[a, b]);
        self.push(v, Op::MatMul(a, b), rg)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.value(a).transpose();
        let rg = self.rg(&[a]);
        self.push(v, Op::Transpose(a), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).add(self.value(b));
        let rg = self.rg(&[a, b]);
        self.push(v, Op::Add(a, b), rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).sub(self.value(b));
        let rg = self.rg(&[a, b]);
        self.push(v, Op::Sub(a, b), rg)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y);
        let rg = self.rg(&[a, b]);
        self.push(v, Op::Mul(a, b), rg)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip_map(self.value(b), |x, y| x / y);
        let rg = self.rg(&[a, b]);
        self.push(v, Op::Div(a, b), rg)
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let v = self.value(a).add_row_broadcast(self.value(row));
        let rg = self.rg(&[a, row]);
        self.push(v, Op::AddRow(a, row), rg)
    }

    pub fn mul_col(&mut self, a: Var, col: Var) -> Var {
        let av = self.value(a);
        let cv = self.value(col);
        assert_eq!(cv.shape(), (av.rows(), 1), "mul_col expects an r x 1 column");
        let mut v = av.clone();
        for i in 0..v.rows() {
            let c = cv[(i, 0)];
            v.row_mut(i).iter_mut().for_each(|x| *x *= c);
        }
        let rg = self.rg(&[a, col]);
        self.push(v, Op::MulCol(a, col), rg)
    }

    pub fn mul_scalar(&mut self, a: Var, s: Var) -> Var {
        let sv = self.value(s);
        assert_eq!(sv.shape(), (1, 1), "mul_scalar expects a 1 x 1 factor");
        let v = self.value(a).scale(sv.item());
        let rg = self.rg(&[a, s]);
        self.push(v, Op::MulScalar(a, s), rg)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).scale(c);
        let rg = self.rg(&[a]);
        self.push(v, Op::Scale(a, c), rg)
    }

    pub fn offset(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).map(|x| x + c);
        let rg = self.rg(&[a]);
        self.push(v, Op::Offset(a), rg)
    }

    pub fn silu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(silu);
        let rg = self.rg(&[a]);
        self.push(v, Op::Silu(a), rg)
    }

    pub fn square(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x * x);
        let rg = self.rg(&[a]);
        self.push(v, Op::Square(a), rg)
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::sqrt);
        let rg = self.rg(&[a]);
        self.push(v, Op::Sqrt(a), rg)
    }

    pub fn ln(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::ln);
        let rg = self.rg(&[a]);
        self.push(v, Op::Ln(a), rg)
    }

    /// `min(a, c)`; the adjoint is zero where the clamp is active.
    pub fn clamp_max(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).map(|x| x.min(c));
        let rg = self.rg(&[a]);
        self.push(v, Op::ClampMax(a, c), rg)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = Matrix::scalar(self.value(a).sum());
        let rg = self.rg(&[a]);
        self.push(v, Op::SumAll(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).data().len() as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// Row sums as an `r x 1` column.
    pub fn sum_rows(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let v = Matrix::col_vector(&(0..av.rows()).map(|i| av.row(i).iter().sum()).collect::<Vec<_>>());
        let rg = self.rg(&[a]);
        self.push(v, Op::SumRows(a), rg)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let mut v = self.value(parts[0]).clone();
        for p in &parts[1..] {
            v = v.hcat(self.value(*p));
        }
        let rg = self.rg(parts);
        self.push(v, Op::ConcatCols(parts.to_vec()), rg)
    }

    /// Embedding lookup: row `indices[i]` of `table` becomes output row `i`.
    pub fn gather_rows(&mut self, table: Var, indices: &[usize]) -> Var {
        let v = self.value(table).select_rows(indices);
        let rg = self.rg(&[table]);
        self.push(v, Op::GatherRows(table, indices.to_vec()), rg)
    }

    pub fn center_cols(&mut self, a: Var) -> Var {
        let v = self.value(a).center_columns();
        let rg = self.rg(&[a]);
        self.push(v, Op::CenterCols(a), rg)
    }

    /// Scales each row to unit L2 norm.
    pub fn normalize_rows(&mut self, a: Var) -> Var {
        let mut v = self.value(a).clone();
        for i in 0..v.rows() {
            let n = super::matrix::norm(v.row(i));
            v.row_mut(i).iter_mut().for_each(|x| *x /= n);
        }
        let rg = self.rg(&[a]);
        self.push(v, Op::NormalizeRows(a), rg)
    }

    /// Row-wise `log Σ_j exp(a_ij)` over entries where `mask` (row-major,
    /// same shape as `a`) is true; all entries when `mask` is `None`.
    pub fn log_sum_exp_rows(&mut self, a: Var, mask: Option<Vec<bool>>) -> Var {
        let av = self.value(a);
        let cols = av.cols();
        if let Some(m) = &mask {
            assert_eq!(m.len(), av.data().len(), "mask shape mismatch");
        }
        let vals: Vec<f64> = (0..av.rows())
            .map(|i| {
                let row = av.row(i);
                match &mask {
                    None => log_sum_exp(row.iter().copied()),
                    Some(m) => {
                        let mrow = &m[i * cols..(i + 1) * cols];
                        log_sum_exp(row.iter().zip(mrow).filter(|(_, &k)| k).map(|(x, _)| *x))
                    }
                }
            })
            .collect();
        let v = Matrix::col_vector(&vals);
        let rg = self.rg(&[a]);
        self.push(v, Op::LogSumExpRows(a, mask), rg)
    }

    /// Reverse pass from a `1 x 1` root.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let root_val = self.value(root);
        if root_val.shape() != (1, 1) {
            return Err(Error::Contract(format!(
                "backward needs a scalar root, got {:?}",
                root_val.shape()
            )));
        }
        let mut grads: Vec<Option<Matrix>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(Matrix::scalar(1.0));

        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape()).collect();
        Ok(Gradients { grads, shapes })
    }

    fn propagate(&self, node: &Node, g: &Matrix, grads: &mut [Option<Matrix>]) {
        let val = |v: Var| &self.nodes[v.0].value;
        let mut acc = |v: Var, d: Matrix| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&d),
                slot @ None => *slot = Some(d),
            }
        };
        match &node.op {
            Op::Leaf | Op::Const => {}
            Op::MatMul(a, b) => {
                if self.nodes[a.0].requires_grad {
                    acc(*a, g.matmul_t(val(*b)));
                }
                if self.nodes[b.0].requires_grad {
                    acc(*b, val(*a).t_matmul(g));
                }
            }
            Op::Transpose(a) => acc(*a, g.transpose()),
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.scale(-1.0));
            }
            Op::Mul(a, b) => {
                acc(*a, g.zip_map(val(*b), |x, y| x * y));
                acc(*b, g.zip_map(val(*a), |x, y| x * y));
            }
            Op::Div(a, b) => {
                let bv = val(*b);
                acc(*a, g.zip_map(bv, |x, y| x / y));
                let av = val(*a);
                let mut db = g.clone();
                for ((d, &x), &y) in db.data_mut().iter_mut().zip(av.data()).zip(bv.data()) {
                    *d *= -x / (y * y);
                }
                acc(*b, db);
            }
            Op::AddRow(a, row) => {
                acc(*a, g.clone());
                acc(*row, Matrix::row_vector(&g.col_sums()));
            }
            Op::MulCol(a, col) => {
                let av = val(*a);
                let cv = val(*col);
                let mut da = g.clone();
                let mut dc = vec![0.0; g.rows()];
                for i in 0..g.rows() {
                    let c = cv[(i, 0)];
                    dc[i] = g.row(i).iter().zip(av.row(i)).map(|(x, y)| x * y).sum();
                    da.row_mut(i).iter_mut().for_each(|x| *x *= c);
                }
                acc(*a, da);
                acc(*col, Matrix::col_vector(&dc));
            }
            Op::MulScalar(a, s) => {
                let sv = val(*s).item();
                acc(*a, g.scale(sv));
                let ds: f64 = g.data().iter().zip(val(*a).data()).map(|(x, y)| x * y).sum();
                acc(*s, Matrix::scalar(ds));
            }
            Op::Scale(a, c) => acc(*a, g.scale(*c)),
            Op::Offset(a) => acc(*a, g.clone()),
            Op::Silu(a) => acc(*a, g.zip_map(val(*a), |x, y| x * silu_derivative(y))),
            Op::Square(a) => acc(*a, g.zip_map(val(*a), |x, y| 2.0 * x * y)),
            Op::Sqrt(a) => acc(*a, g.zip_map(&node.value, |x, y| 0.5 * x / y)),
            Op::Ln(a) => acc(*a, g.zip_map(val(*a), |x, y| x / y)),
            Op::ClampMax(a, c) => acc(*a, g.zip_map(val(*a), |x, y| if y < *c { x } else { 0.0 })),
            Op::SumAll(a) => {
                let (r, c) = val(*a).shape();
                acc(*a, Matrix::filled(r, c, g.item()));
            }
            Op::SumRows(a) => {
                let (r, c) = val(*a).shape();
                let mut d = Matrix::zeros(r, c);
                for i in 0..r {
                    let gi = g[(i, 0)];
                    d.row_mut(i).iter_mut().for_each(|x| *x = gi);
                }
                acc(*a, d);
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for p in parts {
                    let (r, c) = val(*p).shape();
                    let mut d = Matrix::zeros(r, c);
                    for i in 0..r {
                        d.row_mut(i).copy_from_slice(&g.row(i)[offset..offset + c]);
                    }
                    offset += c;
                    acc(*p, d);
                }
            }
            Op::GatherRows(table, indices) => {
                let (r, c) = val(*table).shape();
                let mut d = Matrix::zeros(r, c);
                for (i, &src) in indices.iter().enumerate() {
                    for (x, y) in d.row_mut(src).iter_mut().zip(g.row(i)) {
                        *x += y;
                    }
                }
                acc(*table, d);
            }
            Op::CenterCols(a) => acc(*a, g.center_columns()),
            Op::NormalizeRows(a) => {
                // y = x/|x|  =>  dx = (g - y (y·g)) / |x|
                let av = val(*a);
                let y = &node.value;
                let mut d = Matrix::zeros(g.rows(), g.cols());
                for i in 0..g.rows() {
                    let n = super::matrix::norm(av.row(i));
                    let yg = super::matrix::dot(y.row(i), g.row(i));
                    for ((out, gi), yi) in d.row_mut(i).iter_mut().zip(g.row(i)).zip(y.row(i)) {
                        *out = (gi - yi * yg) / n;
                    }
                }
                acc(*a, d);
            }
            Op::LogSumExpRows(a, mask) => {
                let av = val(*a);
                let cols = av.cols();
                let mut d = Matrix::zeros(av.rows(), cols);
                for i in 0..av.rows() {
                    let lse = node.value[(i, 0)];
                    let gi = g[(i, 0)];
                    for j in 0..cols {
                        let included = mask.as_ref().is_none_or(|m| m[i * cols + j]);
                        if included {
                            d[(i, j)] = gi * (av[(i, j)] - lse).exp();
                        }
                    }
                }
                acc(*a, d);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_gradient() {
        let mut t = Tape::new();
        let x = t.leaf(Matrix::row_vector(&[1.0, 2.0]));
        let sq = t.square(x);
        let f = t.sum(sq);
        let g = t.backward(f).unwrap();
        assert_eq!(g.get(x).data(), &[2.0, 4.0]);
    }

    #[test]
    fn linear_gradient_is_input_outer_structure() {
        // f(W) = sum(x W), x: 1x3, W: 3x2  =>  dW_ij = x_i
        let mut t = Tape::new();
        let x = t.constant(Matrix::row_vector(&[1.0, -2.0, 0.5]));
        let w = t.leaf(Matrix::from_vec(3, 2, vec![0.3, 0.1, -0.7, 0.2, 0.9, 1.1]).unwrap());
        let y = t.matmul(x, w);
        let f = t.sum(y);
        let g = t.backward(f).unwrap().get(w);
        assert_eq!(g.data(), &[1.0, 1.0, -2.0, -2.0, 0.5, 0.5]);
    }

    #[test]
    fn non_scalar_root_is_contract_error() {
        let mut t = Tape::new();
        let x = t.leaf(Matrix::row_vector(&[1.0, 2.0]));
        assert!(matches!(t.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn backward_leaves_values_untouched() {
        let mut t = Tape::new();
        let x = t.leaf(Matrix::row_vector(&[0.3, -1.2]));
        let s = t.silu(x);
        let f = t.sum(s);
        let before: Vec<Matrix> = (0..t.len()).map(|i| t.nodes[i].value.clone()).collect();
        t.backward(f).unwrap();
        let after: Vec<Matrix> = (0..t.len()).map(|i| t.nodes[i].value.clone()).collect();
        assert_eq!(before, after);
    }

    #[test]
    fn masked_log_sum_exp_skips_excluded() {
        let mut t = Tape::new();
        let a = t.leaf(Matrix::from_rows(&[[0.0, 100.0], [1.0, 1.0]]).unwrap());
        let l = t.log_sum_exp_rows(a, Some(vec![true, false, true, true]));
        assert!((t.value(l)[(0, 0)] - 0.0).abs() < 1e-12);
        assert!((t.value(l)[(1, 0)] - (1.0 + 2f64.ln())).abs() < 1e-12);
        let s = t.sum(l);
        let g = t.backward(s).unwrap().get(a);
        assert_eq!(g[(0, 1)], 0.0);
        assert!((g[(0, 0)] - 1.0).abs() < 1e-12);
    }
}
