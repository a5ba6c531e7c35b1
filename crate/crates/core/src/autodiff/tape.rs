//! Reverse-mode tape over dense matrices.
//!
//! Every node holds its forward value. Nodes built only from constants do
//! not require gradients and are skipped by the backward sweep, so frozen
//! parameters (bound as constants) never receive a gradient entry.

use std::collections::BTreeMap;

use ndarray::{s, Array2, Axis};

use super::AutodiffError;

pub type Mat = Array2<f64>;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Caller-chosen key for a trainable parameter array.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone)]
enum Op {
    Const,
    Param(ParamId),
    /// `a · bᵀ`
    MatMulT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// `a + 1·row`
    AddRow(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Tanh(Var),
    /// Column `j` of a weight matrix repeated over `rows` rows.
    ColumnRows(Var, usize),
    Concat(Vec<Var>),
    Column(Var, usize),
    SumSquares(Var),
    Sum(Var),
}

#[derive(Debug)]
struct Node {
    value: Mat,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Parameter gradients produced by [`Tape::backward`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Gradients {
    pub by_param: BTreeMap<ParamId, Mat>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> Option<&Mat> {
        self.by_param.get(&id)
    }

    pub fn len(&self) -> usize {
        self.by_param.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_param.is_empty()
    }
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

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    /// Value of a 1×1 node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[[0, 0]]
    }

    fn push(&mut self, value: Mat, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dim()
    }

    pub fn constant(&mut self, value: Mat) -> Var {
        self.push(value, Op::Const, false)
    }

    pub fn param(&mut self, id: ParamId, value: Mat) -> Var {
        self.push(value, Op::Param(id), true)
    }

    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).dot(&self.value(b).t());
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::MatMulT(a, b), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        debug_assert_eq!(self.shape(a), self.shape(b));
        let value = self.value(a) + self.value(b);
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::Add(a, b), rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        debug_assert_eq!(self.shape(a), self.shape(b));
        let value = self.value(a) - self.value(b);
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::Sub(a, b), rg)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        debug_assert_eq!(self.shape(a), self.shape(b));
        let value = self.value(a) * self.value(b);
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::Mul(a, b), rg)
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        debug_assert_eq!(self.shape(row).0, 1);
        let value = self.value(a) + self.value(row);
        let rg = self.rg(a) || self.rg(row);
        self.push(value, Op::AddRow(a, row), rg)
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let value = self.value(a) * k;
        let rg = self.rg(a);
        self.push(value, Op::Scale(a, k), rg)
    }

    pub fn add_scalar(&mut self, a: Var, k: f64) -> Var {
        let value = self.value(a) + k;
        let rg = self.rg(a);
        self.push(value, Op::AddScalar(a), rg)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(f64::tanh);
        let rg = self.rg(a);
        self.push(value, Op::Tanh(a), rg)
    }

    /// `rows × h` matrix whose every row is column `j` of the `h × d` matrix `w`.
    pub fn column_rows(&mut self, w: Var, j: usize, rows: usize) -> Var {
        let col = self.value(w).column(j).to_owned();
        let value = col
            .insert_axis(Axis(0))
            .broadcast((rows, self.shape(w).0))
            .expect("broadcast")
            .to_owned();
        let rg = self.rg(w);
        self.push(value, Op::ColumnRows(w, j), rg)
    }

    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let value = ndarray::concatenate(Axis(1), &views).expect("concat rows must agree");
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(value, Op::Concat(parts.to_vec()), rg)
    }

    pub fn column(&mut self, a: Var, j: usize) -> Var {
        let value = self.value(a).slice(s![.., j..j + 1]).to_owned();
        let rg = self.rg(a);
        self.push(value, Op::Column(a, j), rg)
    }

    pub fn sum_squares(&mut self, a: Var) -> Var {
        let v = self.value(a).iter().map(|x| x * x).sum::<f64>();
        let rg = self.rg(a);
        self.push(Mat::from_elem((1, 1), v), Op::SumSquares(a), rg)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = self.value(a).sum();
        let rg = self.rg(a);
        self.push(Mat::from_elem((1, 1), v), Op::Sum(a), rg)
    }

    /// Gradient of the scalar `loss` with respect to every parameter node
    /// it depends on.
    pub fn backward(&self, loss: Var) -> Result<Gradients, AutodiffError> {
        let (r, c) = self.shape(loss);
        if (r, c) != (1, 1) {
            return Err(AutodiffError::NonScalarLoss { rows: r, cols: c });
        }
        let mut grads: Vec<Option<Mat>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Mat::from_elem((1, 1), 1.0));
        let mut out = Gradients::default();

        fn acc(grads: &mut [Option<Mat>], v: Var, g: Mat) {
            match &mut grads[v.0] {
                Some(existing) => *existing += &g,
                slot @ None => *slot = Some(g),
            }
        }

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            match &node.op {
                Op::Const => {}
                Op::Param(id) => match out.by_param.get_mut(id) {
                    Some(existing) => *existing += &g,
                    None => {
                        out.by_param.insert(*id, g);
                    }
                },
                Op::MatMulT(a, b) => {
                    if self.rg(*a) {
                        acc(&mut grads, *a, g.dot(self.value(*b)));
                    }
                    if self.rg(*b) {
                        acc(&mut grads, *b, g.t().dot(self.value(*a)));
                    }
                }
                Op::Add(a, b) => {
                    if self.rg(*a) {
                        acc(&mut grads, *a, g.clone());
                    }
                    if self.rg(*b) {
                        acc(&mut grads, *b, g);
                    }
                }
                Op::Sub(a, b) => {
                    if self.rg(*a) {
                        acc(&mut grads, *a, g.clone());
                    }
                    if self.rg(*b) {
                        acc(&mut grads, *b, -g);
                    }
                }
                Op::Mul(a, b) => {
                    if self.rg(*a) {
                        acc(&mut grads, *a, &g * self.value(*b));
                    }
                    if self.rg(*b) {
                        acc(&mut grads, *b, &g * self.value(*a));
                    }
                }
                Op::AddRow(a, row) => {
                    if self.rg(*row) {
                        acc(&mut grads, *row, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    }
                    if self.rg(*a) {
                        acc(&mut grads, *a, g);
                    }
                }
                Op::Scale(a, k) => acc(&mut grads, *a, g * *k),
                Op::AddScalar(a) => acc(&mut grads, *a, g),
                Op::Tanh(a) => {
                    let y = &node.value;
                    let mut d = g;
                    d.zip_mut_with(y, |gv, &yv| *gv *= 1.0 - yv * yv);
                    acc(&mut grads, *a, d);
                }
                Op::ColumnRows(w, j) => {
                    let (h, d) = self.shape(*w);
                    let mut dw = Mat::zeros((h, d));
                    let colsum = g.sum_axis(Axis(0));
                    dw.column_mut(*j).assign(&colsum);
                    acc(&mut grads, *w, dw);
                }
                Op::Concat(parts) => {
                    let mut start = 0;
                    for &p in parts {
                        let width = self.shape(p).1;
                        if self.rg(p) {
                            acc(&mut grads, p, g.slice(s![.., start..start + width]).to_owned());
                        }
                        start += width;
                    }
                }
                Op::Column(a, j) => {
                    let mut d = Mat::zeros(self.shape(*a));
                    d.slice_mut(s![.., *j..*j + 1]).assign(&g);
                    acc(&mut grads, *a, d);
                }
                Op::SumSquares(a) => {
                    let k = 2.0 * g[[0, 0]];
                    acc(&mut grads, *a, self.value(*a) * k);
                }
                Op::Sum(a) => {
                    acc(&mut grads, *a, Mat::from_elem(self.shape(*a), g[[0, 0]]));
                }
            }
        }
        Ok(out)
    }
}
