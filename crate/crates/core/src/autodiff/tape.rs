//! Reverse-mode tape over batched matrices.
//!
//! Every node holds a dense `rows × cols` value. Nodes are appended in
//! evaluation order, which is a topological order, so the backward pass is a
//! single reverse sweep over the node list.

use std::sync::OnceLock;

use ndarray::linalg::general_mat_mul;
use ndarray::{concatenate, s, Array2, ArrayView2, Axis, Zip};

use crate::error::{Error, Result};

/// Highest SiLU derivative order the tape can represent.
pub const MAX_SILU_ORDER: usize = 8;

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
    MatMul(NodeId, NodeId),
    /// Adds a `1 × n` row to every row of a `rows × n` matrix.
    AddRow(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    /// `order`-th derivative of SiLU applied elementwise.
    Silu {
        input: NodeId,
        order: usize,
    },
    Concat(Vec<NodeId>),
    Column(NodeId, usize),
    Sum(NodeId),
    SumSquares(NodeId),
}

struct Node {
    value: Array2<f64>,
    op: Op,
    requires_grad: bool,
}

pub struct Tape {
    nodes: Vec<Node>,
    activation_fault: f64,
}

/// Gradients of a scalar with respect to the tape's trainable leaves.
pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
}

impl Gradients {
    /// Gradient for `leaf`, or `None` if the loss does not depend on it.
    pub fn get(&self, leaf: NodeId) -> Option<&Array2<f64>> {
        self.grads.get(leaf.0).and_then(Option::as_ref)
    }
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            activation_fault: 1.0,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Scales every SiLU partial used by the backward pass. Exists only so
    /// tests can confirm that gradient checking detects a wrong partial.
    #[doc(hidden)]
    pub fn inject_activation_fault(&mut self, factor: f64) {
        self.activation_fault = factor;
    }

    pub fn value(&self, id: NodeId) -> &Array2<f64> {
        &self.nodes[id.0].value
    }

    /// The single entry of a `1 × 1` node.
    pub fn scalar(&self, id: NodeId) -> f64 {
        self.nodes[id.0].value[[0, 0]]
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn push(&mut self, value: Array2<f64>, op: Op, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Trainable input.
    pub fn param(&mut self, value: Array2<f64>) -> NodeId {
        self.push(value, Op::Leaf, true)
    }

    /// Input that receives no gradient.
    pub fn constant(&mut self, value: Array2<f64>) -> NodeId {
        self.push(value, Op::Leaf, false)
    }

    fn any_grad(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].requires_grad)
    }

    fn same_shape(&self, a: NodeId, b: NodeId) {
        assert_eq!(
            self.value(a).dim(),
            self.value(b).dim(),
            "elementwise operands differ in shape"
        );
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let value = self.value(a).dot(self.value(b));
        let rg = self.any_grad(&[a, b]);
        self.push(value, Op::MatMul(a, b), rg)
    }

    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> NodeId {
        assert_eq!(self.value(row).nrows(), 1, "bias must be a single row");
        let value = self.value(a) + self.value(row);
        let rg = self.any_grad(&[a, row]);
        self.push(value, Op::AddRow(a, row), rg)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.same_shape(a, b);
        let value = self.value(a) + self.value(b);
        let rg = self.any_grad(&[a, b]);
        self.push(value, Op::Add(a, b), rg)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.same_shape(a, b);
        let value = self.value(a) - self.value(b);
        let rg = self.any_grad(&[a, b]);
        self.push(value, Op::Sub(a, b), rg)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.same_shape(a, b);
        let value = self.value(a) * self.value(b);
        let rg = self.any_grad(&[a, b]);
        self.push(value, Op::Mul(a, b), rg)
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let value = self.value(a) * c;
        let rg = self.any_grad(&[a]);
        self.push(value, Op::Scale(a, c), rg)
    }

    pub fn silu(&mut self, a: NodeId) -> NodeId {
        self.silu_derivative(a, 0)
    }

    /// Elementwise `order`-th derivative of `x·sigmoid(x)`.
    pub fn silu_derivative(&mut self, a: NodeId, order: usize) -> NodeId {
        assert!(
            order < MAX_SILU_ORDER,
            "SiLU derivative order {order} too high"
        );
        let value = self.value(a).mapv(|x| silu_nth(order, x));
        let rg = self.any_grad(&[a]);
        self.push(value, Op::Silu { input: a, order }, rg)
    }

    /// Column-wise concatenation of nodes with equal row counts.
    pub fn concat(&mut self, parts: &[NodeId]) -> NodeId {
        let views: Vec<ArrayView2<f64>> = parts.iter().map(|p| self.value(*p).view()).collect();
        let value = concatenate(Axis(1), &views).expect("concatenated nodes differ in rows");
        let rg = self.any_grad(parts);
        self.push(value, Op::Concat(parts.to_vec()), rg)
    }

    /// Column `j` as a `rows × 1` node.
    pub fn column(&mut self, a: NodeId, j: usize) -> NodeId {
        let value = self.value(a).slice(s![.., j..j + 1]).to_owned();
        let rg = self.any_grad(&[a]);
        self.push(value, Op::Column(a, j), rg)
    }

    /// Sum of all entries as a `1 × 1` node.
    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let value = Array2::from_elem((1, 1), self.value(a).sum());
        let rg = self.any_grad(&[a]);
        self.push(value, Op::Sum(a), rg)
    }

    /// Sum of squared entries as a `1 × 1` node.
    pub fn sum_squares(&mut self, a: NodeId) -> NodeId {
        let value = Array2::from_elem((1, 1), self.value(a).iter().map(|v| v * v).sum());
        let rg = self.any_grad(&[a]);
        self.push(value, Op::SumSquares(a), rg)
    }

    /// Reverse accumulation from a `1 × 1` loss node.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        let dim = self.value(loss).dim();
        if dim != (1, 1) {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got a {}x{} node",
                dim.0, dim.1
            )));
        }
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; loss.0 + 1];
        if !self.nodes[loss.0].requires_grad {
            return Ok(Gradients { grads });
        }
        grads[loss.0] = Some(Array2::ones((1, 1)));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else {
                continue;
            };
            self.propagate(node, &g, &mut grads);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, g: &Array2<f64>, grads: &mut [Option<Array2<f64>>]) {
        let wants = |id: NodeId| self.nodes[id.0].requires_grad;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if wants(*a) {
                    let bv = self.value(*b);
                    let slot = slot(grads, *a, self.value(*a).dim());
                    general_mat_mul(1.0, g, &bv.t(), 1.0, slot);
                }
                if wants(*b) {
                    let av = self.value(*a);
                    let slot = slot(grads, *b, self.value(*b).dim());
                    general_mat_mul(1.0, &av.t(), g, 1.0, slot);
                }
            }
            Op::AddRow(a, row) => {
                if wants(*a) {
                    *slot(grads, *a, g.dim()) += g;
                }
                if wants(*row) {
                    let n = g.ncols();
                    let summed = g.sum_axis(Axis(0)).into_shape_with_order((1, n)).unwrap();
                    *slot(grads, *row, (1, n)) += &summed;
                }
            }
            Op::Add(a, b) => {
                if wants(*a) {
                    *slot(grads, *a, g.dim()) += g;
                }
                if wants(*b) {
                    *slot(grads, *b, g.dim()) += g;
                }
            }
            Op::Sub(a, b) => {
                if wants(*a) {
                    *slot(grads, *a, g.dim()) += g;
                }
                if wants(*b) {
                    *slot(grads, *b, g.dim()) -= g;
                }
            }
            Op::Mul(a, b) => {
                if wants(*a) {
                    let other = self.value(*b);
                    let s = slot(grads, *a, g.dim());
                    Zip::from(s)
                        .and(g)
                        .and(other)
                        .for_each(|s, &g, &o| *s += g * o);
                }
                if wants(*b) {
                    let other = self.value(*a);
                    let s = slot(grads, *b, g.dim());
                    Zip::from(s)
                        .and(g)
                        .and(other)
                        .for_each(|s, &g, &o| *s += g * o);
                }
            }
            Op::Scale(a, c) => {
                if wants(*a) {
                    let s = slot(grads, *a, g.dim());
                    s.scaled_add(*c, g);
                }
            }
            Op::Silu { input, order } => {
                if wants(*input) {
                    let fault = self.activation_fault;
                    let next = order + 1;
                    let x = self.value(*input);
                    let s = slot(grads, *input, g.dim());
                    Zip::from(s)
                        .and(g)
                        .and(x)
                        .for_each(|s, &g, &x| *s += g * fault * silu_nth(next, x));
                }
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                for p in parts {
                    let width = self.value(*p).ncols();
                    if wants(*p) {
                        let piece = g.slice(s![.., offset..offset + width]);
                        *slot(grads, *p, piece.dim()) += &piece;
                    }
                    offset += width;
                }
            }
            Op::Column(a, j) => {
                if wants(*a) {
                    let s = slot(grads, *a, self.value(*a).dim());
                    let mut col = s.slice_mut(s![.., *j..*j + 1]);
                    col += g;
                }
            }
            Op::Sum(a) => {
                if wants(*a) {
                    let c = g[[0, 0]];
                    let s = slot(grads, *a, self.value(*a).dim());
                    s.mapv_inplace(|v| v + c);
                }
            }
            Op::SumSquares(a) => {
                if wants(*a) {
                    let c = 2.0 * g[[0, 0]];
                    let s = slot(grads, *a, self.value(*a).dim());
                    s.scaled_add(c, self.value(*a));
                }
            }
        }
    }
}

fn slot(grads: &mut [Option<Array2<f64>>], id: NodeId, dim: (usize, usize)) -> &mut Array2<f64> {
    grads[id.0].get_or_insert_with(|| Array2::zeros(dim))
}

/// Power-basis coefficients of `Pₙ` with `σ⁽ⁿ⁾(x) = Pₙ(σ(x))`, built from
/// `P₀(s) = s` and `Pₙ₊₁(s) = Pₙ'(s)·(s − s²)`.
fn sigmoid_polynomials() -> &'static [Vec<f64>] {
    static TABLE: OnceLock<Vec<Vec<f64>>> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut table = vec![vec![0.0, 1.0]];
        for n in 0..MAX_SILU_ORDER {
            let p = &table[n];
            let deriv: Vec<f64> = (1..p.len()).map(|k| k as f64 * p[k]).collect();
            let mut next = vec![0.0; deriv.len() + 2];
            for (k, c) in deriv.iter().enumerate() {
                next[k + 1] += c;
                next[k + 2] -= c;
            }
            table.push(next);
        }
        table
    })
}

fn sigmoid_nth(order: usize, s: f64) -> f64 {
    sigmoid_polynomials()[order]
        .iter()
        .rev()
        .fold(0.0, |acc, c| acc * s + c)
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `dⁿ/dxⁿ [x·σ(x)] = x·σ⁽ⁿ⁾(x) + n·σ⁽ⁿ⁻¹⁾(x)`.
pub fn silu_nth(order: usize, x: f64) -> f64 {
    let s = sigmoid(x);
    if order == 0 {
        x * s
    } else {
        x * sigmoid_nth(order, s) + order as f64 * sigmoid_nth(order - 1, s)
    }
}
