//! Tensor-level reverse-mode automatic differentiation.
//!
//! A [`Graph`] records coarse tensor operations (einsum contractions,
//! elementwise arithmetic, activation derivatives, matrix inversion) and
//! replays them in reverse to accumulate exact gradients. The geometry
//! pipeline and every loss term are expressed through this one op set, so the
//! analytic formulas exist in a single place: plain evaluation reads forward
//! values, training reads leaf gradients.
//!
//! The einsum vector-Jacobian rule used here (swap the differentiated operand
//! with the output and reuse the labels) is valid only when no label repeats
//! within an operand and every operand label appears elsewhere in the spec;
//! recording asserts both.

use crate::error::{Error, Result};
use crate::net::{act_scalar, ActivationKind};
use crate::tensor::{einsum, invert_matrix, strides_of, Tensor};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Einsum2 { spec: &'static str, a: Var, b: Var },
    Einsum1 { spec: &'static str, a: Var },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Scale { a: Var, c: f64 },
    AddRow { mat: Var, vec: Var },
    Row { mat: Var, r: usize },
    Gather { mat: Var, rows: Vec<usize> },
    Reshape { a: Var },
    Activation { a: Var, act: ActivationKind, order: u8 },
    Invert { a: Var, ridge: f64 },
    Clip { a: Var, bound: f64 },
    MeanSq { a: Var, b: Var },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Arena of recorded tensor operations.
pub struct Graph {
    nodes: Vec<Node>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

fn split_spec(spec: &'static str) -> (Vec<&'static [u8]>, &'static [u8]) {
    let bytes = spec.as_bytes();
    let arrow = spec.find("->").expect("einsum spec must contain ->");
    let inputs: Vec<&[u8]> = bytes[..arrow].split(|&c| c == b',').collect();
    (inputs, &bytes[arrow + 2..])
}

fn assert_no_intra_repeats(spec: &'static str, inputs: &[&[u8]]) {
    for labs in inputs {
        for (i, l) in labs.iter().enumerate() {
            assert!(
                !labs[i + 1..].contains(l),
                "label repeated within operand in `{spec}`"
            );
        }
    }
}

/// The swap-rule VJP for binary einsum additionally needs every operand
/// label to appear in the other operand or the output.
fn assert_vjp_safe(spec: &'static str, inputs: &[&[u8]], out: &[u8]) {
    assert_no_intra_repeats(spec, inputs);
    for (k, labs) in inputs.iter().enumerate() {
        for l in labs.iter() {
            let elsewhere = out.contains(l)
                || inputs
                    .iter()
                    .enumerate()
                    .any(|(j, other)| j != k && other.contains(l));
            assert!(elsewhere, "dangling summed label in `{spec}`");
        }
    }
}

/// Broadcast `src` (labelled `src_labels`) into the index space of
/// `dst_labels` with extents `dst_shape`; labels absent from `src` broadcast.
fn spread(src: &Tensor, src_labels: &[u8], dst_labels: &[u8], dst_shape: &[usize]) -> Tensor {
    let src_strides = strides_of(src.shape());
    let mut per_axis_stride = vec![0usize; dst_labels.len()];
    for (ax, l) in dst_labels.iter().enumerate() {
        if let Some(p) = src_labels.iter().position(|s| s == l) {
            per_axis_stride[ax] = src_strides[p];
        }
    }
    let mut out = Tensor::zeros(dst_shape);
    let n = dst_shape.len();
    let mut counters = vec![0usize; n];
    let mut src_off = 0usize;
    let total: usize = dst_shape.iter().product();
    let data = out.data_mut();
    let src_data = src.data();
    for flat in 0..total {
        data[flat] = src_data[src_off];
        let mut d = n;
        while d > 0 {
            d -= 1;
            counters[d] += 1;
            if counters[d] < dst_shape[d] {
                src_off += per_axis_stride[d];
                break;
            }
            counters[d] = 0;
            src_off -= per_axis_stride[d] * (dst_shape[d] - 1);
        }
    }
    out
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn requires(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Inserts a differentiable leaf (a model parameter).
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Inserts a non-differentiable leaf (data, masks, fixed matrices).
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn scalar_const(&mut self, v: f64) -> Var {
        self.constant(Tensor::scalar(v))
    }

    /// Binary einsum contraction.
    pub fn einsum2(&mut self, spec: &'static str, a: Var, b: Var) -> Var {
        let (inputs, out) = split_spec(spec);
        debug_assert_eq!(inputs.len(), 2, "einsum2 spec `{spec}`");
        assert_vjp_safe(spec, &inputs, out);
        let value = einsum(
            &[self.value(a), self.value(b)],
            &[inputs[0], inputs[1]],
            out,
        )
        .expect("einsum2 shapes checked by caller");
        let rg = self.requires(a) || self.requires(b);
        self.push(value, Op::Einsum2 { spec, a, b }, rg)
    }

    /// Unary einsum: permutations and partial sums.
    pub fn einsum1(&mut self, spec: &'static str, a: Var) -> Var {
        let (inputs, out) = split_spec(spec);
        debug_assert_eq!(inputs.len(), 1, "einsum1 spec `{spec}`");
        assert_no_intra_repeats(spec, &inputs);
        let _ = out;
        let value = einsum(&[self.value(a)], &[inputs[0]], out)
            .expect("einsum1 shapes checked by caller");
        let rg = self.requires(a);
        self.push(value, Op::Einsum1 { spec, a }, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.value(a).shape(), self.value(b).shape());
        let data = self
            .value(a)
            .iter()
            .zip(self.value(b).iter())
            .map(|(x, y)| x + y)
            .collect();
        let value = raw(self.value(a).shape(), data);
        let rg = self.requires(a) || self.requires(b);
        self.push(value, Op::Add { a, b }, rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.value(a).shape(), self.value(b).shape());
        let data = self
            .value(a)
            .iter()
            .zip(self.value(b).iter())
            .map(|(x, y)| x - y)
            .collect();
        let value = raw(self.value(a).shape(), data);
        let rg = self.requires(a) || self.requires(b);
        self.push(value, Op::Sub { a, b }, rg)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.value(a).shape(), self.value(b).shape());
        let data = self
            .value(a)
            .iter()
            .zip(self.value(b).iter())
            .map(|(x, y)| x * y)
            .collect();
        let value = raw(self.value(a).shape(), data);
        let rg = self.requires(a) || self.requires(b);
        self.push(value, Op::Mul { a, b }, rg)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).map(|v| v * c);
        let rg = self.requires(a);
        self.push(value, Op::Scale { a, c }, rg)
    }

    /// Broadcast row addition: `out[r, i] = mat[r, i] + vec[i]`.
    pub fn add_row(&mut self, mat: Var, vec: Var) -> Var {
        let m = self.value(mat);
        let v = self.value(vec);
        assert_eq!(m.rank(), 2);
        assert_eq!(v.shape(), &[m.shape()[1]]);
        let cols = m.shape()[1];
        let data = m
            .iter()
            .enumerate()
            .map(|(i, &x)| x + v.data()[i % cols])
            .collect();
        let value = raw(m.shape(), data);
        let rg = self.requires(mat) || self.requires(vec);
        self.push(value, Op::AddRow { mat, vec }, rg)
    }

    /// Extracts row `r` of a matrix as a vector.
    pub fn row(&mut self, mat: Var, r: usize) -> Var {
        let m = self.value(mat);
        assert_eq!(m.rank(), 2);
        let cols = m.shape()[1];
        let value = raw(&[cols], m.data()[r * cols..(r + 1) * cols].to_vec());
        let rg = self.requires(mat);
        self.push(value, Op::Row { mat, r }, rg)
    }

    /// Gathers a subset of rows of a matrix.
    pub fn gather_rows(&mut self, mat: Var, rows: Vec<usize>) -> Var {
        let m = self.value(mat);
        assert_eq!(m.rank(), 2);
        let cols = m.shape()[1];
        let mut data = Vec::with_capacity(rows.len() * cols);
        for &r in &rows {
            data.extend_from_slice(&m.data()[r * cols..(r + 1) * cols]);
        }
        let value = raw(&[rows.len(), cols], data);
        let rg = self.requires(mat);
        self.push(value, Op::Gather { mat, rows }, rg)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Var {
        let t = self.value(a);
        assert_eq!(t.len(), shape.iter().product::<usize>());
        let value = raw(shape, t.data().to_vec());
        let rg = self.requires(a);
        self.push(value, Op::Reshape { a }, rg)
    }

    /// Entrywise activation derivative of the given order (0..=3).
    pub fn activation(&mut self, a: Var, act: ActivationKind, order: u8) -> Var {
        assert!(order <= 3, "activation order {order} not differentiable");
        let value = self.value(a).map(|v| act_scalar(act, v, order));
        let rg = self.requires(a);
        self.push(value, Op::Activation { a, act, order }, rg)
    }

    /// Matrix inverse of `a + ridge I`.
    pub fn invert(&mut self, a: Var, ridge: f64) -> Result<Var> {
        let value = invert_matrix(self.value(a), ridge)?;
        let rg = self.requires(a);
        Ok(self.push(value, Op::Invert { a, ridge }, rg))
    }

    /// Clamp to `[-bound, bound]`; gradient is zero outside the open interval.
    pub fn clip(&mut self, a: Var, bound: f64) -> Var {
        let value = self.value(a).map(|v| v.clamp(-bound, bound));
        let rg = self.requires(a);
        self.push(value, Op::Clip { a, bound }, rg)
    }

    /// Mean squared difference over all entries; returns a rank-0 scalar.
    pub fn mean_sq(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.value(a).shape(), self.value(b).shape());
        let n = self.value(a).len() as f64;
        let s: f64 = self
            .value(a)
            .iter()
            .zip(self.value(b).iter())
            .map(|(x, y)| (x - y) * (x - y))
            .sum();
        let rg = self.requires(a) || self.requires(b);
        self.push(Tensor::scalar(s / n), Op::MeanSq { a, b }, rg)
    }

    /// Sums a list of scalar vars (empty list yields constant 0).
    pub fn sum_scalars(&mut self, vars: &[Var]) -> Var {
        match vars.split_first() {
            None => self.scalar_const(0.0),
            Some((&first, rest)) => {
                let mut acc = first;
                for &v in rest {
                    acc = self.add(acc, v);
                }
                acc
            }
        }
    }

    /// Reverse pass from a scalar root; returns one gradient slot per node.
    pub fn backward(&self, root: Var) -> Vec<Option<Tensor>> {
        assert_eq!(self.value(root).len(), 1, "backward needs a scalar root");
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(raw(self.value(root).shape(), vec![1.0]));

        for i in (0..=root.0).rev() {
            let grad_out = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            if !self.nodes[i].requires_grad {
                continue;
            }
            match &self.nodes[i].op {
                Op::Leaf => {
                    grads[i] = Some(grad_out);
                    continue;
                }
                Op::Einsum2 { spec, a, b } => {
                    let (inputs, out) = split_spec(spec);
                    if self.requires(*a) {
                        let g = einsum(
                            &[&grad_out, self.value(*b)],
                            &[out, inputs[1]],
                            inputs[0],
                        )
                        .expect("vjp einsum");
                        accum(&mut grads[a.0], g);
                    }
                    if self.requires(*b) {
                        let g = einsum(
                            &[&grad_out, self.value(*a)],
                            &[out, inputs[0]],
                            inputs[1],
                        )
                        .expect("vjp einsum");
                        accum(&mut grads[b.0], g);
                    }
                }
                Op::Einsum1 { spec, a } => {
                    if self.requires(*a) {
                        let (inputs, out) = split_spec(spec);
                        let g = spread(&grad_out, out, inputs[0], self.value(*a).shape());
                        accum(&mut grads[a.0], g);
                    }
                }
                Op::Add { a, b } => {
                    if self.requires(*a) {
                        accum(&mut grads[a.0], grad_out.clone());
                    }
                    if self.requires(*b) {
                        accum(&mut grads[b.0], grad_out);
                    }
                }
                Op::Sub { a, b } => {
                    if self.requires(*a) {
                        accum(&mut grads[a.0], grad_out.clone());
                    }
                    if self.requires(*b) {
                        accum(&mut grads[b.0], grad_out.map(|v| -v));
                    }
                }
                Op::Mul { a, b } => {
                    if self.requires(*a) {
                        let g = raw(
                            grad_out.shape(),
                            grad_out
                                .iter()
                                .zip(self.value(*b).iter())
                                .map(|(g, y)| g * y)
                                .collect(),
                        );
                        accum(&mut grads[a.0], g);
                    }
                    if self.requires(*b) {
                        let g = raw(
                            grad_out.shape(),
                            grad_out
                                .iter()
                                .zip(self.value(*a).iter())
                                .map(|(g, x)| g * x)
                                .collect(),
                        );
                        accum(&mut grads[b.0], g);
                    }
                }
                Op::Scale { a, c } => {
                    if self.requires(*a) {
                        accum(&mut grads[a.0], grad_out.map(|v| v * c));
                    }
                }
                Op::AddRow { mat, vec } => {
                    if self.requires(*mat) {
                        accum(&mut grads[mat.0], grad_out.clone());
                    }
                    if self.requires(*vec) {
                        let cols = self.value(*vec).len();
                        let mut g = vec![0.0; cols];
                        for (i, &v) in grad_out.iter().enumerate() {
                            g[i % cols] += v;
                        }
                        accum(&mut grads[vec.0], raw(&[cols], g));
                    }
                }
                Op::Row { mat, r } => {
                    if self.requires(*mat) {
                        let shape = self.value(*mat).shape().to_vec();
                        let cols = shape[1];
                        let mut g = Tensor::zeros(&shape);
                        g.data_mut()[r * cols..(r + 1) * cols].copy_from_slice(grad_out.data());
                        accum(&mut grads[mat.0], g);
                    }
                }
                Op::Gather { mat, rows } => {
                    if self.requires(*mat) {
                        let shape = self.value(*mat).shape().to_vec();
                        let cols = shape[1];
                        let mut g = Tensor::zeros(&shape);
                        for (k, &r) in rows.iter().enumerate() {
                            for c in 0..cols {
                                g.data_mut()[r * cols + c] += grad_out.data()[k * cols + c];
                            }
                        }
                        accum(&mut grads[mat.0], g);
                    }
                }
                Op::Reshape { a } => {
                    if self.requires(*a) {
                        let g = raw(self.value(*a).shape(), grad_out.data().to_vec());
                        accum(&mut grads[a.0], g);
                    }
                }
                Op::Activation { a, act, order } => {
                    if self.requires(*a) {
                        let g = raw(
                            grad_out.shape(),
                            grad_out
                                .iter()
                                .zip(self.value(*a).iter())
                                .map(|(g, &u)| g * act_scalar(*act, u, order + 1))
                                .collect(),
                        );
                        accum(&mut grads[a.0], g);
                    }
                }
                Op::Invert { a, ridge: _ } => {
                    if self.requires(*a) {
                        // d(A^{-1}) = -A^{-1} dA A^{-1}  =>  grad_A = -M^T G M^T
                        let m = &self.nodes[i].value;
                        let tmp = einsum(&[m, &grad_out], &[b"ji", b"jk"], b"ik").unwrap();
                        let g = einsum(&[&tmp, m], &[b"ik", b"lk"], b"il")
                            .unwrap()
                            .map(|v| -v);
                        accum(&mut grads[a.0], g);
                    }
                }
                Op::Clip { a, bound } => {
                    if self.requires(*a) {
                        let g = raw(
                            grad_out.shape(),
                            grad_out
                                .iter()
                                .zip(self.value(*a).iter())
                                .map(|(g, &v)| if v.abs() < *bound { *g } else { 0.0 })
                                .collect(),
                        );
                        accum(&mut grads[a.0], g);
                    }
                }
                Op::MeanSq { a, b } => {
                    let n = self.value(*a).len() as f64;
                    let s = grad_out.item() * 2.0 / n;
                    if self.requires(*a) || self.requires(*b) {
                        let diff: Vec<f64> = self
                            .value(*a)
                            .iter()
                            .zip(self.value(*b).iter())
                            .map(|(x, y)| s * (x - y))
                            .collect();
                        if self.requires(*a) {
                            accum(&mut grads[a.0], raw(self.value(*a).shape(), diff.clone()));
                        }
                        if self.requires(*b) {
                            accum(
                                &mut grads[b.0],
                                raw(self.value(*b).shape(), diff.iter().map(|v| -v).collect()),
                            );
                        }
                    }
                }
            }
        }
        grads
    }
}

/// Builds a tensor without the finiteness check; internal op outputs may
/// legitimately carry non-finite values that the training loop detects later.
fn raw(shape: &[usize], data: Vec<f64>) -> Tensor {
    debug_assert_eq!(shape.iter().product::<usize>(), data.len());
    let mut t = Tensor::zeros(shape);
    t.data_mut().copy_from_slice(&data);
    t
}

fn accum(slot: &mut Option<Tensor>, delta: Tensor) {
    match slot {
        None => *slot = Some(delta),
        Some(t) => {
            for (x, y) in t.data_mut().iter_mut().zip(delta.iter()) {
                *x += y;
            }
        }
    }
}
