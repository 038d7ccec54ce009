//! Dense row-major tensors with label-based index contraction.
//!
//! Every indexed object in the geometry pipeline (points, Jacobians, metrics,
//! Christoffel symbols, curvature tensors) is stored as a [`Tensor`]: a shape
//! vector plus a flat row-major `Vec<f64>`. Index expressions are written as
//! einsum-style label strings (`"ik,kj->ij"`), so the appendix-level formulas
//! transcribe one-to-one into [`contract`] calls.
//!
//! Elements are fixed at `f64`: curvature assembly cancels third-derivative
//! terms that single precision cannot resolve.

use crate::error::{Error, Result};

/// Dense multi-index array of 64-bit floats, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Builds a tensor from literal data, validating extents and finiteness.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.iter().any(|&e| e == 0) {
            return Err(Error::shape("zero extent in shape"));
        }
        let expect: usize = shape.iter().product();
        if expect != data.len() {
            return Err(Error::shape(format!(
                "shape {:?} implies {} entries, got {}",
                shape,
                expect,
                data.len()
            )));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite {
                context: "tensor literal".into(),
            });
        }
        Ok(Tensor { shape, data })
    }

    /// All-zeros tensor of the given shape. Internal ops use this freely;
    /// zero extents are still rejected.
    pub fn zeros(shape: &[usize]) -> Self {
        let n: usize = shape.iter().product();
        assert!(shape.iter().all(|&e| e > 0), "zero extent in shape");
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    /// Rank-0 tensor holding one value.
    pub fn scalar(v: f64) -> Self {
        Tensor {
            shape: vec![],
            data: vec![v],
        }
    }

    /// 1-D tensor from a slice.
    pub fn vector(v: &[f64]) -> Result<Self> {
        Tensor::new(vec![v.len()], v.to_vec())
    }

    /// 2-D tensor from nested rows; rows must be equally long.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::shape("empty row list"));
        }
        let cols = rows[0].len();
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::shape("ragged rows"));
        }
        let data: Vec<f64> = rows.iter().flatten().copied().collect();
        Tensor::new(vec![rows.len(), cols], data)
    }

    /// Identity matrix of extent `n`.
    pub fn identity(n: usize) -> Self {
        let mut t = Tensor::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Value of a rank-0 or single-entry tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.data.len(), 1, "item() on tensor with {} entries", self.data.len());
        self.data[0]
    }

    /// Multi-index read; length of `idx` must equal the rank.
    pub fn at(&self, idx: &[usize]) -> f64 {
        self.data[self.flat_index(idx)]
    }

    /// Multi-index write.
    pub fn set(&mut self, idx: &[usize], v: f64) {
        let f = self.flat_index(idx);
        self.data[f] = v;
    }

    fn flat_index(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.shape.len());
        let mut f = 0;
        for (d, (&i, &e)) in idx.iter().zip(&self.shape).enumerate() {
            debug_assert!(i < e, "index {} out of range at axis {}", i, d);
            f = f * e + i;
        }
        f
    }

    /// Row-major strides for this shape.
    pub(crate) fn strides(&self) -> Vec<usize> {
        strides_of(&self.shape)
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.data.iter()
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Entrywise map into a new tensor.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

pub(crate) fn strides_of(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1usize; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Elementwise binary operation kinds for [`elementwise`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElemOp {
    Add,
    Sub,
    Mul,
    Pow,
}

/// Scalar-or-tensor right operand for [`elementwise`].
#[derive(Debug, Clone, Copy)]
pub enum Operand<'a> {
    Scalar(f64),
    Tensor(&'a Tensor),
}

/// Entrywise arithmetic; shapes must match unless the right side is a scalar.
pub fn elementwise(a: &Tensor, b: Operand<'_>, op: ElemOp) -> Result<Tensor> {
    let apply = |x: f64, y: f64| match op {
        ElemOp::Add => x + y,
        ElemOp::Sub => x - y,
        ElemOp::Mul => x * y,
        ElemOp::Pow => x.powf(y),
    };
    match b {
        Operand::Scalar(s) => Ok(a.map(|v| apply(v, s))),
        Operand::Tensor(t) => {
            if t.shape != a.shape {
                return Err(Error::shape(format!(
                    "elementwise operands {:?} vs {:?}",
                    a.shape, t.shape
                )));
            }
            let data = a
                .data
                .iter()
                .zip(&t.data)
                .map(|(&x, &y)| apply(x, y))
                .collect();
            Ok(Tensor {
                shape: a.shape.clone(),
                data,
            })
        }
    }
}

/// Parsed contraction spec: per-operand index labels and output labels.
///
/// Follows the Einstein convention: a label repeated across the inputs is
/// summed; output labels name the free indices of the result.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContractionSpec {
    inputs: Vec<Vec<u8>>,
    output: Vec<u8>,
}

impl ContractionSpec {
    /// Parses a spec string such as `"ik,kj->ij"` or `"ii->"`.
    pub fn parse(spec: &str) -> Result<Self> {
        let s = spec.as_bytes();
        let arrow = spec
            .find("->")
            .ok_or_else(|| Error::spec(format!("missing `->` in `{spec}`")))?;
        let mut inputs = vec![Vec::new()];
        for &c in &s[..arrow] {
            match c {
                b',' => inputs.push(Vec::new()),
                c if c.is_ascii_alphabetic() => inputs.last_mut().unwrap().push(c),
                c => {
                    return Err(Error::spec(format!(
                        "invalid label byte `{}` in `{spec}`",
                        c as char
                    )))
                }
            }
        }
        let mut output = Vec::new();
        for &c in &s[arrow + 2..] {
            if !c.is_ascii_alphabetic() {
                return Err(Error::spec(format!(
                    "invalid output label `{}` in `{spec}`",
                    c as char
                )));
            }
            output.push(c);
        }
        if inputs.len() > 1 && inputs.iter().any(|i| i.is_empty()) {
            return Err(Error::spec(format!("empty operand in `{spec}`")));
        }
        let parsed = ContractionSpec { inputs, output };
        parsed.validate()?;
        Ok(parsed)
    }

    pub fn num_operands(&self) -> usize {
        self.inputs.len()
    }

    pub(crate) fn inputs(&self) -> &[Vec<u8>] {
        &self.inputs
    }

    pub(crate) fn output(&self) -> &[u8] {
        &self.output
    }

    /// Enforces the strict Einstein convention of this crate's public API:
    /// a label occurs at most twice across the inputs; labels occurring twice
    /// are summed and may not appear in the output; output labels are distinct
    /// and drawn from exactly one operand.
    fn validate(&self) -> Result<()> {
        if self.inputs.len() > 2 {
            return Err(Error::spec("at most two operands supported"));
        }
        let mut counts = [0u8; 256];
        for op in &self.inputs {
            for &l in op {
                counts[l as usize] += 1;
            }
        }
        for l in 0u8..=255 {
            if counts[l as usize] > 2 {
                return Err(Error::spec(format!(
                    "label `{}` appears more than twice across inputs",
                    l as char
                )));
            }
        }
        let mut seen_out = [false; 256];
        for &l in &self.output {
            if seen_out[l as usize] {
                return Err(Error::spec(format!(
                    "output label `{}` repeated",
                    l as char
                )));
            }
            seen_out[l as usize] = true;
            if counts[l as usize] == 0 {
                return Err(Error::spec(format!(
                    "output label `{}` missing from inputs",
                    l as char
                )));
            }
            if counts[l as usize] == 2 {
                // Twice-repeated labels are summed over under the strict
                // convention and cannot survive into the output.
                return Err(Error::spec(format!(
                    "summed label `{}` cannot appear in output",
                    l as char
                )));
            }
        }
        Ok(())
    }
}

/// Generalized index contraction over one or two tensors.
///
/// Repeated labels are summed; output labels give the result shape in order.
/// The result is deterministic: a fixed odometer iteration order makes the
/// floating-point sum independent of the call site.
pub fn contract(a: &Tensor, b: Option<&Tensor>, spec: &ContractionSpec) -> Result<Tensor> {
    let ops: Vec<&Tensor> = match b {
        Some(b) => vec![a, b],
        None => vec![a],
    };
    if ops.len() != spec.num_operands() {
        return Err(Error::spec(format!(
            "spec names {} operands, got {}",
            spec.num_operands(),
            ops.len()
        )));
    }
    let labels: Vec<&[u8]> = spec.inputs.iter().map(|v| v.as_slice()).collect();
    einsum(&ops, &labels, &spec.output)
}

/// Permissive einsum kernel shared by [`contract`] and the autodiff graph.
///
/// Accepts labels repeated within an operand (diagonals/traces) and labels
/// shared by both operands and the output (zipped axes). Output labels must
/// appear in at least one input.
pub(crate) fn einsum(ops: &[&Tensor], in_labels: &[&[u8]], out_labels: &[u8]) -> Result<Tensor> {
    debug_assert_eq!(ops.len(), in_labels.len());
    // Gather distinct labels with extents, output labels first.
    let mut label_order: Vec<u8> = Vec::new();
    let mut extent = [0usize; 256];
    let mut push = |l: u8, e: usize, order: &mut Vec<u8>| -> Result<()> {
        if extent[l as usize] == 0 {
            extent[l as usize] = e;
            order.push(l);
            Ok(())
        } else if extent[l as usize] != e {
            Err(Error::shape(format!(
                "extent mismatch for label `{}`: {} vs {}",
                l as char, extent[l as usize], e
            )))
        } else {
            Ok(())
        }
    };
    for (op, labs) in ops.iter().zip(in_labels) {
        if op.rank() != labs.len() {
            return Err(Error::spec(format!(
                "operand rank {} does not match {} labels",
                op.rank(),
                labs.len()
            )));
        }
        for (&l, &e) in labs.iter().zip(op.shape()) {
            push(l, e, &mut label_order)?;
        }
    }
    for &l in out_labels {
        if extent[l as usize] == 0 {
            return Err(Error::spec(format!(
                "output label `{}` missing from inputs",
                l as char
            )));
        }
    }
    // Reorder: output labels first (in output order), then summed labels.
    let mut dims_order: Vec<u8> = out_labels.to_vec();
    for &l in &label_order {
        if !out_labels.contains(&l) {
            dims_order.push(l);
        }
    }
    let dims: Vec<usize> = dims_order.iter().map(|&l| extent[l as usize]).collect();
    let out_shape: Vec<usize> = out_labels.iter().map(|&l| extent[l as usize]).collect();

    // Per-operand stride per iterated label (repeats within an operand sum
    // their axis strides, which realizes diagonals).
    let n_dims = dims.len();
    let mut op_strides: Vec<Vec<usize>> = Vec::with_capacity(ops.len() + 1);
    for (op, labs) in ops.iter().zip(in_labels) {
        let axstr = op.strides();
        let mut per_label = vec![0usize; n_dims];
        for (ax, &l) in labs.iter().enumerate() {
            let d = dims_order.iter().position(|&x| x == l).unwrap();
            per_label[d] += axstr[ax];
        }
        op_strides.push(per_label);
    }
    // Output strides: zero on summed labels.
    {
        let ostr = strides_of(&out_shape);
        let mut per_label = vec![0usize; n_dims];
        for (ax, &l) in out_labels.iter().enumerate() {
            let d = dims_order.iter().position(|&x| x == l).unwrap();
            per_label[d] += ostr[ax];
        }
        op_strides.push(per_label);
    }

    let total: usize = dims.iter().product();
    let out_len: usize = out_shape.iter().product();
    let mut out = Tensor {
        shape: out_shape,
        data: vec![0.0; out_len],
    };

    // Odometer iteration with incrementally maintained flat offsets.
    let mut counters = vec![0usize; n_dims];
    let mut offsets = vec![0usize; ops.len() + 1];
    for _ in 0..total {
        let mut prod = 1.0;
        for (op, &off) in ops.iter().zip(&offsets) {
            prod *= op.data[off];
        }
        out.data[offsets[ops.len()]] += prod;

        // Advance the least-significant digit with carries.
        let mut d = n_dims;
        while d > 0 {
            d -= 1;
            counters[d] += 1;
            if counters[d] < dims[d] {
                for (k, strides) in op_strides.iter().enumerate() {
                    offsets[k] += strides[d];
                }
                break;
            }
            counters[d] = 0;
            for (k, strides) in op_strides.iter().enumerate() {
                offsets[k] -= strides[d] * (dims[d] - 1);
            }
        }
    }
    Ok(out)
}

/// Inverts a square matrix by Gauss-Jordan elimination with partial pivoting.
///
/// When `ridge > 0`, `g + ridge I` is inverted instead; learned metrics can
/// approach singularity early in training, and the ridge keeps those paths
/// alive. Verification paths call this with `ridge == 0`.
pub fn invert_matrix(g: &Tensor, ridge: f64) -> Result<Tensor> {
    if g.rank() != 2 || g.shape()[0] != g.shape()[1] {
        return Err(Error::shape(format!(
            "invert_matrix needs a square rank-2 tensor, got {:?}",
            g.shape()
        )));
    }
    let n = g.shape()[0];
    let mut a = vec![0.0f64; n * n];
    a.copy_from_slice(g.data());
    for i in 0..n {
        a[i * n + i] += ridge;
    }
    let mut inv = Tensor::identity(n);
    let mut max_pivot = 0.0f64;
    let mut min_pivot = f64::INFINITY;
    let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    for col in 0..n {
        // Partial pivot.
        let mut best = col;
        for r in col + 1..n {
            if a[r * n + col].abs() > a[best * n + col].abs() {
                best = r;
            }
        }
        if best != col {
            for c in 0..n {
                a.swap(col * n + c, best * n + c);
                inv.data.swap(col * n + c, best * n + c);
            }
        }
        let pivot = a[col * n + col];
        if pivot.abs() <= 1e-13 * scale {
            let cond = max_pivot / pivot.abs().max(1e-300);
            return Err(Error::Singular { cond });
        }
        max_pivot = max_pivot.max(pivot.abs());
        min_pivot = min_pivot.min(pivot.abs());
        let inv_pivot = 1.0 / pivot;
        for c in 0..n {
            a[col * n + c] *= inv_pivot;
            inv.data[col * n + c] *= inv_pivot;
        }
        for r in 0..n {
            if r == col {
                continue;
            }
            let factor = a[r * n + col];
            if factor == 0.0 {
                continue;
            }
            for c in 0..n {
                a[r * n + c] -= factor * a[col * n + c];
                inv.data[r * n + c] -= factor * inv.data[col * n + c];
            }
        }
    }
    let _ = min_pivot;
    Ok(inv)
}
