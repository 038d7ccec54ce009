//! Analytic differential geometry of constant-width MLP maps.
//!
//! The pipeline runs: forward trace -> per-layer derivative blocks (Jacobian,
//! second, third derivative) -> higher-order chain-rule composition ->
//! pullback metric -> metric derivatives -> inverse metric -> Christoffel
//! symbols and their derivative -> Riemann tensor -> Ricci tensor and scalar.
//!
//! Every formula is emitted onto an [`autodiff::Graph`] exactly once; the
//! public functions here wrap a throwaway graph and read values, while the
//! training module reuses the same emitters to differentiate through the
//! whole pipeline.
//!
//! Index conventions, fixed throughout:
//! - `J[i, j]       = d out^i / d in^j`
//! - `H[i, k, j]    = d^2 out^i / d in^k d in^j` (symmetric in k, j)
//! - `T3[i, l, k, j] = d^3 out^i` (symmetric in l, k, j)
//! - `dg[k, i, j]   = d_k g_ij`
//! - `ddg[j, k, m, l] = d_j d_k g_ml`
//! - `gamma[i, j, k] = Gamma^i_jk` (symmetric in j, k)
//! - `dgamma[j, i, k, l] = d_j Gamma^i_kl`
//! - `riemann[i, l, j, k] = R^i_ljk` (antisymmetric in j, k)

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::net::{ActivationKind, DenseLayer, ForwardTrace, Mlp};
use crate::tensor::Tensor;

/// How the inverse metric is produced.
///
/// `Exact` inverts the pullback metric numerically; under it the curvature of
/// a pulled-back flat metric vanishes identically, which is the pipeline's
/// strongest correctness oracle. `Learned` follows the model architecture:
/// the inverse-transfer network's Jacobian builds `g^ij` directly, so the
/// Ricci scalar measures the inconsistency of the learned inverse and carries
/// a trainable signal.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InverseMode {
    Exact,
    Learned,
}

/// Composed derivatives of a constant-width map at one point.
#[derive(Debug, Clone)]
pub struct DerivativeStack {
    pub j: Tensor,
    pub h: Tensor,
    pub t3: Tensor,
}

/// Per-point metric state.
#[derive(Debug, Clone)]
pub struct MetricBundle {
    pub g: Tensor,
    pub g_inv: Tensor,
    pub dg: Tensor,
    pub ddg: Tensor,
    pub inverse_mode: InverseMode,
}

/// Per-point curvature state.
#[derive(Debug, Clone)]
pub struct CurvatureBundle {
    pub gamma: Tensor,
    pub dgamma: Tensor,
    pub riemann: Tensor,
    pub ricci: Tensor,
    pub scalar: f64,
}

// --- graph-side representation of an MLP ------------------------------------

pub(crate) struct LayerVar {
    pub w: Var,
    pub b: Var,
    pub act: ActivationKind,
}

pub(crate) struct MlpVars {
    pub layers: Vec<LayerVar>,
}

impl MlpVars {
    /// Inserts the network's parameters into the graph. `trainable` marks
    /// them as gradient leaves; constants are cheaper to evaluate.
    pub(crate) fn insert(g: &mut Graph, mlp: &Mlp, trainable: bool) -> MlpVars {
        let layers = mlp
            .layers
            .iter()
            .map(|l| {
                let (w, b) = if trainable {
                    (g.param(l.w.clone()), g.param(l.b.clone()))
                } else {
                    (g.constant(l.w.clone()), g.constant(l.b.clone()))
                };
                LayerVar { w, b, act: l.act }
            })
            .collect();
        MlpVars { layers }
    }
}

/// Composed J/H/T3 handles; `h`/`t3` present when the requested depth covers
/// them.
pub(crate) struct StackVars {
    pub j: Var,
    pub h: Option<Var>,
    pub t3: Option<Var>,
}

/// Forward through one layer on a vector: returns `(u, y)`.
fn emit_layer_forward(g: &mut Graph, layer: &LayerVar, x: Var) -> (Var, Var) {
    let wx = g.einsum2("ij,j->i", layer.w, x);
    let u = g.add(wx, layer.b);
    let y = g.activation(u, layer.act, 0);
    (u, y)
}

/// Per-layer derivative blocks at pre-activation `u`:
/// `J = f'(u^i) W^i_j`, `H = f''(u^i) W^i_k W^i_j`,
/// `T3 = f'''(u^i) W^i_l W^i_k W^i_j`.
fn emit_layer_blocks(g: &mut Graph, w: Var, act: ActivationKind, u: Var, depth: u8) -> StackVars {
    let d1 = g.activation(u, act, 1);
    let j = g.einsum2("i,ij->ij", d1, w);
    let mut h = None;
    let mut t3 = None;
    if depth >= 2 {
        let ww = g.einsum2("ik,ij->ikj", w, w);
        let d2 = g.activation(u, act, 2);
        h = Some(g.einsum2("i,ikj->ikj", d2, ww));
        if depth >= 3 {
            let www = g.einsum2("il,ikj->ilkj", w, ww);
            let d3 = g.activation(u, act, 3);
            t3 = Some(g.einsum2("i,ilkj->ilkj", d3, www));
        }
    }
    StackVars { j, h, t3 }
}

/// Chain rule for the composite `outer(inner(x))`, through third order.
fn emit_compose(g: &mut Graph, outer: &StackVars, inner: &StackVars, depth: u8) -> StackVars {
    let j = g.einsum2("ia,aj->ij", outer.j, inner.j);
    let mut h = None;
    let mut t3 = None;
    if depth >= 2 {
        let (ho, hi) = (outer.h.unwrap(), inner.h.unwrap());
        // H = Hf(Jg, Jg) + Jf Hg
        let t1 = g.einsum2("iba,bk->ika", ho, inner.j);
        let t2 = g.einsum2("ika,aj->ikj", t1, inner.j);
        let t3_ = g.einsum2("ia,akj->ikj", outer.j, hi);
        h = Some(g.add(t2, t3_));
        if depth >= 3 {
            let (to, ti) = (outer.t3.unwrap(), inner.t3.unwrap());
            // T3f(Jg, Jg, Jg)
            let s1 = g.einsum2("icba,cl->ilba", to, inner.j);
            let s2 = g.einsum2("ilba,bk->ilka", s1, inner.j);
            let s3 = g.einsum2("ilka,aj->ilkj", s2, inner.j);
            // Hf(Hg_lk, Jg_j)
            let a1 = g.einsum2("iba,blk->ilka", ho, hi);
            let a2 = g.einsum2("ilka,aj->ilkj", a1, inner.j);
            // Hf(Jg_k, Hg_lj)
            let b2 = g.einsum2("ika,alj->ilkj", t1, hi);
            // Hf(Jg_l, Hg_kj)
            let c1 = g.einsum2("iba,bl->ial", ho, inner.j);
            let c2 = g.einsum2("ial,akj->ilkj", c1, hi);
            // Jf T3g
            let d2v = g.einsum2("ia,alkj->ilkj", outer.j, ti);
            let sum1 = g.add(s3, a2);
            let sum2 = g.add(b2, c2);
            let sum3 = g.add(sum1, sum2);
            t3 = Some(g.add(sum3, d2v));
        }
    }
    StackVars { j, h, t3 }
}

/// Forward pass plus left-to-right composition of the derivative stacks.
pub(crate) fn emit_stack(g: &mut Graph, m: &MlpVars, x: Var, depth: u8) -> (Var, StackVars) {
    let mut cur = x;
    let mut acc: Option<StackVars> = None;
    for layer in &m.layers {
        let (u, y) = emit_layer_forward(g, layer, cur);
        let blocks = emit_layer_blocks(g, layer.w, layer.act, u, depth);
        acc = Some(match acc {
            None => blocks,
            Some(inner) => emit_compose(g, &blocks, &inner, depth),
        });
        cur = y;
    }
    (cur, acc.expect("at least one layer"))
}

/// Pullback of the flat metric: `g_ij = J^m_i J^m_j`.
pub(crate) fn emit_pullback(g: &mut Graph, j: Var) -> Var {
    g.einsum2("mi,mj->ij", j, j)
}

/// `dg[k,i,j] = H^m_ki J^m_j + H^m_kj J^m_i`.
pub(crate) fn emit_metric_derivative(g: &mut Graph, j: Var, h: Var) -> Var {
    let a = g.einsum2("mki,mj->kij", h, j);
    let b = g.einsum1("kij->kji", a);
    g.add(a, b)
}

/// `ddg[j,k,m,l] = T3^a_jkm J^a_l + H^a_km H^a_jl + H^a_jm H^a_kl + J^a_m T3^a_jkl`.
pub(crate) fn emit_metric_second_derivative(g: &mut Graph, j: Var, h: Var, t3: Var) -> Var {
    let p1 = g.einsum2("ajkm,al->jkml", t3, j);
    let p2 = g.einsum2("akm,ajl->jkml", h, h);
    let p3 = g.einsum2("ajm,akl->jkml", h, h);
    let p4 = g.einsum2("am,ajkl->jkml", j, t3);
    let s1 = g.add(p1, p2);
    let s2 = g.add(p3, p4);
    g.add(s1, s2)
}

/// Learned inverse metric `g^ij = J'^i_m J'^j_m` from the inverse-transfer
/// Jacobian at the flat-frame point.
pub(crate) fn emit_inverse_learned(g: &mut Graph, inverse: &MlpVars, z_flat: Var) -> Var {
    let (_, stack) = emit_stack(g, inverse, z_flat, 1);
    g.einsum2("im,jm->ij", stack.j, stack.j)
}

/// `dg_inv[j,i,m] = -g^ia dg[j,a,b] g^bm`; in learned mode the learned
/// inverse is treated as exact inside this identity.
pub(crate) fn emit_inverse_metric_derivative(g: &mut Graph, g_inv: Var, dg: Var) -> Var {
    let r1 = g.einsum2("ia,jab->jib", g_inv, dg);
    let r2 = g.einsum2("jib,bm->jim", r1, g_inv);
    g.scale(r2, -1.0)
}

/// The symmetric combination `S[m,j,k] = d_j g_mk + d_k g_mj - d_m g_kj`
/// feeding both the Christoffel symbols and their derivative.
fn emit_christoffel_inner(g: &mut Graph, dg: Var) -> Var {
    let q1 = g.einsum1("jmk->mjk", dg);
    let q2 = g.einsum1("kmj->mjk", dg);
    let q3 = g.einsum1("mkj->mjk", dg);
    let s = g.add(q1, q2);
    g.sub(s, q3)
}

/// `Gamma^i_jk = 1/2 g^im S[m,j,k]`; returns `(gamma, S)` so the derivative
/// can reuse the inner combination.
pub(crate) fn emit_christoffel(g: &mut Graph, g_inv: Var, dg: Var) -> (Var, Var) {
    let s = emit_christoffel_inner(g, dg);
    let half = g.einsum2("im,mjk->ijk", g_inv, s);
    (g.scale(half, 0.5), s)
}

/// `dgamma[j,i,k,l] = 1/2 (dg_inv[j,i,m] S[m,k,l] + g^im T[j,m,k,l])` with
/// `T[j,m,k,l] = d_j d_k g_ml + d_j d_l g_mk - d_j d_m g_lk`.
pub(crate) fn emit_christoffel_derivative(
    g: &mut Graph,
    g_inv: Var,
    dg_inv: Var,
    s: Var,
    ddg: Var,
) -> Var {
    let w1 = g.einsum1("jkml->jmkl", ddg);
    let w2 = g.einsum1("jlmk->jmkl", ddg);
    let w3 = g.einsum1("jmlk->jmkl", ddg);
    let t = g.add(w1, w2);
    let t = g.sub(t, w3);
    let first = g.einsum2("jim,mkl->jikl", dg_inv, s);
    let second = g.einsum2("im,jmkl->jikl", g_inv, t);
    let sum = g.add(first, second);
    g.scale(sum, 0.5)
}

/// `R^i_ljk = d_j Gamma^i_kl - d_k Gamma^i_jl + Gamma^i_js Gamma^s_kl
///  - Gamma^i_ks Gamma^s_jl`.
pub(crate) fn emit_riemann(g: &mut Graph, gamma: Var, dgamma: Var) -> Var {
    let d1 = g.einsum1("jikl->iljk", dgamma);
    let d2 = g.einsum1("kijl->iljk", dgamma);
    let q1 = g.einsum2("ijs,skl->iljk", gamma, gamma);
    let q2 = g.einsum2("iks,sjl->iljk", gamma, gamma);
    let a = g.sub(d1, d2);
    let b = g.sub(q1, q2);
    g.add(a, b)
}

/// Ricci tensor by contracting the first and third Riemann indices, then the
/// scalar `R = g^rn R_rn`.
pub(crate) fn emit_ricci(g: &mut Graph, g_inv: Var, riemann: Var) -> (Var, Var) {
    let n = g.value(riemann).shape()[0];
    let id = g.constant(Tensor::identity(n));
    let ric = g.einsum2("mrln,ml->rn", riemann, id);
    let scalar = g.einsum2("rn,rn->", g_inv, ric);
    (ric, scalar)
}

pub(crate) struct CurvatureVars {
    pub metric: Var,
    pub g_inv: Var,
    pub dg: Var,
    pub ddg: Var,
    pub gamma: Var,
    pub dgamma: Var,
    pub riemann: Var,
    pub ricci: Var,
    pub scalar: Var,
    pub flat_point: Var,
}

/// Emits the full pipeline at curved-frame point `z`.
pub(crate) fn emit_curvature(
    g: &mut Graph,
    transfer: &MlpVars,
    inverse: &MlpVars,
    z: Var,
    mode: InverseMode,
    ridge: f64,
) -> Result<CurvatureVars> {
    let (z_flat, stack) = emit_stack(g, transfer, z, 3);
    let (h, t3) = (stack.h.unwrap(), stack.t3.unwrap());
    let metric = emit_pullback(g, stack.j);
    let dg = emit_metric_derivative(g, stack.j, h);
    let ddg = emit_metric_second_derivative(g, stack.j, h, t3);
    let g_inv = match mode {
        InverseMode::Exact => g.invert(metric, ridge)?,
        InverseMode::Learned => emit_inverse_learned(g, inverse, z_flat),
    };
    let dg_inv = emit_inverse_metric_derivative(g, g_inv, dg);
    let (gamma, s) = emit_christoffel(g, g_inv, dg);
    let dgamma = emit_christoffel_derivative(g, g_inv, dg_inv, s, ddg);
    let riemann = emit_riemann(g, gamma, dgamma);
    let (ricci, scalar) = emit_ricci(g, g_inv, riemann);
    Ok(CurvatureVars {
        metric,
        g_inv,
        dg,
        ddg,
        gamma,
        dgamma,
        riemann,
        ricci,
        scalar,
        flat_point: z_flat,
    })
}

// --- plain public API --------------------------------------------------------

fn require_square(t: &Tensor, what: &str) -> Result<usize> {
    if t.rank() != 2 || t.shape()[0] != t.shape()[1] {
        return Err(Error::shape(format!("{what} must be square, got {:?}", t.shape())));
    }
    Ok(t.shape()[0])
}

fn constant_width_check(mlp: &Mlp) -> Result<()> {
    if !mlp.constant_width() {
        return Err(Error::shape(
            "curvature requires a constant-width module",
        ));
    }
    Ok(())
}

fn layer_graph(layer: &DenseLayer, u: &Tensor) -> Result<(Graph, Var)> {
    if u.rank() != 1 || u.shape()[0] != layer.out_dim() {
        return Err(Error::shape(format!(
            "pre-activation {:?} does not match layer output {}",
            u.shape(),
            layer.out_dim()
        )));
    }
    let mut g = Graph::new();
    let uv = g.constant(u.clone());
    Ok((g, uv))
}

/// Single-layer Jacobian block at pre-activation `u`.
pub fn layer_jacobian(layer: &DenseLayer, u: &Tensor, _x_prev: &Tensor) -> Result<Tensor> {
    let (mut g, uv) = layer_graph(layer, u)?;
    let w = g.constant(layer.w.clone());
    let blocks = emit_layer_blocks(&mut g, w, layer.act, uv, 1);
    Ok(g.value(blocks.j).clone())
}

/// Single-layer second-derivative block at pre-activation `u`.
pub fn layer_second_derivative(layer: &DenseLayer, u: &Tensor, _x_prev: &Tensor) -> Result<Tensor> {
    let (mut g, uv) = layer_graph(layer, u)?;
    let w = g.constant(layer.w.clone());
    let blocks = emit_layer_blocks(&mut g, w, layer.act, uv, 2);
    Ok(g.value(blocks.h.unwrap()).clone())
}

/// Single-layer third-derivative block at pre-activation `u`.
pub fn layer_third_derivative(layer: &DenseLayer, u: &Tensor, _x_prev: &Tensor) -> Result<Tensor> {
    let (mut g, uv) = layer_graph(layer, u)?;
    let w = g.constant(layer.w.clone());
    let blocks = emit_layer_blocks(&mut g, w, layer.act, uv, 3);
    Ok(g.value(blocks.t3.unwrap()).clone())
}

/// Composes per-layer blocks into the full J/H/T3 of the network at the
/// trace's input point.
pub fn compose_derivatives(mlp: &Mlp, trace: &ForwardTrace) -> Result<DerivativeStack> {
    constant_width_check(mlp)?;
    if trace.input.shape() != [mlp.in_dim()] {
        return Err(Error::shape("trace input does not match network"));
    }
    let mut g = Graph::new();
    let vars = MlpVars::insert(&mut g, mlp, false);
    let x = g.constant(trace.input.clone());
    let (_, stack) = emit_stack(&mut g, &vars, x, 3);
    Ok(DerivativeStack {
        j: g.value(stack.j).clone(),
        h: g.value(stack.h.unwrap()).clone(),
        t3: g.value(stack.t3.unwrap()).clone(),
    })
}

/// Pullback metric `g = J^T J` (flat codomain metric).
pub fn pullback_metric(j: &Tensor) -> Result<Tensor> {
    require_square(j, "Jacobian")?;
    let mut g = Graph::new();
    let jv = g.constant(j.clone());
    let m = emit_pullback(&mut g, jv);
    Ok(g.value(m).clone())
}

/// First metric derivative assembled from J and H.
pub fn metric_derivative(stack: &DerivativeStack) -> Result<Tensor> {
    let mut g = Graph::new();
    let j = g.constant(stack.j.clone());
    let h = g.constant(stack.h.clone());
    let dg = emit_metric_derivative(&mut g, j, h);
    Ok(g.value(dg).clone())
}

/// Second metric derivative assembled from J, H, and T3.
pub fn metric_second_derivative(stack: &DerivativeStack) -> Result<Tensor> {
    let mut g = Graph::new();
    let j = g.constant(stack.j.clone());
    let h = g.constant(stack.h.clone());
    let t3 = g.constant(stack.t3.clone());
    let ddg = emit_metric_second_derivative(&mut g, j, h, t3);
    Ok(g.value(ddg).clone())
}

/// Inverse metric in either mode. `Learned` requires the inverse-transfer
/// module and the flat-frame point.
pub fn inverse_metric(
    g_metric: &Tensor,
    mode: InverseMode,
    inverse_module: Option<&Mlp>,
    z_flat: Option<&Tensor>,
) -> Result<Tensor> {
    require_square(g_metric, "metric")?;
    match mode {
        InverseMode::Exact => crate::tensor::invert_matrix(g_metric, 0.0),
        InverseMode::Learned => {
            let mlp = inverse_module
                .ok_or_else(|| Error::spec("learned inverse needs the inverse module"))?;
            let z = z_flat.ok_or_else(|| Error::spec("learned inverse needs the flat point"))?;
            constant_width_check(mlp)?;
            let mut g = Graph::new();
            let vars = MlpVars::insert(&mut g, mlp, false);
            let zv = g.constant(z.clone());
            let inv = emit_inverse_learned(&mut g, &vars, zv);
            Ok(g.value(inv).clone())
        }
    }
}

/// Christoffel symbols from the inverse metric and metric derivative.
pub fn christoffel(g_inv: &Tensor, dg: &Tensor) -> Result<Tensor> {
    require_square(g_inv, "inverse metric")?;
    let mut g = Graph::new();
    let gi = g.constant(g_inv.clone());
    let dgv = g.constant(dg.clone());
    let (gamma, _) = emit_christoffel(&mut g, gi, dgv);
    Ok(g.value(gamma).clone())
}

/// Derivative of the Christoffel symbols; `dg_inv` must be supplied by the
/// caller (exact mode computes it via `-g^ia dg g^bm`).
pub fn christoffel_derivative(
    g_inv: &Tensor,
    dg: &Tensor,
    ddg: &Tensor,
    dg_inv: &Tensor,
) -> Result<Tensor> {
    let mut g = Graph::new();
    let gi = g.constant(g_inv.clone());
    let dgv = g.constant(dg.clone());
    let ddgv = g.constant(ddg.clone());
    let dgi = g.constant(dg_inv.clone());
    let s = emit_christoffel_inner(&mut g, dgv);
    let dgamma = emit_christoffel_derivative(&mut g, gi, dgi, s, ddgv);
    Ok(g.value(dgamma).clone())
}

/// Derivative of the inverse metric via `-g^ia (d_j g_ab) g^bm`.
pub fn inverse_metric_derivative(g_inv: &Tensor, dg: &Tensor) -> Result<Tensor> {
    let mut g = Graph::new();
    let gi = g.constant(g_inv.clone());
    let dgv = g.constant(dg.clone());
    let r = emit_inverse_metric_derivative(&mut g, gi, dgv);
    Ok(g.value(r).clone())
}

/// Riemann tensor from the Christoffel symbols and their derivative.
pub fn riemann(gamma: &Tensor, dgamma: &Tensor) -> Result<Tensor> {
    let mut g = Graph::new();
    let gv = g.constant(gamma.clone());
    let dgv = g.constant(dgamma.clone());
    let r = emit_riemann(&mut g, gv, dgv);
    Ok(g.value(r).clone())
}

/// Ricci tensor and scalar from the inverse metric and Riemann tensor.
pub fn ricci(g_inv: &Tensor, riemann_t: &Tensor) -> Result<(Tensor, f64)> {
    let mut g = Graph::new();
    let gi = g.constant(g_inv.clone());
    let rv = g.constant(riemann_t.clone());
    let (ric, scalar) = emit_ricci(&mut g, gi, rv);
    Ok((g.value(ric).clone(), g.value(scalar).item()))
}

/// End-to-end geometry at one point: metric bundle plus curvature bundle.
pub fn geometry_at(
    transfer: &Mlp,
    inverse: Option<&Mlp>,
    z: &Tensor,
    mode: InverseMode,
    ridge: f64,
) -> Result<(MetricBundle, CurvatureBundle)> {
    constant_width_check(transfer)?;
    if mode == InverseMode::Learned {
        let inv = inverse.ok_or_else(|| Error::spec("learned mode needs the inverse module"))?;
        constant_width_check(inv)?;
        if inv.in_dim() != transfer.in_dim() {
            return Err(Error::shape("inverse width differs from transfer"));
        }
    }
    if z.shape() != [transfer.in_dim()] {
        return Err(Error::shape(format!(
            "point {:?} does not match module width {}",
            z.shape(),
            transfer.in_dim()
        )));
    }
    let mut g = Graph::new();
    let tv = MlpVars::insert(&mut g, transfer, false);
    // Exact mode never evaluates the inverse module; reuse the transfer as a
    // placeholder rather than forcing callers to pass one.
    let iv = match inverse {
        Some(inv) => MlpVars::insert(&mut g, inv, false),
        None => MlpVars::insert(&mut g, transfer, false),
    };
    let zv = g.constant(z.clone());
    let vars = emit_curvature(&mut g, &tv, &iv, zv, mode, ridge)?;
    let metric = MetricBundle {
        g: g.value(vars.metric).clone(),
        g_inv: g.value(vars.g_inv).clone(),
        dg: g.value(vars.dg).clone(),
        ddg: g.value(vars.ddg).clone(),
        inverse_mode: mode,
    };
    let curvature = CurvatureBundle {
        gamma: g.value(vars.gamma).clone(),
        dgamma: g.value(vars.dgamma).clone(),
        riemann: g.value(vars.riemann).clone(),
        ricci: g.value(vars.ricci).clone(),
        scalar: g.value(vars.scalar).item(),
    };
    Ok((metric, curvature))
}

/// Full curvature bundle at `z`; the verification entry point.
pub fn curvature_at(
    transfer: &Mlp,
    inverse: Option<&Mlp>,
    z: &Tensor,
    mode: InverseMode,
) -> Result<CurvatureBundle> {
    geometry_at(transfer, inverse, z, mode, 0.0).map(|(_, c)| c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{forward, init_params, DenseLayer};
    use crate::oracle::{fd_derivative, fd_geometry_full, FdConfig};

    fn quadratic_example() -> (Mlp, Tensor) {
        let w1 = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let b1 = Tensor::vector(&[3.0, 4.0]).unwrap();
        let w2 = Tensor::from_rows(&[vec![5.0, 6.0], vec![7.0, 8.0]]).unwrap();
        let mlp = Mlp::new(vec![
            DenseLayer::new(w1, b1, ActivationKind::Quadratic).unwrap(),
            DenseLayer::new(w2, Tensor::zeros(&[2]), ActivationKind::Linear).unwrap(),
        ])
        .unwrap();
        let x = Tensor::vector(&[1.0, 2.0]).unwrap();
        (mlp, x)
    }

    fn silu_example() -> (Mlp, Tensor) {
        let w1 = Tensor::from_rows(&[vec![0.1, 0.2], vec![0.3, 0.4]]).unwrap();
        let b1 = Tensor::vector(&[0.3, 0.4]).unwrap();
        let w2 = Tensor::from_rows(&[vec![0.5, 0.6], vec![0.7, 0.8]]).unwrap();
        let mlp = Mlp::new(vec![
            DenseLayer::new(w1, b1, ActivationKind::Silu).unwrap(),
            DenseLayer::new(w2, Tensor::zeros(&[2]), ActivationKind::Linear).unwrap(),
        ])
        .unwrap();
        let x = Tensor::vector(&[0.1, 0.2]).unwrap();
        (mlp, x)
    }

    #[test]
    fn quadratic_two_layer_golden_values_exact() {
        let (mlp, x) = quadratic_example();
        let trace = forward(&mlp, &x).unwrap();
        let stack = compose_derivatives(&mlp, &trace).unwrap();
        assert_eq!(stack.j.data(), &[620.0, 880.0, 832.0, 1184.0]);
        let g = pullback_metric(&stack.j).unwrap();
        assert_eq!(g.data(), &[1076624.0, 1530688.0, 1530688.0, 2176256.0]);
    }

    #[test]
    fn silu_two_layer_golden_values() {
        let (mlp, x) = silu_example();
        let trace = forward(&mlp, &x).unwrap();
        let stack = compose_derivatives(&mlp, &trace).unwrap();
        let expect_j = [0.1676, 0.2458, 0.2257, 0.3322];
        for (a, e) in stack.j.iter().zip(expect_j.iter()) {
            assert!((a - e).abs() < 5e-4, "J entry {a} vs printed {e}");
        }
        let g = pullback_metric(&stack.j).unwrap();
        let expect_g = [0.0790, 0.1161, 0.1161, 0.1708];
        for (a, e) in g.iter().zip(expect_g.iter()) {
            assert!((a - e).abs() < 5e-4, "g entry {a} vs printed {e}");
        }
    }

    #[test]
    fn linear_layer_jacobian_is_weight_matrix() {
        let w = Tensor::from_rows(&[vec![1.5, -0.25], vec![0.75, 2.0]]).unwrap();
        let layer = DenseLayer::new(w.clone(), Tensor::zeros(&[2]), ActivationKind::Linear).unwrap();
        let x = Tensor::vector(&[0.3, -0.8]).unwrap();
        let u = layer.preactivation(&x).unwrap();
        let j = layer_jacobian(&layer, &u, &x).unwrap();
        assert_eq!(j.data(), w.data());
        let h = layer_second_derivative(&layer, &u, &x).unwrap();
        assert!(h.iter().all(|&v| v == 0.0));
        let t3 = layer_third_derivative(&layer, &u, &x).unwrap();
        assert!(t3.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_silu_layer_blocks_match_finite_differences() {
        let mlp = init_params(&[5, 5], ActivationKind::Silu, 17).unwrap();
        let layer = &mlp.layers[0];
        let x = Tensor::vector(&[0.4, -0.2, 0.7, 0.1, -0.5]).unwrap();
        let u = layer.preactivation(&x).unwrap();
        let cfg = FdConfig::default();
        let single = Mlp::new(vec![layer.clone()]).unwrap();
        let f = |p: &Tensor| Ok(forward(&single, p)?.output().clone());

        let j = layer_jacobian(layer, &u, &x).unwrap();
        let j_fd = fd_derivative(&f, &x, 1, &cfg).unwrap();
        let scale = j_fd.max_abs();
        for (a, b) in j.iter().zip(j_fd.iter()) {
            assert!((a - b).abs() < 1e-6 * scale.max(1.0));
        }

        let h = layer_second_derivative(layer, &u, &x).unwrap();
        let h_fd = fd_derivative(&f, &x, 2, &cfg).unwrap();
        let scale = h_fd.max_abs();
        for (a, b) in h.iter().zip(h_fd.iter()) {
            assert!((a - b).abs() < 1e-4 * scale.max(1.0));
        }
        // Symmetry of the differentiation indices is structural.
        for i in 0..5 {
            for k in 0..5 {
                for jx in 0..5 {
                    assert_eq!(h.at(&[i, k, jx]), h.at(&[i, jx, k]));
                }
            }
        }

        let t3 = layer_third_derivative(layer, &u, &x).unwrap();
        let t3_fd = fd_derivative(&f, &x, 3, &cfg).unwrap();
        let scale = t3_fd.max_abs();
        for (a, b) in t3.iter().zip(t3_fd.iter()) {
            assert!((a - b).abs() < 1e-3 * scale.max(1.0));
        }
        let norm = t3.max_abs().max(1e-300);
        for i in 0..5 {
            for l in 0..5 {
                for k in 0..5 {
                    for jx in 0..5 {
                        let v = t3.at(&[i, l, k, jx]);
                        for p in [[i, l, jx, k], [i, k, l, jx], [i, jx, k, l]] {
                            assert!((t3.at(&p) - v).abs() / norm < 1e-10);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn two_linear_layers_compose_to_weight_product() {
        let w1 = Tensor::from_rows(&[vec![1.0, 2.0], vec![-0.5, 0.25]]).unwrap();
        let w2 = Tensor::from_rows(&[vec![0.5, -1.0], vec![2.0, 1.5]]).unwrap();
        let mlp = Mlp::new(vec![
            DenseLayer::new(w1.clone(), Tensor::zeros(&[2]), ActivationKind::Linear).unwrap(),
            DenseLayer::new(w2.clone(), Tensor::zeros(&[2]), ActivationKind::Linear).unwrap(),
        ])
        .unwrap();
        let x = Tensor::vector(&[0.2, 0.9]).unwrap();
        let trace = forward(&mlp, &x).unwrap();
        let stack = compose_derivatives(&mlp, &trace).unwrap();
        let spec = crate::tensor::ContractionSpec::parse("ik,kj->ij").unwrap();
        let expect = crate::tensor::contract(&w2, Some(&w1), &spec).unwrap();
        assert_eq!(stack.j.data(), expect.data());
        assert!(stack.h.iter().all(|&v| v == 0.0));
        assert!(stack.t3.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn three_layer_composition_matches_finite_differences() {
        let mlp = init_params(&[4, 4, 4, 4], ActivationKind::Silu, 23).unwrap();
        let x = Tensor::vector(&[0.3, -0.6, 0.2, 0.5]).unwrap();
        let trace = forward(&mlp, &x).unwrap();
        let stack = compose_derivatives(&mlp, &trace).unwrap();
        let cfg = FdConfig::default();
        let f = |p: &Tensor| Ok(forward(&mlp, p)?.output().clone());

        let j_fd = fd_derivative(&f, &x, 1, &cfg).unwrap();
        for (a, b) in stack.j.iter().zip(j_fd.iter()) {
            assert!((a - b).abs() < 1e-6 * j_fd.max_abs().max(1.0));
        }
        let h_fd = fd_derivative(&f, &x, 2, &cfg).unwrap();
        for (a, b) in stack.h.iter().zip(h_fd.iter()) {
            assert!((a - b).abs() < 1e-4 * h_fd.max_abs().max(1.0));
        }
        let t_fd = fd_derivative(&f, &x, 3, &cfg).unwrap();
        for (a, b) in stack.t3.iter().zip(t_fd.iter()) {
            assert!((a - b).abs() < 1e-3 * t_fd.max_abs().max(1.0));
        }
    }

    #[test]
    fn width_change_is_rejected() {
        let mlp = init_params(&[3, 4, 3], ActivationKind::Silu, 2).unwrap();
        let x = Tensor::vector(&[0.1, 0.2, 0.3]).unwrap();
        let trace = forward(&mlp, &x).unwrap();
        assert!(matches!(
            compose_derivatives(&mlp, &trace),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn identity_jacobian_gives_identity_metric() {
        let g = pullback_metric(&Tensor::identity(3)).unwrap();
        assert_eq!(g.data(), Tensor::identity(3).data());
    }

    #[test]
    fn metric_derivatives_match_finite_differences_of_metric_map() {
        let mlp = init_params(&[4, 4, 4], ActivationKind::Silu, 31).unwrap();
        let z = Tensor::vector(&[0.25, -0.4, 0.1, 0.6]).unwrap();
        let trace = forward(&mlp, &z).unwrap();
        let stack = compose_derivatives(&mlp, &trace).unwrap();
        let dg = metric_derivative(&stack).unwrap();

        // dg is symmetric in the metric indices by construction.
        for k in 0..4 {
            for i in 0..4 {
                for j in 0..4 {
                    assert_eq!(dg.at(&[k, i, j]), dg.at(&[k, j, i]));
                }
            }
        }

        // Flattened metric map for the oracle.
        let metric_map = |p: &Tensor| {
            let tr = forward(&mlp, p)?;
            let st = compose_derivatives(&mlp, &tr)?;
            let g = pullback_metric(&st.j)?;
            Tensor::new(vec![16], g.data().to_vec())
        };
        let cfg = FdConfig::default();
        let dg_fd = fd_derivative(&metric_map, &z, 1, &cfg).unwrap(); // [16, 4]
        let scale = dg_fd.max_abs();
        for i in 0..4 {
            for j in 0..4 {
                for k in 0..4 {
                    let a = dg.at(&[k, i, j]);
                    let b = dg_fd.at(&[i * 4 + j, k]);
                    assert!((a - b).abs() < 1e-4 * scale.max(1.0), "{a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn metric_second_derivative_matches_finite_differences() {
        let mlp = init_params(&[3, 3, 3], ActivationKind::Silu, 37).unwrap();
        let z = Tensor::vector(&[0.2, -0.3, 0.45]).unwrap();
        let trace = forward(&mlp, &z).unwrap();
        let stack = compose_derivatives(&mlp, &trace).unwrap();
        let ddg = metric_second_derivative(&stack).unwrap();

        let norm = ddg.max_abs().max(1e-300);
        for j in 0..3 {
            for k in 0..3 {
                for m in 0..3 {
                    for l in 0..3 {
                        let v = ddg.at(&[j, k, m, l]);
                        assert!((ddg.at(&[k, j, m, l]) - v).abs() / norm < 1e-10);
                        assert!((ddg.at(&[j, k, l, m]) - v).abs() / norm < 1e-10);
                    }
                }
            }
        }

        let dg_map = |p: &Tensor| {
            let tr = forward(&mlp, p)?;
            let st = compose_derivatives(&mlp, &tr)?;
            let dg = metric_derivative(&st)?;
            Tensor::new(vec![27], dg.data().to_vec())
        };
        let cfg = FdConfig::default();
        let fd = fd_derivative(&dg_map, &z, 1, &cfg).unwrap(); // [27, 3] -> d_j of dg[k,m,l]
        let scale = fd.max_abs();
        for j in 0..3 {
            for k in 0..3 {
                for m in 0..3 {
                    for l in 0..3 {
                        let a = ddg.at(&[j, k, m, l]);
                        let b = fd.at(&[(k * 3 + m) * 3 + l, j]);
                        assert!((a - b).abs() < 1e-3 * scale.max(1.0), "{a} vs {b}");
                    }
                }
            }
        }
    }

    #[test]
    fn linear_module_has_constant_metric_and_zero_curvature() {
        let w = Tensor::from_rows(&[vec![1.1, 0.4], vec![-0.3, 0.9]]).unwrap();
        let mlp = Mlp::new(vec![DenseLayer::new(
            w,
            Tensor::zeros(&[2]),
            ActivationKind::Linear,
        )
        .unwrap()])
        .unwrap();
        let z = Tensor::vector(&[0.5, -1.0]).unwrap();
        let trace = forward(&mlp, &z).unwrap();
        let stack = compose_derivatives(&mlp, &trace).unwrap();
        assert!(metric_derivative(&stack).unwrap().iter().all(|&v| v == 0.0));
        assert!(metric_second_derivative(&stack).unwrap().iter().all(|&v| v == 0.0));
        let bundle = curvature_at(&mlp, None, &z, InverseMode::Exact).unwrap();
        assert_eq!(bundle.scalar, 0.0);
        assert!(bundle.gamma.iter().all(|&v| v == 0.0));
        assert!(bundle.riemann.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn inverse_metric_modes() {
        // Exact mode on the identity.
        let id = Tensor::identity(3);
        let inv = inverse_metric(&id, InverseMode::Exact, None, None).unwrap();
        assert_eq!(inv.data(), id.data());

        // Exact mode against the hand adjugate of the printed metric.
        let g = Tensor::from_rows(&[vec![0.0790, 0.1161], vec![0.1161, 0.1708]]).unwrap();
        let det = 0.0790 * 0.1708 - 0.1161 * 0.1161;
        let inv = inverse_metric(&g, InverseMode::Exact, None, None).unwrap();
        let expect = [0.1708 / det, -0.1161 / det, -0.1161 / det, 0.0790 / det];
        for (a, e) in inv.iter().zip(expect.iter()) {
            assert!((a - e).abs() < 1e-9 * e.abs());
        }

        // Learned mode with an untrained inverse is only approximate:
        // trace(g_inv g) differs from the dimension in general.
        let transfer = init_params(&[3, 3, 3], ActivationKind::Silu, 41).unwrap();
        let inverse = init_params(&[3, 3, 3], ActivationKind::Silu, 42).unwrap();
        let z = Tensor::vector(&[0.3, 0.1, -0.2]).unwrap();
        let trace = forward(&transfer, &z).unwrap();
        let stack = compose_derivatives(&transfer, &trace).unwrap();
        let gm = pullback_metric(&stack.j).unwrap();
        let z_flat = trace.output().clone();
        let learned =
            inverse_metric(&gm, InverseMode::Learned, Some(&inverse), Some(&z_flat)).unwrap();
        let spec = crate::tensor::ContractionSpec::parse("ij,ji->").unwrap();
        let tr = crate::tensor::contract(&learned, Some(&gm), &spec).unwrap().item();
        assert!((tr - 3.0).abs() > 1e-3, "untrained learned inverse looked exact: {tr}");
    }

    #[test]
    fn christoffel_zero_metric_derivative_and_symmetry() {
        let g_inv = Tensor::identity(3);
        let dg = Tensor::zeros(&[3, 3, 3]);
        let gamma = christoffel(&g_inv, &dg).unwrap();
        assert!(gamma.iter().all(|&v| v == 0.0));

        let mlp = init_params(&[4, 4, 4], ActivationKind::Silu, 47).unwrap();
        let z = Tensor::vector(&[0.15, -0.35, 0.5, 0.05]).unwrap();
        let (mb, cb) = geometry_at(&mlp, None, &z, InverseMode::Exact, 0.0).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                for k in 0..4 {
                    assert_eq!(cb.gamma.at(&[i, j, k]), cb.gamma.at(&[i, k, j]));
                }
            }
        }
        // Cross-check against the oracle-built Christoffel (numeric dg +
        // exact inverse of the numeric metric).
        let cfg = FdConfig::default();
        let (_, fd_cb) = fd_geometry_full(&mlp, None, &z, InverseMode::Exact, &cfg).unwrap();
        let scale = fd_cb.gamma.max_abs().max(1.0);
        for (a, b) in cb.gamma.iter().zip(fd_cb.gamma.iter()) {
            assert!((a - b).abs() < 1e-4 * scale);
        }
        let _ = mb;
    }

    #[test]
    fn christoffel_derivative_matches_finite_difference_of_christoffel_map() {
        let mlp = init_params(&[3, 3, 3], ActivationKind::Silu, 53).unwrap();
        let z = Tensor::vector(&[0.3, -0.1, 0.2]).unwrap();
        let (_, cb) = geometry_at(&mlp, None, &z, InverseMode::Exact, 0.0).unwrap();

        let gamma_map = |p: &Tensor| {
            let (_, c) = geometry_at(&mlp, None, p, InverseMode::Exact, 0.0)?;
            Tensor::new(vec![27], c.gamma.data().to_vec())
        };
        let mut cfg = FdConfig::default();
        cfg.steps[0] = 5e-3; // smooth map; larger step keeps the noise down
        let fd = fd_derivative(&gamma_map, &z, 1, &cfg).unwrap(); // [27, 3]
        let scale = fd.max_abs().max(1.0);
        for j in 0..3 {
            for i in 0..3 {
                for k in 0..3 {
                    for l in 0..3 {
                        let a = cb.dgamma.at(&[j, i, k, l]);
                        let b = fd.at(&[(i * 3 + k) * 3 + l, j]);
                        assert!((a - b).abs() < 1e-3 * scale, "{a} vs {b}");
                    }
                }
            }
        }
    }

    #[test]
    fn inverse_metric_derivative_identity_matches_finite_difference() {
        let mlp = init_params(&[3, 3], ActivationKind::Silu, 59).unwrap();
        let z = Tensor::vector(&[0.2, 0.4, -0.3]).unwrap();
        let trace = forward(&mlp, &z).unwrap();
        let stack = compose_derivatives(&mlp, &trace).unwrap();
        let gm = pullback_metric(&stack.j).unwrap();
        let g_inv = inverse_metric(&gm, InverseMode::Exact, None, None).unwrap();
        let dg = metric_derivative(&stack).unwrap();
        let identity_form = inverse_metric_derivative(&g_inv, &dg).unwrap();

        let inv_map = |p: &Tensor| {
            let tr = forward(&mlp, p)?;
            let st = compose_derivatives(&mlp, &tr)?;
            let g = pullback_metric(&st.j)?;
            let inv = inverse_metric(&g, InverseMode::Exact, None, None)?;
            Tensor::new(vec![9], inv.data().to_vec())
        };
        let cfg = FdConfig::default();
        let fd = fd_derivative(&inv_map, &z, 1, &cfg).unwrap(); // [9, 3]
        let scale = fd.max_abs().max(1.0);
        for j in 0..3 {
            for i in 0..3 {
                for m in 0..3 {
                    let a = identity_form.at(&[j, i, m]);
                    let b = fd.at(&[i * 3 + m, j]);
                    assert!((a - b).abs() < 1e-4 * scale, "{a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn riemann_structure_and_flatness() {
        let gamma = Tensor::zeros(&[3, 3, 3]);
        let dgamma = Tensor::zeros(&[3, 3, 3, 3]);
        let r = riemann(&gamma, &dgamma).unwrap();
        assert!(r.iter().all(|&v| v == 0.0));

        let mlp = init_params(&[4, 4, 4], ActivationKind::Silu, 61).unwrap();
        let z = Tensor::vector(&[0.2, -0.25, 0.4, -0.1]).unwrap();
        let (_, cb) = geometry_at(&mlp, None, &z, InverseMode::Exact, 0.0).unwrap();
        // Antisymmetry in the last two indices is structural.
        for i in 0..4 {
            for l in 0..4 {
                for j in 0..4 {
                    for k in 0..4 {
                        assert_eq!(
                            cb.riemann.at(&[i, l, j, k]),
                            -cb.riemann.at(&[i, l, k, j])
                        );
                    }
                }
            }
        }
        // Pullback of a flat metric through an equal-dimension smooth map is
        // flat; the analytic pipeline must see that to near rounding.
        let scale = cb.gamma.max_abs().powi(2).max(cb.dgamma.max_abs()).max(1.0);
        assert!(
            cb.riemann.max_abs() / scale < 1e-6,
            "flatness residual {}",
            cb.riemann.max_abs() / scale
        );
    }

    #[test]
    fn ricci_zero_and_learned_mode_against_oracle() {
        let (ric, scalar) = ricci(&Tensor::identity(3), &Tensor::zeros(&[3, 3, 3, 3])).unwrap();
        assert!(ric.iter().all(|&v| v == 0.0));
        assert_eq!(scalar, 0.0);

        // Learned inverse on a fixed seed: the analytic scalar must match the
        // independent finite-difference pipeline.
        let transfer = init_params(&[4, 4, 4], ActivationKind::Silu, 42).unwrap();
        let inverse = init_params(&[4, 4, 4], ActivationKind::Silu, 1042).unwrap();
        let z = Tensor::vector(&[0.2, -0.3, 0.15, 0.4]).unwrap();
        let analytic = curvature_at(&transfer, Some(&inverse), &z, InverseMode::Learned).unwrap();
        let cfg = FdConfig::default();
        let numeric = crate::oracle::fd_geometry_pipeline(
            &transfer,
            Some(&inverse),
            &z,
            InverseMode::Learned,
            &cfg,
        )
        .unwrap();
        assert!(analytic.scalar.abs() > 1e-6, "learned-mode scalar should be nonzero");
        let rel = (analytic.scalar - numeric.scalar).abs() / numeric.scalar.abs().max(1e-12);
        assert!(rel < 1e-3, "scalar {} vs oracle {}", analytic.scalar, numeric.scalar);
    }

    #[test]
    fn first_bianchi_identity_in_exact_mode() {
        let mlp = init_params(&[4, 4, 4], ActivationKind::Silu, 67).unwrap();
        let z = Tensor::vector(&[0.05, 0.3, -0.2, 0.25]).unwrap();
        let (mb, cb) = geometry_at(&mlp, None, &z, InverseMode::Exact, 0.0).unwrap();
        // Lower the first index with g, then cyclically sum the last three.
        let spec = crate::tensor::ContractionSpec::parse("la,armn->lrmn").unwrap();
        let lowered = crate::tensor::contract(&mb.g, Some(&cb.riemann), &spec).unwrap();
        for l in 0..4 {
            for r in 0..4 {
                for m in 0..4 {
                    for n in 0..4 {
                        let cyc = lowered.at(&[l, r, m, n])
                            + lowered.at(&[l, m, n, r])
                            + lowered.at(&[l, n, r, m]);
                        assert!(cyc.abs() < 1e-8, "Bianchi violation {cyc}");
                    }
                }
            }
        }
    }

    #[test]
    fn sphere_curvature_by_contraction_assembly() {
        // Exact 2-sphere tensors (see oracle tests for the derivation);
        // validates the einsum assembly on a genuinely curved metric.
        let theta = 1.0f64;
        let (s, c) = theta.sin_cos();
        let mut g_inv = Tensor::zeros(&[2, 2]);
        g_inv.set(&[0, 0], 1.0);
        g_inv.set(&[1, 1], 1.0 / (s * s));
        let mut dg = Tensor::zeros(&[2, 2, 2]);
        dg.set(&[0, 1, 1], 2.0 * s * c);
        let mut ddg = Tensor::zeros(&[2, 2, 2, 2]);
        ddg.set(&[0, 0, 1, 1], 2.0 * (c * c - s * s));
        let mut dg_inv = Tensor::zeros(&[2, 2, 2]);
        dg_inv.set(&[0, 1, 1], -2.0 * c / (s * s * s));

        let gamma = christoffel(&g_inv, &dg).unwrap();
        assert!((gamma.at(&[0, 1, 1]) + s * c).abs() < 1e-12);
        assert!((gamma.at(&[1, 0, 1]) - c / s).abs() < 1e-12);
        let dgamma = christoffel_derivative(&g_inv, &dg, &ddg, &dg_inv).unwrap();
        assert!((dgamma.at(&[0, 0, 1, 1]) + (c * c - s * s)).abs() < 1e-12);
        assert!((dgamma.at(&[0, 1, 0, 1]) + 1.0 / (s * s)).abs() < 1e-12);
        let riem = riemann(&gamma, &dgamma).unwrap();
        assert!((riem.at(&[0, 1, 0, 1]) - s * s).abs() < 1e-12);
        let (ric, scalar) = ricci(&g_inv, &riem).unwrap();
        assert!((ric.at(&[0, 0]) - 1.0).abs() < 1e-12);
        assert!((ric.at(&[1, 1]) - s * s).abs() < 1e-12);
        assert!((scalar - 2.0).abs() < 1e-12);
    }

    #[test]
    fn quadratic_pipeline_metric_is_integer_exact_through_curvature_inputs() {
        let (mlp, x) = quadratic_example();
        let trace = forward(&mlp, &x).unwrap();
        let stack = compose_derivatives(&mlp, &trace).unwrap();
        let dg = metric_derivative(&stack).unwrap();
        // All intermediates are integer-representable; check a hand value:
        // dg[k,i,j] = H^m_ki J^m_j + H^m_kj J^m_i with
        // H^m_kj = sum_a W2[m,a] * 2 * W1[a,k] * W1[a,j].
        let w1 = [[1.0f64, 2.0], [3.0, 4.0]];
        let w2 = [[5.0f64, 6.0], [7.0, 8.0]];
        let jm = [[620.0, 880.0], [832.0, 1184.0]];
        let h = |m: usize, k: usize, j: usize| -> f64 {
            (0..2).map(|a| w2[m][a] * 2.0 * w1[a][k] * w1[a][j]).sum()
        };
        for k in 0..2 {
            for i in 0..2 {
                for j in 0..2 {
                    let expect: f64 = (0..2).map(|m| h(m, k, i) * jm[m][j] + h(m, k, j) * jm[m][i]).sum();
                    assert_eq!(dg.at(&[k, i, j]), expect);
                }
            }
        }
    }
}
