//! Finite-difference ground truth for every analytic quantity.
//!
//! Everything here is rebuilt from central differences of the plain forward
//! map and assembled with explicit nested loops. No code is shared with the
//! analytic derivative path (no graph emitters, no einsum assemblies), so a
//! transcription error in the per-layer blocks or the chain rule cannot hide
//! in both pipelines at once.

use crate::error::{Error, Result};
use crate::geometry::{CurvatureBundle, InverseMode, MetricBundle};
use crate::net::{forward, Mlp};
use crate::tensor::{invert_matrix, Tensor};

/// Step sizes and tolerance pairs per derivative order (index 0 = first
/// order). Third-order steps are scaled by `max(1, |x|_inf)` to hold
/// truncation error down on off-origin points.
#[derive(Debug, Clone)]
pub struct FdConfig {
    pub steps: [f64; 3],
    pub rel_tol: [f64; 3],
    pub abs_tol: [f64; 3],
}

impl Default for FdConfig {
    fn default() -> Self {
        FdConfig {
            steps: [1e-5, 1e-4, 5e-3],
            rel_tol: [1e-6, 1e-4, 1e-3],
            abs_tol: [1e-10, 1e-8, 1e-6],
        }
    }
}

impl FdConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.steps.iter().all(|&s| s > 0.0)
            && self.rel_tol.iter().all(|&t| t > 0.0)
            && self.abs_tol.iter().all(|&t| t > 0.0);
        if ok {
            Ok(())
        } else {
            Err(Error::Config("finite-difference steps and tolerances must be positive".into()))
        }
    }

    fn third_step(&self, x: &Tensor) -> f64 {
        self.steps[2] * x.max_abs().max(1.0)
    }
}

fn eval<F>(f: &F, x: &Tensor) -> Result<Tensor>
where
    F: Fn(&Tensor) -> Result<Tensor>,
{
    let y = f(x)?;
    if !y.all_finite() {
        return Err(Error::NonFinite {
            context: "finite-difference evaluation".into(),
        });
    }
    Ok(y)
}

fn shifted(x: &Tensor, dir: usize, delta: f64) -> Tensor {
    let mut y = x.clone();
    y.data_mut()[dir] += delta;
    y
}

/// First-order central difference: `out[i][j] = d f_i / d x_j`.
fn fd_jacobian<F>(f: &F, x: &Tensor, h: f64) -> Result<Tensor>
where
    F: Fn(&Tensor) -> Result<Tensor>,
{
    let n = x.len();
    let probe = eval(f, x)?;
    let m = probe.len();
    let mut out = Tensor::zeros(&[m, n]);
    for j in 0..n {
        let fp = eval(f, &shifted(x, j, h))?;
        let fm = eval(f, &shifted(x, j, -h))?;
        for i in 0..m {
            out.set(&[i, j], (fp.data()[i] - fm.data()[i]) / (2.0 * h));
        }
    }
    Ok(out)
}

/// Second-order central stencil: `out[i][k][j] = d^2 f_i / d x_k d x_j`.
fn fd_hessian<F>(f: &F, x: &Tensor, h: f64) -> Result<Tensor>
where
    F: Fn(&Tensor) -> Result<Tensor>,
{
    let n = x.len();
    let f0 = eval(f, x)?;
    let m = f0.len();
    let mut out = Tensor::zeros(&[m, n, n]);
    for k in 0..n {
        let fpk = eval(f, &shifted(x, k, h))?;
        let fmk = eval(f, &shifted(x, k, -h))?;
        for i in 0..m {
            let v = (fpk.data()[i] - 2.0 * f0.data()[i] + fmk.data()[i]) / (h * h);
            out.set(&[i, k, k], v);
        }
        for j in 0..k {
            let fpp = eval(f, &shifted(&shifted(x, k, h), j, h))?;
            let fpm = eval(f, &shifted(&shifted(x, k, h), j, -h))?;
            let fmp = eval(f, &shifted(&shifted(x, k, -h), j, h))?;
            let fmm = eval(f, &shifted(&shifted(x, k, -h), j, -h))?;
            for i in 0..m {
                let v = (fpp.data()[i] - fpm.data()[i] - fmp.data()[i] + fmm.data()[i])
                    / (4.0 * h * h);
                out.set(&[i, k, j], v);
                out.set(&[i, j, k], v);
            }
        }
    }
    Ok(out)
}

/// Central-difference derivative tensor of order 1 to 3.
///
/// Order 3 differences the order-2 stencil along each direction, costing
/// `O(n^3)` evaluations of `f`.
pub fn fd_derivative<F>(f: &F, x: &Tensor, order: u8, cfg: &FdConfig) -> Result<Tensor>
where
    F: Fn(&Tensor) -> Result<Tensor>,
{
    cfg.validate()?;
    match order {
        1 => fd_jacobian(f, x, cfg.steps[0]),
        2 => fd_hessian(f, x, cfg.steps[1]),
        3 => {
            let n = x.len();
            let h = cfg.third_step(x);
            let probe = eval(f, x)?;
            let m = probe.len();
            let mut out = Tensor::zeros(&[m, n, n, n]);
            for l in 0..n {
                let hp = fd_hessian(f, &shifted(x, l, h), cfg.steps[1])?;
                let hm = fd_hessian(f, &shifted(x, l, -h), cfg.steps[1])?;
                for i in 0..m {
                    for k in 0..n {
                        for j in 0..n {
                            let v = (hp.at(&[i, k, j]) - hm.at(&[i, k, j])) / (2.0 * h);
                            out.set(&[i, l, k, j], v);
                        }
                    }
                }
            }
            Ok(out)
        }
        o => Err(Error::spec(format!("derivative order {o} not in 1..=3"))),
    }
}

/// Pullback metric from a finite-difference Jacobian, by loops.
fn metric_from_fd<F>(f: &F, x: &Tensor, h: f64) -> Result<Tensor>
where
    F: Fn(&Tensor) -> Result<Tensor>,
{
    let j = fd_jacobian(f, x, h)?;
    let (m, n) = (j.shape()[0], j.shape()[1]);
    let mut g = Tensor::zeros(&[n, n]);
    for a in 0..n {
        for b in 0..n {
            let mut s = 0.0;
            for r in 0..m {
                s += j.at(&[r, a]) * j.at(&[r, b]);
            }
            g.set(&[a, b], s);
        }
    }
    Ok(g)
}

/// Numeric twin of the analytic pipeline; returns both bundles.
pub fn fd_geometry_full(
    transfer: &Mlp,
    inverse: Option<&Mlp>,
    z: &Tensor,
    mode: InverseMode,
    cfg: &FdConfig,
) -> Result<(MetricBundle, CurvatureBundle)> {
    cfg.validate()?;
    if !transfer.constant_width() {
        return Err(Error::shape("constant-width transfer required"));
    }
    let n = transfer.in_dim();
    let fwd = |x: &Tensor| Ok(forward(transfer, x)?.output().clone());
    let h1 = cfg.steps[0];
    let h2 = cfg.steps[1];
    let h3 = cfg.third_step(z);

    let g_metric = metric_from_fd(&fwd, z, h1)?;

    // dg[k][i][j]: first difference of the metric map.
    let mut dg = Tensor::zeros(&[n, n, n]);
    for k in 0..n {
        let gp = metric_from_fd(&fwd, &shifted(z, k, h2), h1)?;
        let gm = metric_from_fd(&fwd, &shifted(z, k, -h2), h1)?;
        for i in 0..n {
            for j in 0..n {
                dg.set(&[k, i, j], (gp.at(&[i, j]) - gm.at(&[i, j])) / (2.0 * h2));
            }
        }
    }

    // ddg[j][k][m][l]: direct second-difference stencil of the metric map.
    let mut ddg = Tensor::zeros(&[n, n, n, n]);
    for j in 0..n {
        let gpj = metric_from_fd(&fwd, &shifted(z, j, h3), h1)?;
        let gmj = metric_from_fd(&fwd, &shifted(z, j, -h3), h1)?;
        for m in 0..n {
            for l in 0..n {
                let v = (gpj.at(&[m, l]) - 2.0 * g_metric.at(&[m, l]) + gmj.at(&[m, l]))
                    / (h3 * h3);
                ddg.set(&[j, j, m, l], v);
            }
        }
        for k in 0..j {
            let gpp = metric_from_fd(&fwd, &shifted(&shifted(z, j, h3), k, h3), h1)?;
            let gpm = metric_from_fd(&fwd, &shifted(&shifted(z, j, h3), k, -h3), h1)?;
            let gmp = metric_from_fd(&fwd, &shifted(&shifted(z, j, -h3), k, h3), h1)?;
            let gmm = metric_from_fd(&fwd, &shifted(&shifted(z, j, -h3), k, -h3), h1)?;
            for m in 0..n {
                for l in 0..n {
                    let v = (gpp.at(&[m, l]) - gpm.at(&[m, l]) - gmp.at(&[m, l])
                        + gmm.at(&[m, l]))
                        / (4.0 * h3 * h3);
                    ddg.set(&[j, k, m, l], v);
                    ddg.set(&[k, j, m, l], v);
                }
            }
        }
    }

    // Inverse metric and its derivative, per mode.
    let (g_inv, dg_inv) = match mode {
        InverseMode::Exact => {
            let g_inv = invert_matrix(&g_metric, 0.0)?;
            // Independent route: difference the inverse-of-metric map itself.
            let mut dg_inv = Tensor::zeros(&[n, n, n]);
            for k in 0..n {
                let ip = invert_matrix(&metric_from_fd(&fwd, &shifted(z, k, h2), h1)?, 0.0)?;
                let im = invert_matrix(&metric_from_fd(&fwd, &shifted(z, k, -h2), h1)?, 0.0)?;
                for i in 0..n {
                    for m in 0..n {
                        dg_inv.set(
                            &[k, i, m],
                            (ip.at(&[i, m]) - im.at(&[i, m])) / (2.0 * h2),
                        );
                    }
                }
            }
            (g_inv, dg_inv)
        }
        InverseMode::Learned => {
            let inv_mlp = inverse
                .ok_or_else(|| Error::spec("learned mode needs the inverse module"))?;
            let z_flat = forward(transfer, z)?.output().clone();
            let ifwd = |x: &Tensor| Ok(forward(inv_mlp, x)?.output().clone());
            let jp = fd_jacobian(&ifwd, &z_flat, h1)?;
            let mut g_inv = Tensor::zeros(&[n, n]);
            for i in 0..n {
                for j in 0..n {
                    let mut s = 0.0;
                    for m in 0..n {
                        s += jp.at(&[i, m]) * jp.at(&[j, m]);
                    }
                    g_inv.set(&[i, j], s);
                }
            }
            // The pipeline treats the learned inverse as exact inside the
            // derivative identity; mirror that definition with loops.
            let mut dg_inv = Tensor::zeros(&[n, n, n]);
            for k in 0..n {
                for i in 0..n {
                    for m in 0..n {
                        let mut s = 0.0;
                        for a in 0..n {
                            for b in 0..n {
                                s -= g_inv.at(&[i, a]) * dg.at(&[k, a, b]) * g_inv.at(&[b, m]);
                            }
                        }
                        dg_inv.set(&[k, i, m], s);
                    }
                }
            }
            (g_inv, dg_inv)
        }
    };

    let curvature = assemble_curvature(&g_inv, &dg, &ddg, &dg_inv);

    Ok((
        MetricBundle {
            g: g_metric,
            g_inv,
            dg,
            ddg,
            inverse_mode: mode,
        },
        curvature,
    ))
}

/// Loop-based assembly of Christoffel, Riemann, and Ricci quantities from
/// numeric metric tensors. Kept deliberately separate from the graph-emitted
/// analytic assembly.
pub(crate) fn assemble_curvature(
    g_inv: &Tensor,
    dg: &Tensor,
    ddg: &Tensor,
    dg_inv: &Tensor,
) -> CurvatureBundle {
    let n = g_inv.shape()[0];

    let mut gamma = Tensor::zeros(&[n, n, n]);
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                let mut s = 0.0;
                for m in 0..n {
                    s += g_inv.at(&[i, m])
                        * (dg.at(&[j, m, k]) + dg.at(&[k, m, j]) - dg.at(&[m, k, j]));
                }
                gamma.set(&[i, j, k], 0.5 * s);
            }
        }
    }

    let mut dgamma = Tensor::zeros(&[n, n, n, n]);
    for j in 0..n {
        for i in 0..n {
            for k in 0..n {
                for l in 0..n {
                    let mut s = 0.0;
                    for m in 0..n {
                        s += dg_inv.at(&[j, i, m])
                            * (dg.at(&[k, m, l]) + dg.at(&[l, m, k]) - dg.at(&[m, l, k]));
                        s += g_inv.at(&[i, m])
                            * (ddg.at(&[j, k, m, l]) + ddg.at(&[j, l, m, k])
                                - ddg.at(&[j, m, l, k]));
                    }
                    dgamma.set(&[j, i, k, l], 0.5 * s);
                }
            }
        }
    }

    let mut riem = Tensor::zeros(&[n, n, n, n]);
    for i in 0..n {
        for l in 0..n {
            for j in 0..n {
                for k in 0..n {
                    let mut v = dgamma.at(&[j, i, k, l]) - dgamma.at(&[k, i, j, l]);
                    for s in 0..n {
                        v += gamma.at(&[i, j, s]) * gamma.at(&[s, k, l])
                            - gamma.at(&[i, k, s]) * gamma.at(&[s, j, l]);
                    }
                    riem.set(&[i, l, j, k], v);
                }
            }
        }
    }

    let mut ricci = Tensor::zeros(&[n, n]);
    for r in 0..n {
        for nu in 0..n {
            let mut s = 0.0;
            for m in 0..n {
                s += riem.at(&[m, r, m, nu]);
            }
            ricci.set(&[r, nu], s);
        }
    }
    let mut scalar = 0.0;
    for r in 0..n {
        for nu in 0..n {
            scalar += g_inv.at(&[r, nu]) * ricci.at(&[r, nu]);
        }
    }

    CurvatureBundle {
        gamma,
        dgamma,
        riemann: riem,
        ricci,
        scalar,
    }
}

/// Numeric twin returning only the curvature bundle.
pub fn fd_geometry_pipeline(
    transfer: &Mlp,
    inverse: Option<&Mlp>,
    z: &Tensor,
    mode: InverseMode,
    cfg: &FdConfig,
) -> Result<CurvatureBundle> {
    fd_geometry_full(transfer, inverse, z, mode, cfg).map(|(_, c)| c)
}

/// Error statistics for one compared tensor.
#[derive(Debug, Clone)]
pub struct TensorComparison {
    pub name: String,
    pub max_abs_err: f64,
    pub max_rel_err: f64,
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub pass: bool,
    pub worst_index: Vec<usize>,
}

/// Per-tensor comparison of two curvature bundles.
#[derive(Debug, Clone)]
pub struct ComparisonReport {
    pub tensors: Vec<TensorComparison>,
    pub pass: bool,
}

/// Compares one tensor pair under a `(rel, abs)` tolerance: an entry passes
/// when `|a - b| <= abs + rel * |b|_inf`. `max_rel_err` is reported against
/// the reference's largest magnitude.
pub fn compare_tensors(
    name: &str,
    analytic: &Tensor,
    reference: &Tensor,
    rel_tol: f64,
    abs_tol: f64,
) -> Result<TensorComparison> {
    if analytic.shape() != reference.shape() {
        return Err(Error::shape(format!(
            "{name}: shapes {:?} vs {:?}",
            analytic.shape(),
            reference.shape()
        )));
    }
    let scale = reference.max_abs();
    let mut max_abs = 0.0f64;
    let mut worst = 0usize;
    for (i, (a, b)) in analytic.iter().zip(reference.iter()).enumerate() {
        let d = (a - b).abs();
        if d > max_abs {
            max_abs = d;
            worst = i;
        }
    }
    let max_rel = if scale > 0.0 { max_abs / scale } else { max_abs };
    let pass = max_abs <= abs_tol + rel_tol * scale;
    // Unflatten the worst offending position.
    let mut idx = Vec::with_capacity(analytic.rank());
    let mut rem = worst;
    for &e in analytic.shape().iter().rev() {
        idx.push(rem % e);
        rem /= e;
    }
    idx.reverse();
    Ok(TensorComparison {
        name: name.to_string(),
        max_abs_err: max_abs,
        max_rel_err: max_rel,
        rel_tol,
        abs_tol,
        pass,
        worst_index: idx,
    })
}

/// Compares analytic and numeric curvature bundles tensor by tensor.
/// Christoffel symbols are gated at the order-2 tolerance, everything built
/// from second metric derivatives at the order-3 tolerance.
pub fn compare_reports(
    analytic: &CurvatureBundle,
    numeric: &CurvatureBundle,
    cfg: &FdConfig,
) -> Result<ComparisonReport> {
    let pairs: [(&str, &Tensor, &Tensor, usize); 4] = [
        ("gamma", &analytic.gamma, &numeric.gamma, 1),
        ("dgamma", &analytic.dgamma, &numeric.dgamma, 2),
        ("riemann", &analytic.riemann, &numeric.riemann, 2),
        ("ricci", &analytic.ricci, &numeric.ricci, 2),
    ];
    let mut tensors = Vec::with_capacity(5);
    for (name, a, b, ord) in pairs {
        tensors.push(compare_tensors(name, a, b, cfg.rel_tol[ord], cfg.abs_tol[ord])?);
    }
    tensors.push(compare_tensors(
        "scalar",
        &Tensor::scalar(analytic.scalar),
        &Tensor::scalar(numeric.scalar),
        cfg.rel_tol[2],
        cfg.abs_tol[2],
    )?);
    let pass = tensors.iter().all(|t| t.pass);
    Ok(ComparisonReport { tensors, pass })
}
