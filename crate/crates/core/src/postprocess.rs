//! Physical quantities from solved coefficients: displacement traces, energies,
//! error norms, extrapolated references and interior values.

use std::fmt::Write as _;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::assembly::SystemBlocks;
use crate::error::{Error, Result};
use crate::geometry::{BoundaryMesh, DofLayout, Material, Point, TimeGrid};
use crate::kernels::{g_at_level, traction_kernels_at_level};
use crate::quadrature::{gauss_rule, integrate_line, QuadSettings};

/// Nodal displacements at `t_0 … t_N`, each of length `2 n_U` (component-major).
/// Coefficients are increments of the ramp basis, so the values are prefix sums.
pub fn displacement_series(xs: &[DVector<f64>], layout: &DofLayout) -> Vec<DVector<f64>> {
    let nu = 2 * layout.n_u;
    let off = 2 * layout.n_psi;
    let mut acc = DVector::zeros(nu);
    let mut out = Vec::with_capacity(xs.len() + 1);
    out.push(acc.clone());
    for x in xs {
        acc += x.rows(off, nu);
        out.push(acc.clone());
    }
    out
}

/// Locates `p` on the mesh: `(element, ξ)` of the closest element.
pub fn locate(mesh: &BoundaryMesh, p: Point) -> (usize, f64) {
    let mut best = (0, 0.0, f64::INFINITY);
    for e in 0..mesh.n_elements() {
        let s = mesh.segment(e);
        let w = [p[0] - s.a[0], p[1] - s.a[1]];
        let xi = ((w[0] * s.t[0] + w[1] * s.t[1]) / s.len).clamp(0.0, 1.0);
        let q = s.at(xi);
        let d = (q[0] - p[0]).hypot(q[1] - p[1]);
        if d < best.2 {
            best = (e, xi, d);
        }
    }
    (best.0, best.1)
}

/// Displacement at local coordinate `xi` of element `e` from one nodal vector.
pub fn trace_value(mesh: &BoundaryMesh, layout: &DofLayout, u: &DVector<f64>, e: usize, xi: f64) -> [f64; 2] {
    let mut out = [0.0; 2];
    let shp = [1.0 - xi, xi];
    for (end, node) in layout.element_u_nodes(mesh, e).iter().enumerate() {
        if let Some(m) = node {
            for (i, o) in out.iter_mut().enumerate() {
                *o += shp[end] * u[i * layout.n_u + m];
            }
        }
    }
    out
}

/// `u(p, t_k)` for `k = 0..=N`.
pub fn trace_at(mesh: &BoundaryMesh, layout: &DofLayout, series: &[DVector<f64>], p: Point) -> Vec<[f64; 2]> {
    let (e, xi) = locate(mesh, p);
    series.iter().map(|u| trace_value(mesh, layout, u, e, xi)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    /// `XᵀSX` over the whole run.
    pub total: f64,
    /// `E(t_k)`, `k = 1..=N`: the quadratic form of the leading `k` block rows and columns.
    pub cumulative: Vec<f64>,
}

/// Energies from the block-Toeplitz product.
pub fn energy(blocks: &SystemBlocks, xs: &[DVector<f64>]) -> EnergyReport {
    let n = blocks.block_size();
    let mut cumulative = Vec::with_capacity(xs.len());
    let mut acc = 0.0;
    for (l, x) in xs.iter().enumerate() {
        let mut y = DVector::zeros(n);
        for d in 0..=l {
            blocks.blocks[d].mul_add(&xs[l - d], &mut y);
        }
        acc += x.dot(&y);
        cumulative.push(acc);
    }
    EnergyReport { total: acc, cumulative }
}

/// `‖u_h − u‖_{L²((0,T)×Γ)}` over the components in `comps`, with an 8×8
/// Gauss rule per element and step. Elements without displacement dofs count
/// with `u_h = 0`.
pub fn l2_spacetime_error<F: Fn(f64, Point) -> [f64; 2]>(
    mesh: &BoundaryMesh,
    layout: &DofLayout,
    grid: &TimeGrid,
    series: &[DVector<f64>],
    comps: &[usize],
    exact: F,
) -> f64 {
    let rule = gauss_rule(8);
    let mut sum = 0.0;
    for e in 0..mesh.n_elements() {
        let seg = mesh.segment(e);
        for l in 0..grid.n_steps {
            for (&xi, &wx) in rule.nodes.iter().zip(&rule.weights) {
                let p = seg.at(xi);
                let u0 = trace_value(mesh, layout, &series[l], e, xi);
                let u1 = trace_value(mesh, layout, &series[l + 1], e, xi);
                for (&tau, &wt) in rule.nodes.iter().zip(&rule.weights) {
                    let t = grid.t(l) + tau * grid.dt;
                    let ex = exact(t, p);
                    for &i in comps {
                        let d = u0[i] + tau * (u1[i] - u0[i]) - ex[i];
                        sum += wx * wt * seg.len * grid.dt * d * d;
                    }
                }
            }
        }
    }
    sum.sqrt()
}

/// Three-level extrapolation `E_h = E* + C h^p` at `h, h/2, h/4`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Extrapolation {
    pub limit: f64,
    pub order: f64,
}

pub fn richardson_reference(e: [f64; 3]) -> Result<Extrapolation> {
    let (d1, d2) = (e[0] - e[1], e[1] - e[2]);
    if d1 == 0.0 || d2 == 0.0 || d1.signum() != d2.signum() || d1.abs() <= d2.abs() {
        return Err(Error::Extrapolation(format!("non-monotone sequence {e:?}")));
    }
    let q = d1 / d2;
    let order = q.log2();
    let limit = e[2] - d2 / (q - 1.0);
    Ok(Extrapolation { limit, order })
}

/// Least-squares slope of `log err` against `log h`.
pub fn fitted_order(h: &[f64], err: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> = h.iter().zip(err).map(|(h, e)| (h.ln(), e.ln())).collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    sxy / sxx
}

/// `log₂(err(h)/err(h/2))` between consecutive rows.
pub fn consecutive_rates(err: &[f64]) -> Vec<f64> {
    err.windows(2).map(|w| (w[0] / w[1]).log2()).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InteriorValue {
    pub u: [f64; 2],
    /// The point is closer to Γ than the largest element.
    pub near_boundary: bool,
}

/// Displacement inside Ω from the retarded single and double layer potentials
/// of the discrete traction and displacement.
pub fn eval_interior(
    p: Point,
    t: f64,
    xs: &[DVector<f64>],
    mesh: &BoundaryMesh,
    layout: &DofLayout,
    grid: &TimeGrid,
    mat: &Material,
) -> Result<InteriorValue> {
    let dist = (0..mesh.n_elements())
        .map(|e| {
            let s = mesh.segment(e);
            let w = [p[0] - s.a[0], p[1] - s.a[1]];
            let xi = ((w[0] * s.t[0] + w[1] * s.t[1]) / s.len).clamp(0.0, 1.0);
            let q = s.at(xi);
            (q[0] - p[0]).hypot(q[1] - p[1])
        })
        .fold(f64::INFINITY, f64::min);
    let n_act = (0..grid.n_steps).take_while(|&l| grid.t(l) < t).count();
    let st = QuadSettings::default();
    let rule = gauss_rule(st.order);
    let np = layout.n_psi;
    // Σ_ℓ c_ℓ (F(t − t_ℓ) − F(t − t_{ℓ+1})) = Σ_ℓ (c_ℓ − c_{ℓ−1}) F(t − t_ℓ)
    let jump = |l: usize, k: usize| xs[l][k] - if l > 0 { xs[l - 1][k] } else { 0.0 };
    let mut u = [0.0; 2];
    for l in 0..n_act {
        let s = t - grid.t(l);
        let radii = [mat.c_s * s, mat.c_p * s];
        for e in 0..mesh.n_elements() {
            let seg = mesh.segment(e);
            let nodes = layout.element_u_nodes(mesh, e);
            let mut psi = [[0.0; 2]; 2];
            let mut du = [[0.0; 2]; 2];
            for j in 0..2 {
                for a in 0..2 {
                    psi[a][j] = jump(l, j * np + 2 * e + a);
                    if let Some(m) = nodes[a] {
                        du[a][j] = jump(l, layout.u_dof(j, m)) / grid.dt;
                    }
                }
            }
            if psi.iter().chain(&du).all(|v| v[0] == 0.0 && v[1] == 0.0) {
                continue;
            }
            let v = integrate_line(&seg, p, &radii, &rule, &st, |eta| {
                let y = seg.at(eta);
                let r = [p[0] - y[0], p[1] - y[1]];
                let g = g_at_level(1, r, s, mat).0;
                let k = traction_kernels_at_level(2, r, s, mat, seg.n, seg.n).k.0;
                let shp = [1.0 - eta, eta];
                let mut out = [0.0; 2];
                for (i, o) in out.iter_mut().enumerate() {
                    for j in 0..2 {
                        let pj = shp[0] * psi[0][j] + shp[1] * psi[1][j];
                        let uj = shp[0] * du[0][j] + shp[1] * du[1][j];
                        *o += (g[i][j] * pj - k[i][j] * uj) * seg.len;
                    }
                }
                out
            })
            .map_err(|c| Error::Quadrature { test: e, trial: e, lag: l, change: c.0 })?;
            u[0] += v[0];
            u[1] += v[1];
        }
    }
    Ok(InteriorValue { u, near_boundary: dist < mesh.h_max() })
}

/// Formats a float for CSV output with 17 significant digits.
pub fn fmt_f(v: f64) -> String {
    format!("{v:.16e}")
}

/// `t,point,u1,u2` rows for named trace points.
pub fn traces_csv(grid: &TimeGrid, traces: &[(String, Vec<[f64; 2]>)]) -> String {
    let mut s = String::from("t,point,u1,u2\n");
    for (name, tr) in traces {
        for (k, u) in tr.iter().enumerate() {
            let _ = writeln!(s, "{},{},{},{}", fmt_f(grid.t(k)), name, fmt_f(u[0]), fmt_f(u[1]));
        }
    }
    s
}

/// `t,element,lambda` rows: the normal multiplier of every contact element on
/// each step interval, stamped with the interval's start time.
pub fn multipliers_csv(grid: &TimeGrid, layout: &DofLayout, lambda: &DVector<f64>) -> String {
    let mut s = String::from("t,element,lambda\n");
    let nc = layout.n_lambda;
    for l in 0..grid.n_steps {
        for j in 0..nc {
            let v = lambda[layout.normal_idx[l * nc + j]];
            let _ = writeln!(s, "{},{},{}", fmt_f(grid.t(l)), layout.contact_elements[j], fmt_f(v));
        }
    }
    s
}

/// `t,energy` rows of the cumulative energy.
pub fn energy_csv(grid: &TimeGrid, report: &EnergyReport) -> String {
    let mut s = String::from("t,energy\n");
    for (k, e) in report.cumulative.iter().enumerate() {
        let _ = writeln!(s, "{},{}", fmt_f(grid.t(k + 1)), fmt_f(*e));
    }
    s
}
