//! Galerkin blocks `V⁽ˡ⁾, K⁽ˡ⁾, W⁽ˡ⁾`, the mass matrix, the coupled blocks
//! `S⁽ˡ⁾` and the load vectors.
//!
//! Element-pair integrals depend only on the pair's relative geometry, so they
//! are computed once per congruence class (translation and rotation) for all
//! lags and rotated into place.
//!
//! The double layer and the hypersingular operator use regularized forms in
//! which every tangential derivative of a kernel is integrated by parts along
//! its element. What remains are weakly singular area integrals and line
//! integrals of `g` centered at element vertices.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::geometry::{BoundaryMesh, DofLayout, Material, Point, Region, Segment, TimeGrid};
use crate::kernels::{RadialBundle, WavefrontSet};
use crate::quadrature::{gauss_rule, integrate_line, integrate_pair, PairRelation, QuadSettings, QuadratureRule};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Formulation {
    Symmetric,
    Nonsymmetric,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OperatorKind {
    V,
    K,
    W,
    M,
}

/// Local pair integrals of one lag: 3 operators × 2 test ends × 2 trial ends × 2×2 components.
pub type PairBlock = [f64; 48];

const OP_V: usize = 0;
const OP_K: usize = 16;
const OP_W: usize = 32;

#[inline]
fn bi(op: usize, a: usize, b: usize, i: usize, j: usize) -> usize {
    op + a * 8 + b * 4 + i * 2 + j
}

fn shape(xi: f64) -> [f64; 2] {
    [1.0 - xi, xi]
}

fn relation(mesh: &BoundaryMesh, ex: usize, ey: usize) -> PairRelation {
    if ex == ey {
        return PairRelation::Coincident;
    }
    let (x, y) = (mesh.elements[ex], mesh.elements[ey]);
    for te in 0..2 {
        for tr in 0..2 {
            if x[te] == y[tr] {
                return PairRelation::Adjacent { test_end: te, trial_end: tr };
            }
        }
    }
    PairRelation::Disjoint
}

fn seg_point_dist(s: &Segment, p: Point) -> f64 {
    let w = [p[0] - s.a[0], p[1] - s.a[1]];
    let proj = (w[0] * s.t[0] + w[1] * s.t[1]).clamp(0.0, s.len);
    let q = [s.a[0] + proj * s.t[0], s.a[1] + proj * s.t[1]];
    (p[0] - q[0]).hypot(p[1] - q[1])
}

/// Minimum distance between two segments (zero if they touch or cross).
pub fn segment_distance(a: &Segment, b: &Segment) -> f64 {
    let cross = |o: Point, p: Point, q: Point| (p[0] - o[0]) * (q[1] - o[1]) - (p[1] - o[1]) * (q[0] - o[0]);
    let d1 = cross(a.a, a.b, b.a);
    let d2 = cross(a.a, a.b, b.b);
    let d3 = cross(b.a, b.b, a.a);
    let d4 = cross(b.a, b.b, a.b);
    if d1 * d2 < 0.0 && d3 * d4 < 0.0 {
        return 0.0;
    }
    seg_point_dist(a, b.a).min(seg_point_dist(a, b.b)).min(seg_point_dist(b, a.a)).min(seg_point_dist(b, a.b))
}

/// Trial endpoints in the frame where the test element is `[0, hx] × {0}`,
/// with shared vertices and round-off snapped exactly onto that frame.
fn canonical_trial(rot: &[[f64; 2]; 2], sx: &Segment, sy: &Segment, rel: PairRelation) -> (Point, Point) {
    let snap = |p: Point| -> Point {
        let tol = 1e-12 * sx.len;
        let f = |v: f64| if v.abs() < tol { 0.0 } else if (v - sx.len).abs() < tol { sx.len } else { v };
        [f(p[0]), f(p[1])]
    };
    let mut a = snap(to_local(rot, sx.a, sy.a));
    let mut b = snap(to_local(rot, sx.a, sy.b));
    match rel {
        PairRelation::Coincident => return ([0.0, 0.0], [sx.len, 0.0]),
        PairRelation::Adjacent { test_end, trial_end } => {
            let v = if test_end == 0 { [0.0, 0.0] } else { [sx.len, 0.0] };
            if trial_end == 0 {
                a = v;
            } else {
                b = v;
            }
        }
        PairRelation::Disjoint => {}
    }
    (a, b)
}

/// Rotation taking `(1, 0)` to `t`.
fn rot_of(t: Point) -> [[f64; 2]; 2] {
    [[t[0], -t[1]], [t[1], t[0]]]
}

fn to_local(r: &[[f64; 2]; 2], origin: Point, p: Point) -> Point {
    let d = [p[0] - origin[0], p[1] - origin[1]];
    [r[0][0] * d[0] + r[1][0] * d[1], r[0][1] * d[0] + r[1][1] * d[1]]
}

/// `R B Rᵀ` for every 2×2 sub-block.
fn rotate_block(pb: &PairBlock, r: &[[f64; 2]; 2]) -> PairBlock {
    let mut out = [0.0; 48];
    for blk in 0..12 {
        let o = blk * 4;
        let m = [[pb[o], pb[o + 1]], [pb[o + 2], pb[o + 3]]];
        for i in 0..2 {
            for j in 0..2 {
                let mut v = 0.0;
                for k in 0..2 {
                    for l in 0..2 {
                        v += r[i][k] * m[k][l] * r[j][l];
                    }
                }
                out[o + i * 2 + j] = v;
            }
        }
    }
    out
}

/// Local integrals of a pair for one lag.
///
/// The test element carries `ψ` (for V, K) or the test hat (for W), the trial
/// element carries `ψ` (V) or the trial hat (K, W). Entries of `K` are
/// `∫ Nₐ eᵢ·(K Nᵦ eⱼ)` and entries of `W` are `∫∫ Nₐ eᵢ · [σₓ(σ_y G n_y) nₓ] Nᵦ eⱼ`
/// in the regularized sense, both already including the lag's time factor.
#[allow(clippy::too_many_arguments)]
pub fn pair_integrals(
    test: &Segment,
    trial: &Segment,
    rel: PairRelation,
    lag: usize,
    dt: f64,
    mat: &Material,
    rule: &QuadratureRule,
    st: &QuadSettings,
    with_w: bool,
) -> std::result::Result<PairBlock, f64> {
    let radii = WavefrontSet::for_lag(lag, dt, mat).radii;
    let (hx, hy) = (test.len, trial.len);
    let (nx, tx, ny, ty) = (test.n, test.t, trial.n, trial.t);
    let mu = mat.mu();
    let rho = mat.rho;
    let dpsi = [-1.0 / hx, 1.0 / hx];
    let dphi = [-1.0 / hy, 1.0 / hy];
    let jvec = |v: Point| [-v[1], v[0]];
    let je = [jvec([1.0, 0.0]), jvec([0.0, 1.0])];
    let kscale = hx * hy / dt;
    let wscale = hx * hy / (dt * dt);

    let area = integrate_pair(test, trial, rel, &radii, rule, st, |xi, eta| {
        let x = test.at(xi);
        let y = trial.at(eta);
        let r = [x[0] - y[0], x[1] - y[1]];
        let rn = r[0].hypot(r[1]);
        let mut out = [0.0; 48];
        if rn == 0.0 {
            return out;
        }
        let rb = RadialBundle::for_lag(rn, lag, dt, mat);
        let u = [r[0] / rn, r[1] / rn];
        let na = shape(xi);
        let nb = shape(eta);
        let g1 = |a: f64, b: f64, i: usize, j: usize| a * u[i] * u[j] + if i == j { b } else { 0.0 };
        // ∂_{n_y} g(|x − y|) = −g′ (n_y·r̂), ∂_{n_x} g = g′ (n_x·r̂).
        let uny = u[0] * ny[0] + u[1] * ny[1];
        let unx = u[0] * nx[0] + u[1] * nx[1];
        let dn2p = -rb.dg2p * uny;
        let dn2s = -rb.dg2s * uny;
        let dny3p = -rb.dg3p * uny;
        let dny3s = -rb.dg3s * uny;
        let dnx3p = rb.dg3p * unx;
        let dnx3s = rb.dg3s * unx;
        let hv = hx * hy;
        for a in 0..2 {
            for b in 0..2 {
                let nn = na[a] * nb[b];
                for i in 0..2 {
                    for j in 0..2 {
                        out[bi(OP_V, a, b, i, j)] = hv * nn * g1(rb.a1, rb.b1, i, j);
                        // e_i · { n_y Nb n_yj ∂n g_P − t_y Nb′ n_yj g_P + t_y Nb t_yj ∂n g_S + n_y Nb′ t_yj g_S + 2μ G₂ J e_j Nb′ }
                        let mut gj = 0.0;
                        for k in 0..2 {
                            gj += g1(rb.a2, rb.b2, i, k) * je[j][k];
                        }
                        let kv = ny[i] * nb[b] * ny[j] * dn2p - ty[i] * dphi[b] * ny[j] * rb.g2p
                            + ty[i] * nb[b] * ty[j] * dn2s
                            + ny[i] * dphi[b] * ty[j] * rb.g2s
                            + 2.0 * mu * gj * dphi[b];
                        out[bi(OP_K, a, b, i, j)] = kscale * na[a] * kv;
                        if with_w {
                            let mut jgj = 0.0;
                            for k in 0..2 {
                                for l in 0..2 {
                                    jgj += je[i][k] * g1(rb.a3, rb.b3, k, l) * je[j][l];
                                }
                            }
                            let wv = -rho * nn * (nx[i] * ny[j] * rb.g1p + tx[i] * ty[j] * rb.g1s)
                                + 2.0 * mu * dphi[b] * ty[j] * na[a] * nx[i] * dny3p
                                - 2.0 * mu * dphi[b] * ny[j] * na[a] * tx[i] * dny3s
                                + 2.0 * mu * dpsi[a] * tx[i] * nb[b] * ny[j] * dnx3p
                                - 2.0 * mu * dpsi[a] * nx[i] * nb[b] * ty[j] * dnx3s
                                + 4.0 * mu * mu * dpsi[a] * dphi[b] * jgj;
                            out[bi(OP_W, a, b, i, j)] = wscale * wv;
                        }
                    }
                }
            }
        }
        out
    })
    .map_err(|e| e.0)?;
    let mut out = area;

    // Vertex terms on the test element: ∫ Nₐ(ξ) g(|x(ξ) − c|) for c = a_y, b_y.
    let line_x = |c: Point| {
        integrate_line(test, c, &radii, rule, st, |xi| {
            let x = test.at(xi);
            let rn = (x[0] - c[0]).hypot(x[1] - c[1]);
            if rn == 0.0 {
                return [0.0; 8];
            }
            let rb = RadialBundle::for_lag(rn, lag, dt, mat);
            let na = shape(xi);
            let mut v = [0.0; 8];
            for a in 0..2 {
                v[a * 4] = hx * na[a] * rb.g2p;
                v[a * 4 + 1] = hx * na[a] * rb.g2s;
                v[a * 4 + 2] = hx * na[a] * rb.g3p;
                v[a * 4 + 3] = hx * na[a] * rb.g3s;
            }
            v
        })
        .map_err(|e| e.0)
    };
    let ex_b = line_x(trial.b)?;
    let ex_a = line_x(trial.a)?;
    let nb_end = [[1.0, 0.0], [0.0, 1.0]]; // N_b at (a, b)
    for a in 0..2 {
        for b in 0..2 {
            let gp = nb_end[b][1] * ex_b[a * 4] - nb_end[b][0] * ex_a[a * 4];
            let gs = nb_end[b][1] * ex_b[a * 4 + 1] - nb_end[b][0] * ex_a[a * 4 + 1];
            for i in 0..2 {
                for j in 0..2 {
                    out[bi(OP_K, a, b, i, j)] += (ty[i] * ny[j] * gp - ny[i] * ty[j] * gs) / dt;
                }
            }
            if with_w {
                let dp = ex_b[a * 4 + 2] - ex_a[a * 4 + 2];
                let ds = ex_b[a * 4 + 3] - ex_a[a * 4 + 3];
                for i in 0..2 {
                    for j in 0..2 {
                        let v = -2.0 * mu * dphi[b] * ny[j] * nx[i] * dp - 2.0 * mu * dphi[b] * ty[j] * tx[i] * ds;
                        out[bi(OP_W, a, b, i, j)] += v / (dt * dt);
                    }
                }
            }
        }
    }
    if with_w {
        let line_y = |c: Point| {
            integrate_line(trial, c, &radii, rule, st, |eta| {
                let y = trial.at(eta);
                let rn = (y[0] - c[0]).hypot(y[1] - c[1]);
                if rn == 0.0 {
                    return [0.0; 4];
                }
                let rb = RadialBundle::for_lag(rn, lag, dt, mat);
                let nb = shape(eta);
                [hy * nb[0] * rb.g3p, hy * nb[0] * rb.g3s, hy * nb[1] * rb.g3p, hy * nb[1] * rb.g3s]
            })
            .map_err(|e| e.0)
        };
        let ey_b = line_y(test.b)?;
        let ey_a = line_y(test.a)?;
        for a in 0..2 {
            for b in 0..2 {
                let dp = ey_b[b * 2] - ey_a[b * 2];
                let ds = ey_b[b * 2 + 1] - ey_a[b * 2 + 1];
                for i in 0..2 {
                    for j in 0..2 {
                        let v = -2.0 * mu * dpsi[a] * nx[i] * ny[j] * dp - 2.0 * mu * dpsi[a] * tx[i] * ty[j] * ds;
                        out[bi(OP_W, a, b, i, j)] += v / (dt * dt);
                    }
                }
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssemblyOptions {
    pub quad: QuadSettings,
    /// Assemble the hypersingular operator (needed by the symmetric formulation).
    pub with_w: bool,
    /// Worker threads for pair classes (0 = available parallelism).
    pub threads: usize,
}

impl Default for AssemblyOptions {
    fn default() -> Self {
        AssemblyOptions { quad: QuadSettings::default(), with_w: true, threads: 0 }
    }
}

type ClassKey = (i64, i64, i64, i64, i64, u8);

fn quantize(v: f64) -> i64 {
    (v * 1e11).round() as i64
}

struct PairRef {
    class: usize,
    rot: [[f64; 2]; 2],
}

struct ClassRep {
    test: Segment,
    trial: Segment,
    rel: PairRelation,
    ex: usize,
    ey: usize,
    dist: f64,
}

/// Element pairs grouped by congruence (translation and rotation of the pair).
pub struct PairClasses {
    n_elem: usize,
    pairs: Vec<PairRef>,
    reps: Vec<ClassRep>,
}

impl PairClasses {
    pub fn build(mesh: &BoundaryMesh) -> Self {
        let m = mesh.n_elements();
        let mut keys: HashMap<ClassKey, usize> = HashMap::new();
        let mut reps = Vec::new();
        let mut pairs = Vec::with_capacity(m * m);
        for ex in 0..m {
            let sx = mesh.segment(ex);
            let rot = rot_of(sx.t);
            for ey in 0..m {
                let sy = mesh.segment(ey);
                let rel = relation(mesh, ex, ey);
                let (a, b) = canonical_trial(&rot, &sx, &sy, rel);
                let tag = match rel {
                    PairRelation::Disjoint => 0,
                    PairRelation::Coincident => 1,
                    PairRelation::Adjacent { test_end, trial_end } => 2 + (2 * test_end + trial_end) as u8,
                };
                let key = (quantize(sx.len), quantize(a[0]), quantize(a[1]), quantize(b[0]), quantize(b[1]), tag);
                let next = reps.len();
                let class = *keys.entry(key).or_insert(next);
                if class == next {
                    let test = Segment::new([0.0, 0.0], [sx.len, 0.0]);
                    let trial = Segment::new(a, b);
                    let dist = if rel == PairRelation::Disjoint { segment_distance(&test, &trial) } else { 0.0 };
                    reps.push(ClassRep { test, trial, rel, ex, ey, dist });
                }
                pairs.push(PairRef { class, rot });
            }
        }
        PairClasses { n_elem: m, pairs, reps }
    }

    pub fn n_classes(&self) -> usize {
        self.reps.len()
    }

    /// Pair integrals of every class at one lag (`None` outside the light cone).
    pub fn eval_lag(&self, lag: usize, grid: &TimeGrid, mat: &Material, opts: &AssemblyOptions) -> Result<LagTable<'_>> {
        let rule = gauss_rule(opts.quad.order);
        let n = self.reps.len();
        let work = |c: usize| -> Result<Option<PairBlock>> {
            let rep = &self.reps[c];
            if mat.c_p * (lag as f64 + 1.0) * grid.dt <= rep.dist {
                return Ok(None);
            }
            pair_integrals(&rep.test, &rep.trial, rep.rel, lag, grid.dt, mat, &rule, &opts.quad, opts.with_w)
                .map(Some)
                .map_err(|change| Error::Quadrature { test: rep.ex, trial: rep.ey, lag, change })
        };
        let threads = if opts.threads == 0 {
            std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
        } else {
            opts.threads
        };
        let values = if threads <= 1 || n < 2 * threads {
            (0..n).map(work).collect::<Result<Vec<_>>>()?
        } else {
            let chunk = n.div_ceil(threads);
            let parts: Vec<Result<Vec<Option<PairBlock>>>> = std::thread::scope(|s| {
                let handles: Vec<_> = (0..threads)
                    .map(|t| {
                        let work = &work;
                        s.spawn(move || (t * chunk..((t + 1) * chunk).min(n)).map(work).collect::<Result<Vec<_>>>())
                    })
                    .collect();
                handles.into_iter().map(|h| h.join().expect("assembly worker panicked")).collect()
            });
            let mut all = Vec::with_capacity(n);
            for p in parts {
                all.extend(p?);
            }
            all
        };
        Ok(LagTable { classes: self, values })
    }
}

/// Class integrals of a single lag.
pub struct LagTable<'a> {
    classes: &'a PairClasses,
    values: Vec<Option<PairBlock>>,
}

impl LagTable<'_> {
    /// Pair integrals of `(test, trial)` in global coordinates.
    pub fn get(&self, test: usize, trial: usize) -> Option<PairBlock> {
        let p = &self.classes.pairs[test * self.classes.n_elem + trial];
        self.values[p.class].as_ref().map(|v| rotate_block(v, &p.rot))
    }

    pub fn is_empty(&self) -> bool {
        self.values.iter().all(Option::is_none)
    }
}

/// `M[ψ(e, a), u(node)] = ∫ Nₐ w_node` (scalar, per component).
pub fn mass_matrix(mesh: &BoundaryMesh, layout: &DofLayout) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(layout.n_psi, layout.n_u);
    for e in 0..mesh.n_elements() {
        let h = mesh.segment(e).len;
        let nodes = layout.element_u_nodes(mesh, e);
        for a in 0..2 {
            for (b, node) in nodes.iter().enumerate() {
                if let Some(nb) = node {
                    m[(2 * e + a, *nb)] += h * if a == b { 1.0 / 3.0 } else { 1.0 / 6.0 };
                }
            }
        }
    }
    m
}

/// Adds pair integrals into operator-shaped matrices. `v` is `2nψ × 2nψ`,
/// `k` is `2nψ × 2nU`, `w` is `2nU × 2nU` and holds the positive
/// hypersingular operator.
fn scatter_lag(
    table: &LagTable,
    mesh: &BoundaryMesh,
    layout: &DofLayout,
    mut v: Option<&mut DMatrix<f64>>,
    mut k: Option<&mut DMatrix<f64>>,
    mut w: Option<&mut DMatrix<f64>>,
) {
    let (np, nu) = (layout.n_psi, layout.n_u);
    for ex in 0..mesh.n_elements() {
        let ux = layout.element_u_nodes(mesh, ex);
        for ey in 0..mesh.n_elements() {
            let Some(pb) = table.get(ex, ey) else { continue };
            let uy = layout.element_u_nodes(mesh, ey);
            for a in 0..2 {
                for b in 0..2 {
                    for i in 0..2 {
                        for j in 0..2 {
                            if let Some(v) = v.as_deref_mut() {
                                v[(i * np + 2 * ex + a, j * np + 2 * ey + b)] += pb[bi(OP_V, a, b, i, j)];
                            }
                            if let (Some(k), Some(nb)) = (k.as_deref_mut(), uy[b]) {
                                k[(i * np + 2 * ex + a, j * nu + nb)] += pb[bi(OP_K, a, b, i, j)];
                            }
                            if let (Some(w), Some(na), Some(nb)) = (w.as_deref_mut(), ux[a], uy[b]) {
                                w[(i * nu + na, j * nu + nb)] -= pb[bi(OP_W, a, b, i, j)];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// One operator matrix at one lag: `V` is `2nψ × 2nψ`, `K` is `2nψ × 2nU`,
/// `W` is `2nU × 2nU`, `M` is `2nψ × 2nU` (lag-independent, `table` unused).
pub fn assemble_operator_block(kind: OperatorKind, table: &LagTable, mesh: &BoundaryMesh, layout: &DofLayout) -> DMatrix<f64> {
    let (np, nu) = (layout.n_psi, layout.n_u);
    match kind {
        OperatorKind::M => assemble_mass_block(mesh, layout),
        OperatorKind::V => {
            let mut out = DMatrix::zeros(2 * np, 2 * np);
            scatter_lag(table, mesh, layout, Some(&mut out), None, None);
            out
        }
        OperatorKind::K => {
            let mut out = DMatrix::zeros(2 * np, 2 * nu);
            scatter_lag(table, mesh, layout, None, Some(&mut out), None);
            out
        }
        OperatorKind::W => {
            let mut out = DMatrix::zeros(2 * nu, 2 * nu);
            scatter_lag(table, mesh, layout, None, None, Some(&mut out));
            out
        }
    }
}

/// One block row pair of the time-stepping system.
#[derive(Clone, Debug)]
pub struct SBlock {
    /// Rows of the single-layer equation: `2nψ × n`.
    pub top: DMatrix<f64>,
    /// Rows of the displacement equation: `2nU × n`; `None` when zero.
    pub bottom: Option<DMatrix<f64>>,
}

impl SBlock {
    /// `y += S x`.
    pub fn mul_add(&self, x: &DVector<f64>, y: &mut DVector<f64>) {
        let nt = self.top.nrows();
        y.rows_mut(0, nt).gemv(1.0, &self.top, x, 1.0);
        if let Some(b) = &self.bottom {
            let nb = b.nrows();
            y.rows_mut(nt, nb).gemv(1.0, b, x, 1.0);
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let (nt, n) = self.top.shape();
        let mut out = DMatrix::zeros(n, n);
        out.view_mut((0, 0), (nt, n)).copy_from(&self.top);
        if let Some(b) = &self.bottom {
            out.view_mut((nt, 0), (n - nt, n)).copy_from(b);
        }
        out
    }
}

/// Block lower-triangular Toeplitz system `Σ_{ℓ'≤ℓ} S⁽ˡ⁻ˡ'⁾ X_ℓ' = F_ℓ`.
#[derive(Clone, Debug)]
pub struct SystemBlocks {
    pub formulation: Formulation,
    pub n_psi: usize,
    pub n_u: usize,
    pub blocks: Vec<SBlock>,
}

impl SystemBlocks {
    pub fn block_size(&self) -> usize {
        2 * self.n_psi + 2 * self.n_u
    }

    pub fn n_steps(&self) -> usize {
        self.blocks.len()
    }

    /// The full space-time matrix (tests and small problems only).
    pub fn full_matrix(&self) -> DMatrix<f64> {
        let n = self.block_size();
        let nt = self.n_steps();
        let mut out = DMatrix::zeros(n * nt, n * nt);
        for (d, b) in self.blocks.iter().enumerate() {
            let dense = b.to_dense();
            for l in d..nt {
                out.view_mut((l * n, (l - d) * n), (n, n)).copy_from(&dense);
            }
        }
        out
    }
}

/// Builds `S⁽⁰⁾ … S⁽ᴺ⁻¹⁾`.
pub fn assemble_system(
    mesh: &BoundaryMesh,
    layout: &DofLayout,
    grid: &TimeGrid,
    mat: &Material,
    formulation: Formulation,
    opts: &AssemblyOptions,
) -> Result<SystemBlocks> {
    let symmetric = formulation == Formulation::Symmetric;
    let opts = AssemblyOptions { with_w: symmetric, ..*opts };
    let classes = PairClasses::build(mesh);
    let (np, nu) = (2 * layout.n_psi, 2 * layout.n_u);
    let n = np + nu;
    let half_m = assemble_mass_block(mesh, layout) * 0.5;
    let mut blocks = Vec::with_capacity(grid.n_steps);
    for lag in 0..grid.n_steps {
        let table = classes.eval_lag(lag, grid, mat, &opts)?;
        let mut top = DMatrix::zeros(np, n);
        let mut k = DMatrix::zeros(np, nu);
        let mut w = if symmetric { Some(DMatrix::zeros(nu, nu)) } else { None };
        {
            let mut v = top.view_mut((0, 0), (np, np)).into_owned();
            scatter_lag(&table, mesh, layout, Some(&mut v), Some(&mut k), w.as_mut());
            top.view_mut((0, 0), (np, np)).copy_from(&v);
        }
        if lag == 0 {
            k += &half_m;
        }
        top.view_mut((0, np), (np, nu)).copy_from(&(-&k));
        let bottom = if symmetric {
            let mut b = DMatrix::zeros(nu, n);
            b.view_mut((0, 0), (nu, np)).copy_from(&k.transpose());
            b.view_mut((0, np), (nu, nu)).copy_from(w.as_ref().expect("symmetric"));
            Some(b)
        } else if lag == 0 {
            let mut b = DMatrix::zeros(nu, n);
            b.view_mut((0, 0), (nu, np)).copy_from(&(&half_m * 2.0).transpose());
            Some(b)
        } else {
            None
        };
        blocks.push(SBlock { top, bottom });
    }
    Ok(SystemBlocks { formulation, n_psi: layout.n_psi, n_u: layout.n_u, blocks })
}

/// Mass coupling for both components: `2nψ × 2nU`.
pub fn assemble_mass_block(mesh: &BoundaryMesh, layout: &DofLayout) -> DMatrix<f64> {
    let (np, nu) = (layout.n_psi, layout.n_u);
    let m = mass_matrix(mesh, layout);
    let mut out = DMatrix::zeros(2 * np, 2 * nu);
    out.view_mut((0, 0), (np, nu)).copy_from(&m);
    out.view_mut((np, nu), (np, nu)).copy_from(&m);
    out
}

/// Which elements a load acts on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Selector {
    All,
    Region { region: Region },
    /// Elements whose midpoint lies in the closed box.
    Box { xmin: f64, xmax: f64, ymin: f64, ymax: f64 },
}

impl Selector {
    pub fn matches(&self, mesh: &BoundaryMesh, e: usize) -> bool {
        match self {
            Selector::All => true,
            Selector::Region { region } => mesh.regions[e] == *region,
            Selector::Box { xmin, xmax, ymin, ymax } => {
                let m = mesh.segment(e).at(0.5);
                let tol = 1e-12;
                m[0] >= xmin - tol && m[0] <= xmax + tol && m[1] >= ymin - tol && m[1] <= ymax + tol
            }
        }
    }
}

/// Surface traction `(fx, fy)(t, x, y)` on the selected elements.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Load {
    pub select: Selector,
    pub fx: Expr,
    pub fy: Expr,
}

/// Per-step load vectors `F_ℓ[u(i, m)] = (1/Δt) ∫_{tℓ}^{tℓ₊₁} ∫_Γ fᵢ w_m`.
/// ψ rows are zero.
pub fn assemble_rhs(mesh: &BoundaryMesh, layout: &DofLayout, grid: &TimeGrid, loads: &[Load]) -> Vec<DVector<f64>> {
    let n = layout.block_size();
    let mut out = vec![DVector::zeros(n); grid.n_steps];
    let rule = gauss_rule(8);
    for load in loads {
        if load.fx.is_zero() && load.fy.is_zero() {
            continue;
        }
        for e in 0..mesh.n_elements() {
            let nodes = layout.element_u_nodes(mesh, e);
            if nodes.iter().all(Option::is_none) || !load.select.matches(mesh, e) {
                continue;
            }
            let seg = mesh.segment(e);
            for (&xi, &wx) in rule.nodes.iter().zip(&rule.weights) {
                let x = seg.at(xi);
                let shp = shape(xi);
                for (l, f_l) in out.iter_mut().enumerate() {
                    let (t0, t1) = (grid.t(l), grid.t(l + 1));
                    let mut cuts = vec![t0];
                    for ex in [&load.fx, &load.fy] {
                        cuts.extend(ex.time_breakpoints(t0, t1, x[0], x[1]));
                    }
                    cuts.push(t1);
                    cuts.sort_by(f64::total_cmp);
                    let mut f = [0.0; 2];
                    for win in cuts.windows(2) {
                        let (a, b) = (win[0], win[1]);
                        if b - a <= 0.0 {
                            continue;
                        }
                        for (&tau, &wt) in rule.nodes.iter().zip(&rule.weights) {
                            let t = a + (b - a) * tau;
                            f[0] += (b - a) * wt * load.fx.eval(t, x[0], x[1]);
                            f[1] += (b - a) * wt * load.fy.eval(t, x[0], x[1]);
                        }
                    }
                    for (b, node) in nodes.iter().enumerate() {
                        let Some(m) = node else { continue };
                        for i in 0..2 {
                            f_l[layout.u_dof(i, *m)] += wx * seg.len * shp[b] * f[i] / grid.dt;
                        }
                    }
                }
            }
        }
    }
    out
}
