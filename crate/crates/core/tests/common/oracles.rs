//! Brute-force Galerkin entries from the pointwise time-integrated kernels.
//!
//! The reference integrals use tanh-sinh rules on sub-intervals whose ends are
//! located by bisection (wavefront crossings, coincident points), so they share
//! no code with the panel scheme used by the assembler.

use tdbem::assembly::{assemble_operator_block, OperatorKind, PairClasses, AssemblyOptions};
use tdbem::geometry::{BoundaryMesh, DofLayout, Material, Point, Segment, TimeGrid};
use tdbem::kernels::{time_convolved_kernel, KernelKind};

type Vals = [f64; 16];

fn axpy(acc: &mut Vals, w: f64, v: &Vals) {
    for k in 0..16 {
        acc[k] += w * v[k];
    }
}

fn tanh_sinh<F: FnMut(f64) -> Vals>(a: f64, b: f64, mut f: F) -> Vals {
    let h = 1.0 / 16.0;
    let half = std::f64::consts::FRAC_PI_2;
    let mut acc = [0.0; 16];
    for k in -64i32..=64 {
        let t = k as f64 * h;
        let u = half * t.sinh();
        let x = u.tanh();
        let w = half * t.cosh() / (u.cosh() * u.cosh());
        if w < 1e-300 || x.abs() >= 1.0 {
            continue;
        }
        let s = 0.5 * (a + b) + 0.5 * (b - a) * x;
        // The closed-form kernels lose digits within ~1e-10 of a front; the
        // skipped end layers weigh less than that.
        let gap = 1e-10 * (b - a);
        if s <= a + gap || s >= b - gap {
            continue;
        }
        axpy(&mut acc, w * h * 0.5 * (b - a), &f(s));
    }
    acc
}

/// Roots in (0, 1) of `g` by dense sampling and bisection.
fn roots<G: Fn(f64) -> f64>(g: G) -> Vec<f64> {
    let n = 200;
    let mut out = Vec::new();
    let mut x0 = 0.0;
    let mut g0 = g(x0);
    for k in 1..=n {
        let x1 = k as f64 / n as f64;
        let g1 = g(x1);
        if g0 == 0.0 && x0 > 0.0 {
            out.push(x0);
        } else if g0 * g1 < 0.0 {
            let (mut lo, mut hi) = (x0, x1);
            for _ in 0..100 {
                let m = 0.5 * (lo + hi);
                if (g(m) > 0.0) == (g0 > 0.0) {
                    lo = m;
                } else {
                    hi = m;
                }
            }
            out.push(0.5 * (lo + hi));
        }
        x0 = x1;
        g0 = g1;
    }
    out
}

fn piecewise<F: FnMut(f64) -> Vals>(mut cuts: Vec<f64>, mut f: F) -> Vals {
    cuts.push(0.0);
    cuts.push(1.0);
    cuts.sort_by(f64::total_cmp);
    cuts.dedup_by(|a, b| (*a - *b).abs() < 1e-14);
    let mut acc = [0.0; 16];
    for w in cuts.windows(2) {
        axpy(&mut acc, 1.0, &tanh_sinh(w[0], w[1], &mut f));
    }
    acc
}

fn dist(p: Point, q: Point) -> f64 {
    (p[0] - q[0]).hypot(p[1] - q[1])
}

/// `∫_{sx}∫_{sy} f(ξ, η) hx hy` with splits at every circle `|x − y| = R`.
fn pair_oracle<F: FnMut(f64, f64) -> Vals>(sx: &Segment, sy: &Segment, radii: &[f64], singular: Option<(f64, f64)>, mut f: F) -> Vals {
    // Outer kinks: circles around the trial endpoints and tangency points.
    let mut outer = Vec::new();
    for &r in radii {
        for c in [sy.a, sy.b] {
            outer.extend(roots(|xi| dist(sx.at(xi), c) - r));
        }
        outer.extend(roots(|xi| {
            let x = sx.at(xi);
            let d = [x[0] - sy.a[0], x[1] - sy.a[1]];
            let along = d[0] * sy.t[0] + d[1] * sy.t[1];
            if along <= 0.0 || along >= sy.len {
                return 1.0;
            }
            (d[0] * sy.t[1] - d[1] * sy.t[0]).abs() - r
        }));
    }
    if let Some((xs, _)) = singular {
        if xs >= 0.0 {
            outer.push(xs);
        }
    }
    let scale = sx.len * sy.len;
    let mut v = piecewise(outer, |xi| {
        let x = sx.at(xi);
        let mut inner = Vec::new();
        for &r in radii {
            inner.extend(roots(|eta| dist(x, sy.at(eta)) - r));
        }
        match singular {
            Some((_, e)) if e < 0.0 => inner.push(xi),
            Some((_, e)) => inner.push(e),
            None => {}
        }
        piecewise(inner, |eta| f(xi, eta))
    });
    v.iter_mut().for_each(|x| *x *= scale);
    v
}

/// Index of `(a, b, i, j)` in the oracle output.
fn ix(a: usize, b: usize, i: usize, j: usize) -> usize {
    a * 8 + b * 4 + i * 2 + j
}

/// All 16 shape/component products of a 2×2 kernel.
fn expand(xi: f64, eta: f64, k: &[[f64; 2]; 2]) -> Vals {
    let mut out = [0.0; 16];
    for a in 0..2 {
        for b in 0..2 {
            for i in 0..2 {
                for j in 0..2 {
                    out[ix(a, b, i, j)] = hat(a, xi) * k[i][j] * hat(b, eta);
                }
            }
        }
    }
    out
}

fn radii(lag: usize, dt: f64, mat: &Material) -> Vec<f64> {
    let mut v = Vec::new();
    for off in [lag as f64 - 1.0, lag as f64, lag as f64 + 1.0] {
        if off > 0.0 {
            v.push(mat.c_s * off * dt);
            v.push(mat.c_p * off * dt);
        }
    }
    v
}

fn two_pieces() -> BoundaryMesh {
    let csv = "v,0,0\nv,0.5,0\nv,1,0\nv,0.2,1.1\nv,0.6,1.4\nv,1.1,1.5\n\
               e,0,1,neumann,0,0\ne,1,2,neumann,0,0\ne,3,4,neumann,0,0\ne,4,5,neumann,0,0\n";
    BoundaryMesh::from_csv(csv).unwrap()
}

fn material() -> Material {
    Material::new(1.0, 1.0, std::f64::consts::FRAC_1_SQRT_2).unwrap()
}

/// Hat of u node at local end `end` of element `e`.
fn hat(end: usize, xi: f64) -> f64 {
    if end == 0 {
        1.0 - xi
    } else {
        xi
    }
}

/// Largest deviation seen and where.
#[derive(Clone, Debug, Default)]
pub struct Worst {
    pub err: f64,
    pub at: String,
}

impl Worst {
    fn see(&mut self, e: f64, at: impl FnOnce() -> String) {
        if !(e <= self.err) {
            self.err = e;
            self.at = at();
        }
    }
}
pub struct Setup {
    mesh: BoundaryMesh,
    layout: DofLayout,
    grid: TimeGrid,
    mat: Material,
    classes: PairClasses,
}

pub fn setup() -> Setup {
    let mesh = two_pieces();
    let grid = TimeGrid::new(2.0, 4).unwrap();
    let layout = DofLayout::new(&mesh, &grid);
    assert_eq!(layout.n_u, 2);
    let classes = PairClasses::build(&mesh);
    Setup { mesh, layout, grid, mat: material(), classes }
}

/// `(element, local end)` pairs carrying u node `m`.
fn support(s: &Setup, m: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for e in 0..s.mesh.n_elements() {
        for (end, node) in s.layout.element_u_nodes(&s.mesh, e).iter().enumerate() {
            if *node == Some(m) {
                out.push((e, end));
            }
        }
    }
    out
}

fn rel_err(a: f64, b: f64, scale: f64) -> f64 {
    (a - b).abs() / scale
}

fn kernel_at(s: &Setup, kind: KernelKind, lag: usize, sx: &Segment, sy: &Segment, xi: f64, eta: f64) -> [[f64; 2]; 2] {
    let x = sx.at(xi);
    let y = sy.at(eta);
    if x == y {
        // rounding landed on the integrable singularity itself
        return [[0.0; 2]; 2];
    }
    time_convolved_kernel(kind, [x[0] - y[0], x[1] - y[1]], lag, &s.grid, &s.mat, sy.n, sx.n).0
}

pub fn single_layer_error(s: &Setup) -> Worst {
    let mut worst = Worst::default();
    let opts = AssemblyOptions::default();
    let np = s.layout.n_psi;
    for lag in 0..4 {
        let table = s.classes.eval_lag(lag, &s.grid, &s.mat, &opts).unwrap();
        let v = assemble_operator_block(OperatorKind::V, &table, &s.mesh, &s.layout);
        let scale = v.amax();
        let rd = radii(lag, s.grid.dt, &s.mat);
        // (test, trial, singular point as (ξ, η); η < 0 means η = ξ)
        let cases = [
            (0, 0, Some((-1.0, -1.0))),
            (0, 1, Some((1.0, 0.0))),
            (1, 0, Some((0.0, 1.0))),
            (2, 3, Some((1.0, 0.0))),
            (0, 2, None),
            (3, 1, None),
        ];
        for (ex, ey, singular) in cases {
            let (sx, sy) = (s.mesh.segment(ex), s.mesh.segment(ey));
            let direct = pair_oracle(&sx, &sy, &rd, singular, |xi, eta| {
                expand(xi, eta, &kernel_at(&s, KernelKind::V, lag, &sx, &sy, xi, eta))
            });
            for a in 0..2 {
                for b in 0..2 {
                    for i in 0..2 {
                        for j in 0..2 {
                            let d = direct[ix(a, b, i, j)];
                            let asm = v[(i * np + 2 * ex + a, j * np + 2 * ey + b)];
                            worst.see(rel_err(asm, d, scale), || format!("V lag {lag} pair ({ex},{ey}) {a}{b} {i}{j}: {asm} vs {d}"));
                        }
                    }
                }
            }
        }
    }
    worst
}

/// Returns the worst deviation of `K` and of the adjoint route.
pub fn double_layer_errors(s: &Setup) -> (Worst, Worst) {
    let (mut wk, mut wt) = (Worst::default(), Worst::default());
    let opts = AssemblyOptions::default();
    let (np, nu) = (s.layout.n_psi, s.layout.n_u);
    for lag in 0..4 {
        let table = s.classes.eval_lag(lag, &s.grid, &s.mat, &opts).unwrap();
        let k = assemble_operator_block(OperatorKind::K, &table, &s.mesh, &s.layout);
        let scale = k.amax().max(1e-300);
        let rd = radii(lag, s.grid.dt, &s.mat);
        // ψ on one piece against the hat on the other.
        for (ex, m) in [(0, 1), (1, 1), (2, 0), (3, 0)] {
            let sx = s.mesh.segment(ex);
            let mut direct = [0.0; 16];
            let mut adjoint = [0.0; 16];
            for &(ey, end) in &support(&s, m) {
                let sy = s.mesh.segment(ey);
                let d = pair_oracle(&sx, &sy, &rd, None, |xi, eta| {
                    expand(xi, eta, &kernel_at(&s, KernelKind::K, lag, &sx, &sy, xi, eta))
                });
                // Adjoint: hat at x on `sy`, ψ at y on `sx`, stored as (ψ end, hat end, i, j).
                let t = pair_oracle(&sy, &sx, &rd, None, |eta, xi| {
                    let kb = kernel_at(&s, KernelKind::Kstar, lag, &sy, &sx, eta, xi);
                    expand(xi, eta, &[[kb[0][0], kb[1][0]], [kb[0][1], kb[1][1]]])
                });
                for a in 0..2 {
                    for i in 0..2 {
                        for j in 0..2 {
                            direct[ix(a, 0, i, j)] += d[ix(a, end, i, j)];
                            adjoint[ix(a, 0, i, j)] += t[ix(a, end, i, j)];
                        }
                    }
                }
            }
            for a in 0..2 {
                for i in 0..2 {
                    for j in 0..2 {
                        let asm = k[(i * np + 2 * ex + a, j * nu + m)];
                        let d = direct[ix(a, 0, i, j)];
                        wk.see(rel_err(asm, d, scale), || format!("K lag {lag} elem {ex} node {m} {a} {i}{j}: {asm} vs {d}"));
                        let d = adjoint[ix(a, 0, i, j)];
                        wt.see(rel_err(asm, d, scale), || format!("K* lag {lag} elem {ex} node {m} {a} {i}{j}: {asm} vs {d}"));
                    }
                }
            }
        }
    }
    (wk, wt)
}

pub fn hypersingular_error(s: &Setup) -> Worst {
    let mut worst = Worst::default();
    let opts = AssemblyOptions::default();
    let nu = s.layout.n_u;
    for lag in 0..4 {
        let table = s.classes.eval_lag(lag, &s.grid, &s.mat, &opts).unwrap();
        let w = assemble_operator_block(OperatorKind::W, &table, &s.mesh, &s.layout);
        let scale = w.amax().max(1e-300);
        let rd = radii(lag, s.grid.dt, &s.mat);
        for (m, n) in [(0, 1), (1, 0)] {
            let mut direct = [[0.0; 2]; 2];
            for &(ex, ea) in &support(&s, m) {
                for &(ey, eb) in &support(&s, n) {
                    let (sx, sy) = (s.mesh.segment(ex), s.mesh.segment(ey));
                    let d = pair_oracle(&sx, &sy, &rd, None, |xi, eta| {
                        expand(xi, eta, &kernel_at(&s, KernelKind::W, lag, &sx, &sy, xi, eta))
                    });
                    for i in 0..2 {
                        for j in 0..2 {
                            direct[i][j] -= d[ix(ea, eb, i, j)];
                        }
                    }
                }
            }
            for i in 0..2 {
                for j in 0..2 {
                    let asm = w[(i * nu + m, j * nu + n)];
                    let d = direct[i][j];
                    worst.see(rel_err(asm, d, scale), || format!("W lag {lag} nodes ({m},{n}) {i}{j}: {asm} vs {d}"));
                }
            }
        }
    }
    worst
}
