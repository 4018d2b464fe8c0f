//! The 2D elastodynamic fundamental solution, its traction kernels and their
//! retarded time primitives.
//!
//! The tensor kernel is isotropic, `G(r, t) = a(|r|, t) r̂r̂ + b(|r|, t) I`, so
//! everything reduces to the two radial profiles `a`, `b`. The level-`n`
//! primitive
//!
//! ```text
//! Gₙ(r, s) = ∫₀ˢ (s − σ)ⁿ⁻¹/(n − 1)! G(r, σ) dσ
//! ```
//!
//! is available in closed form for `n = 1, 2, 3` (level 0 is `G` itself). The
//! closed forms are evaluated with the `1/r²` parts of the two waves cancelled
//! analytically, which keeps them accurate as `r → 0`.

use std::f64::consts::PI;

use crate::dual::{Dual2, Scalar};
use crate::error::{Error, Result};
use crate::geometry::{Material, Point, TimeGrid};

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct KernelBlock(pub [[f64; 2]; 2]);

impl KernelBlock {
    pub const ZERO: KernelBlock = KernelBlock([[0.0; 2]; 2]);

    pub fn transpose(&self) -> KernelBlock {
        let m = self.0;
        KernelBlock([[m[0][0], m[1][0]], [m[0][1], m[1][1]]])
    }

    pub fn scale(&self, s: f64) -> KernelBlock {
        let m = self.0;
        KernelBlock([[s * m[0][0], s * m[0][1]], [s * m[1][0], s * m[1][1]]])
    }

    pub fn add(&self, o: &KernelBlock) -> KernelBlock {
        let (m, n) = (self.0, o.0);
        KernelBlock([[m[0][0] + n[0][0], m[0][1] + n[0][1]], [m[1][0] + n[1][0], m[1][1] + n[1][1]]])
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().flatten().fold(0.0, |a, &x| a.max(x.abs()))
    }

    fn isotropic(a: f64, b: f64, r: Point, rn: f64) -> KernelBlock {
        let (u, v) = (r[0] / rn, r[1] / rn);
        KernelBlock([[a * u * u + b, a * u * v], [a * u * v, a * v * v + b]])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Wave {
    P,
    S,
}

impl Wave {
    pub fn speed(self, mat: &Material) -> f64 {
        match self {
            Wave::P => mat.c_p,
            Wave::S => mat.c_s,
        }
    }

    fn sign(self) -> f64 {
        match self {
            Wave::P => 1.0,
            Wave::S => -1.0,
        }
    }
}

/// Quantities shared by all closed forms of one wave at distance `r` and
/// travelled distance `q = c·s`.
struct Front<T> {
    q: f64,
    big_r: T,
    d: T,
    l: T,
}

fn front<T: Scalar>(r: T, q: f64) -> Option<Front<T>> {
    if !(q > r.re()) {
        return None;
    }
    let big_r = ((-r + q) * (r + q)).sqrt();
    let d = big_r + q;
    let l = (d / r).ln();
    Some(Front { q, big_r, d, l })
}

/// `∫ (Q − q)ⁿ⁻¹/(n−1)! (q² − …)`-type terms without their `Qⁿ⁺¹/r²` part, see module docs.
fn reduced_terms<T: Scalar>(level: usize, r: T, f: &Front<T>, wave: Wave) -> (T, T) {
    let q = f.q;
    let (rr, d, l) = (f.big_r, f.d, f.l);
    let r2 = r * r;
    let p3 = l * (q * q / 2.0) + r2 * l / 4.0 - rr * (0.75 * q);
    let (a, b2, b3) = match level {
        1 => (-(T::cst(q) / d), -(T::cst(q) / d) / 2.0 - l / 2.0, l),
        2 => {
            let a = -(rr * rr + rr * q + q * q) / (d * 3.0);
            (a, (a - l * q + rr) / 2.0, l * q - rr)
        }
        3 => {
            let a = (-(T::cst(2.0 * q * q * q) / d) - rr * (5.0 * q)) / 24.0 + r2 * l / 8.0;
            (a, (a - p3) / 2.0, p3)
        }
        _ => unreachable!("reduced terms exist for levels 1..=3"),
    };
    match wave {
        Wave::P => (a, b2),
        Wave::S => (a, b2 + b3),
    }
}

const POLY_K: [f64; 4] = [0.0, 1.0, 3.0, 12.0];

/// Radial profiles `(a, b)` of `Gₙ(r, s)`, generic so that radial derivatives
/// come from [`Dual2`].
pub fn radial_profile<T: Scalar>(level: usize, r: T, s: f64, mat: &Material) -> (T, T) {
    assert!(level <= 3, "level {level} not available");
    let scale = 1.0 / (2.0 * PI * mat.rho);
    let mut a = T::cst(0.0);
    let mut b = T::cst(0.0);
    let mut p_active = false;
    let mut s_active = false;
    for wave in [Wave::P, Wave::S] {
        let c = wave.speed(mat);
        let Some(f) = front(r, c * s) else { continue };
        match wave {
            Wave::P => p_active = true,
            Wave::S => s_active = true,
        }
        let sg = wave.sign();
        if level == 0 {
            let r2 = r * r;
            let q2 = f.q * f.q;
            a = a + (-(r2) + 2.0 * q2) / (f.big_r * r2) * (sg / c);
            let x = match wave {
                Wave::P => f.big_r,
                Wave::S => T::cst(q2) / f.big_r,
            };
            b = b - x / r2 * (sg / c);
        } else {
            let (ar, br) = reduced_terms(level, r, &f, wave);
            let cn = c.powi(level as i32 + 1);
            a = a + ar * (sg / cn);
            b = b - br * (sg / cn);
        }
    }
    if level > 0 && p_active && !s_active {
        let poly = T::cst(s.powi(level as i32 + 1) / POLY_K[level]) / (r * r);
        a = a + poly;
        b = b - poly / 2.0;
    }
    (a * scale, b * scale)
}

/// Level-`n` primitive of `g_c = c H(ct − r) / (2π √(c²t² − r²))` and its
/// derivative in `r`.
pub fn scalar_primitive(level: usize, r: f64, s: f64, c: f64) -> (f64, f64) {
    let q = c * s;
    if !(q > r) {
        return (0.0, 0.0);
    }
    let big_r = ((q - r) * (q + r)).sqrt();
    let l = ((q + big_r) / r).ln();
    let k = 1.0 / (2.0 * PI);
    match level {
        0 => (k * c / big_r, k * c * r / (big_r * big_r * big_r)),
        1 => (k * l, -k * q / (r * big_r)),
        2 => (k * (q * l - big_r) / c, -k * big_r / (r * c)),
        3 => (
            k * (0.5 * q * q * l + 0.25 * r * r * l - 0.75 * q * big_r) / (c * c),
            k * (0.5 * r * l - 0.5 * q * big_r / r) / (c * c),
        ),
        _ => panic!("level {level} not available"),
    }
}

fn check_wavefront(rn: f64, delta: f64, mat: &Material, guard: f64) -> Result<()> {
    for c in [mat.c_p, mat.c_s] {
        let gap = (c * delta - rn).abs();
        if gap < guard {
            return Err(Error::Wavefront { gap });
        }
    }
    Ok(())
}

/// Pointwise fundamental solution at `r = x − y` and time lag `delta`.
pub fn eval_g(r: Point, delta: f64, mat: &Material, guard: f64) -> Result<KernelBlock> {
    let rn = r[0].hypot(r[1]);
    check_wavefront(rn, delta, mat, guard)?;
    Ok(g_at_level(0, r, delta, mat))
}

/// `Gₙ(r, s)` as a 2×2 block.
pub fn g_at_level(level: usize, r: Point, s: f64, mat: &Material) -> KernelBlock {
    let rn = r[0].hypot(r[1]);
    if !(s > 0.0) || !(mat.c_p * s > rn) {
        return KernelBlock::ZERO;
    }
    let (a, b) = radial_profile(level, rn, s, mat);
    KernelBlock::isotropic(a, b, r, rn)
}

/// First and second partial derivatives of `Gₙ` in the components of `r`:
/// `d1[k][i][j] = ∂ₖGᵢⱼ`, `d2[m][k][i][j] = ∂ₘ∂ₖGᵢⱼ`.
fn g_derivatives(level: usize, r: Point, s: f64, mat: &Material) -> ([[[f64; 2]; 2]; 2], [[[[f64; 2]; 2]; 2]; 2]) {
    let rn = r[0].hypot(r[1]);
    let mut d1 = [[[0.0; 2]; 2]; 2];
    let mut d2 = [[[[0.0; 2]; 2]; 2]; 2];
    if !(s > 0.0) || !(mat.c_p * s > rn) {
        return (d1, d2);
    }
    let x = Dual2::var(rn);
    let (a, b) = radial_profile(level, x, s, mat);
    let alpha = a / (x * x);
    let (al, al1, al2) = (alpha.v, alpha.d1, alpha.d2);
    let (b1, b2) = (b.d1, b.d2);
    let u = [r[0] / rn, r[1] / rn];
    let dl = |p: usize, q: usize| if p == q { 1.0 } else { 0.0 };
    for k in 0..2 {
        for i in 0..2 {
            for j in 0..2 {
                d1[k][i][j] = al1 * u[k] * r[i] * r[j] + al * (dl(i, k) * r[j] + dl(j, k) * r[i]) + b1 * u[k] * dl(i, j);
                for m in 0..2 {
                    let dmu = (dl(m, k) - u[m] * u[k]) / rn;
                    d2[m][k][i][j] = al2 * u[m] * u[k] * r[i] * r[j]
                        + al1 * dmu * r[i] * r[j]
                        + al1 * u[k] * (dl(i, m) * r[j] + dl(j, m) * r[i])
                        + al1 * u[m] * (dl(i, k) * r[j] + dl(j, k) * r[i])
                        + al * (dl(i, k) * dl(j, m) + dl(j, k) * dl(i, m))
                        + b2 * u[m] * u[k] * dl(i, j)
                        + b1 * dmu * dl(i, j);
                }
            }
        }
    }
    (d1, d2)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TractionKernels {
    /// `K[i][j]`: traction component `j` at `y` (normal `n_y`) of the field `y ↦ G(x − y) eᵢ`.
    pub k: KernelBlock,
    /// `K*[i][j]`: traction component `i` at `x` (normal `n_x`) of the field `x ↦ G(x − y) eⱼ`.
    pub kstar: KernelBlock,
    /// `W[i][j]`: traction component `i` at `x` of the field `x ↦ K(x − y, n_y)[·][j]`.
    pub w: KernelBlock,
}

/// Traction kernels of `Gₙ` at level `n` (0 is pointwise).
pub fn traction_kernels_at_level(level: usize, r: Point, s: f64, mat: &Material, n_y: Point, n_x: Point) -> TractionKernels {
    let (d1, d2) = g_derivatives(level, r, s, mat);
    let (lam, mu) = (mat.lambda(), mat.mu());
    // T[i][j]: traction component j, normal n, of the field v_j = G_ij(r) under +∂.
    let traction = |n: Point| {
        let mut t = [[0.0; 2]; 2];
        for i in 0..2 {
            let div = d1[0][i][0] + d1[1][i][1];
            for j in 0..2 {
                let mut v = lam * n[j] * div;
                for l in 0..2 {
                    v += mu * (d1[l][i][j] + d1[j][i][l]) * n[l];
                }
                t[i][j] = v;
            }
        }
        t
    };
    let ty = traction(n_y);
    let tx = traction(n_x);
    let mut k = [[0.0; 2]; 2];
    let mut kstar = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            k[i][j] = -ty[i][j];
            kstar[i][j] = tx[j][i];
        }
    }
    // grad[m][i] = ∂ₘ w_i for w_i = K_ij = −T_ij(r, n_y), j fixed.
    let mut w = [[0.0; 2]; 2];
    for j in 0..2 {
        let mut grad = [[0.0; 2]; 2];
        for m in 0..2 {
            for i in 0..2 {
                let div = d2[m][0][i][0] + d2[m][1][i][1];
                let mut v = lam * n_y[j] * div;
                for l in 0..2 {
                    v += mu * (d2[m][l][i][j] + d2[m][j][i][l]) * n_y[l];
                }
                grad[m][i] = -v;
            }
        }
        let div_w = grad[0][0] + grad[1][1];
        for i in 0..2 {
            let mut v = lam * n_x[i] * div_w;
            for m in 0..2 {
                v += mu * (grad[m][i] + grad[i][m]) * n_x[m];
            }
            w[i][j] = v;
        }
    }
    TractionKernels { k: KernelBlock(k), kstar: KernelBlock(kstar), w: KernelBlock(w) }
}

/// Pointwise traction kernels.
pub fn eval_traction_kernels(r: Point, delta: f64, mat: &Material, n_y: Point, n_x: Point, guard: f64) -> Result<TractionKernels> {
    check_wavefront(r[0].hypot(r[1]), delta, mat, guard)?;
    Ok(traction_kernels_at_level(0, r, delta, mat, n_y, n_x))
}

/// Radii where the kernels of a given lag switch on: `c·s·Δt` for both waves
/// and the three time offsets of the second difference.
#[derive(Clone, Debug, PartialEq)]
pub struct WavefrontSet {
    pub radii: Vec<f64>,
}

impl WavefrontSet {
    /// Fronts of a single lag `delta`.
    pub fn for_delta(delta: f64, mat: &Material) -> Self {
        if !(delta > 0.0) {
            return WavefrontSet { radii: vec![] };
        }
        WavefrontSet { radii: vec![mat.c_s * delta, mat.c_p * delta] }
    }

    /// All fronts entering the lag-`lag` block of the energetic pairing.
    pub fn for_lag(lag: usize, dt: f64, mat: &Material) -> Self {
        let mut radii = Vec::with_capacity(6);
        for off in [lag as f64 - 1.0, lag as f64, lag as f64 + 1.0] {
            if off > 0.0 {
                radii.push(mat.c_s * off * dt);
                radii.push(mat.c_p * off * dt);
            }
        }
        radii.sort_by(f64::total_cmp);
        radii.dedup();
        WavefrontSet { radii }
    }

    pub fn reach(&self) -> f64 {
        self.radii.last().copied().unwrap_or(0.0)
    }
}

/// `f((d+1)Δt) − 2f(dΔt) + f((d−1)Δt)` with `f` vanishing at non-positive times.
pub fn second_difference<F: FnMut(f64) -> f64>(lag: usize, dt: f64, mut f: F) -> f64 {
    let d = lag as f64;
    let mut v = f((d + 1.0) * dt);
    if lag >= 1 {
        v -= 2.0 * f(d * dt);
    }
    if lag >= 2 {
        v += f((d - 1.0) * dt);
    }
    v
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KernelKind {
    V,
    K,
    Kstar,
    W,
}

/// Kernel of the lag-`lag` Galerkin block after exact time integration against
/// the energetic basis pairing:
/// `V: D²G₁`, `K: D²K₂/Δt`, `K*: D²K*₂/Δt`, `W: D²W₃/Δt²`.
pub fn time_convolved_kernel(kind: KernelKind, r: Point, lag: usize, grid: &TimeGrid, mat: &Material, n_y: Point, n_x: Point) -> KernelBlock {
    let dt = grid.dt;
    let eval = |s: f64| -> KernelBlock {
        match kind {
            KernelKind::V => g_at_level(1, r, s, mat),
            KernelKind::K => traction_kernels_at_level(2, r, s, mat, n_y, n_x).k,
            KernelKind::Kstar => traction_kernels_at_level(2, r, s, mat, n_y, n_x).kstar,
            KernelKind::W => traction_kernels_at_level(3, r, s, mat, n_y, n_x).w,
        }
    };
    let scale = match kind {
        KernelKind::V => 1.0,
        KernelKind::K | KernelKind::Kstar => 1.0 / dt,
        KernelKind::W => 1.0 / (dt * dt),
    };
    let mut out = [[0.0; 2]; 2];
    let blocks: Vec<(f64, KernelBlock)> = {
        let d = lag as f64;
        let mut v = vec![(1.0, eval((d + 1.0) * dt))];
        if lag >= 1 {
            v.push((-2.0, eval(d * dt)));
        }
        if lag >= 2 {
            v.push((1.0, eval((d - 1.0) * dt)));
        }
        v
    };
    for (w, b) in blocks {
        for i in 0..2 {
            for j in 0..2 {
                out[i][j] += scale * w * b.0[i][j];
            }
        }
    }
    KernelBlock(out)
}

/// Every radial quantity the Galerkin integrands need at one distance,
/// already combined over the second difference of a lag.
///
/// `a_n, b_n`: profiles of `Gₙ`; `g_n*`: scalar primitives of both waves;
/// `dg_n*`: their `r`-derivatives.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RadialBundle {
    pub a1: f64,
    pub b1: f64,
    pub a2: f64,
    pub b2: f64,
    pub a3: f64,
    pub b3: f64,
    pub g1p: f64,
    pub g1s: f64,
    pub g2p: f64,
    pub g2s: f64,
    pub dg2p: f64,
    pub dg2s: f64,
    pub g3p: f64,
    pub g3s: f64,
    pub dg3p: f64,
    pub dg3s: f64,
}

impl RadialBundle {
    /// Adds `w ×` the quantities at `(r, s)`.
    pub fn accumulate(&mut self, r: f64, s: f64, mat: &Material, w: f64) {
        let k2pi = 1.0 / (2.0 * PI);
        let scale = k2pi / mat.rho;
        let r2 = r * r;
        let mut p_active = false;
        let mut s_active = false;
        for wave in [Wave::P, Wave::S] {
            let c = wave.speed(mat);
            let q = c * s;
            if !(q > r) {
                continue;
            }
            match wave {
                Wave::P => p_active = true,
                Wave::S => s_active = true,
            }
            let big_r = ((q - r) * (q + r)).sqrt();
            let d = q + big_r;
            let l = (d / r).ln();
            let p3 = 0.5 * q * q * l + 0.25 * r2 * l - 0.75 * q * big_r;
            let ar1 = -q / d;
            let ar2 = -(big_r * big_r + big_r * q + q * q) / (3.0 * d);
            let ar3 = (-2.0 * q * q * q / d - 5.0 * q * big_r) / 24.0 + r2 * l / 8.0;
            let mut br1 = -q / (2.0 * d) - 0.5 * l;
            let mut br2 = 0.5 * (ar2 - q * l + big_r);
            let mut br3 = 0.5 * (ar3 - p3);
            if wave == Wave::S {
                br1 += l;
                br2 += q * l - big_r;
                br3 += p3;
            }
            let sg = wave.sign() * w * scale;
            let (c2, c3) = (c * c, c * c * c);
            let c4 = c2 * c2;
            self.a1 += sg * ar1 / c2;
            self.b1 -= sg * br1 / c2;
            self.a2 += sg * ar2 / c3;
            self.b2 -= sg * br2 / c3;
            self.a3 += sg * ar3 / c4;
            self.b3 -= sg * br3 / c4;
            let g1 = w * k2pi * l;
            let g2 = w * k2pi * (q * l - big_r) / c;
            let dg2 = -w * k2pi * big_r / (r * c);
            let g3 = w * k2pi * p3 / c2;
            let dg3 = w * k2pi * (0.5 * r * l - 0.5 * q * big_r / r) / c2;
            match wave {
                Wave::P => {
                    self.g1p += g1;
                    self.g2p += g2;
                    self.dg2p += dg2;
                    self.g3p += g3;
                    self.dg3p += dg3;
                }
                Wave::S => {
                    self.g1s += g1;
                    self.g2s += g2;
                    self.dg2s += dg2;
                    self.g3s += g3;
                    self.dg3s += dg3;
                }
            }
        }
        if p_active && !s_active {
            let base = w * scale / r2;
            let (p1, p2, p3) = (s * s * base, s * s * s * base / 3.0, s * s * s * s * base / 12.0);
            self.a1 += p1;
            self.b1 -= 0.5 * p1;
            self.a2 += p2;
            self.b2 -= 0.5 * p2;
            self.a3 += p3;
            self.b3 -= 0.5 * p3;
        }
    }

    /// Quantities of lag `lag` combined as `f((d+1)Δt) − 2f(dΔt) + f((d−1)Δt)`.
    pub fn for_lag(r: f64, lag: usize, dt: f64, mat: &Material) -> Self {
        let mut b = RadialBundle::default();
        let d = lag as f64;
        b.accumulate(r, (d + 1.0) * dt, mat, 1.0);
        if lag >= 1 {
            b.accumulate(r, d * dt, mat, -2.0);
        }
        if lag >= 2 {
            b.accumulate(r, (d - 1.0) * dt, mat, 1.0);
        }
        b
    }
}
