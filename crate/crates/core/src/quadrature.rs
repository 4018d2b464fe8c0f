//! Panel-based Gauss–Legendre integration over element pairs.
//!
//! Integrals are taken in the element parameters `ξ, η ∈ [0, 1]`; callers
//! supply lengths. Panels are cut at wavefront crossings (with a quadratic
//! map toward the crossing, which absorbs `√`-type behaviour) and graded
//! geometrically toward weak singularities.

use serde::{Deserialize, Serialize};

use crate::geometry::{Point, Segment};

#[derive(Clone, Debug, PartialEq)]
pub struct QuadratureRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

/// Gauss–Legendre rule on `[0, 1]`.
pub fn gauss_rule(order: usize) -> QuadratureRule {
    assert!(order >= 1, "order must be positive");
    let n = order;
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            if n == 1 {
                p1 = x;
                p0 = 1.0;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        if n == 1 {
            x = 0.0;
            dp = 1.0;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = 0.5 * (1.0 - x);
        nodes[n - 1 - i] = 0.5 * (1.0 + x);
        weights[i] = 0.5 * w;
        weights[n - 1 - i] = 0.5 * w;
    }
    QuadratureRule { nodes, weights }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PanelMap {
    Linear,
    /// `x = lo + (hi − lo)u²`
    ToLow,
    /// `x = hi − (hi − lo)u²`
    ToHigh,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Panel {
    pub lo: f64,
    pub hi: f64,
    pub map: PanelMap,
}

impl Panel {
    fn halves(&self) -> [Panel; 2] {
        let mid = 0.5 * (self.lo + self.hi);
        let (m0, m1) = match self.map {
            PanelMap::Linear => (PanelMap::Linear, PanelMap::Linear),
            PanelMap::ToLow => (PanelMap::ToLow, PanelMap::Linear),
            PanelMap::ToHigh => (PanelMap::Linear, PanelMap::ToHigh),
        };
        [Panel { lo: self.lo, hi: mid, map: m0 }, Panel { lo: mid, hi: self.hi, map: m1 }]
    }
}

/// Sorted parameters in `(0, 1)` where an integrand loses smoothness.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PanelSplit {
    pub breakpoints: Vec<f64>,
}

impl PanelSplit {
    pub fn new(mut pts: Vec<f64>) -> Self {
        pts.retain(|&p| p > 1e-12 && p < 1.0 - 1e-12);
        pts.sort_by(f64::total_cmp);
        pts.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
        PanelSplit { breakpoints: pts }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadSettings {
    /// Gauss points per panel.
    pub order: usize,
    /// Geometric panels toward a singular point.
    pub grading_levels: usize,
    pub grading_ratio: f64,
    /// Estimate the error by one panel halving and refine where needed.
    pub check: bool,
    pub tol: f64,
    pub max_depth: usize,
}

impl Default for QuadSettings {
    fn default() -> Self {
        QuadSettings { order: 8, grading_levels: 12, grading_ratio: 0.3, check: false, tol: 1e-8, max_depth: 12 }
    }
}

/// Parameters `η ∈ (0, 1)` with `|seg(η) − center| = radius`.
pub fn segment_circle_params(seg: &Segment, center: Point, radius: f64) -> Vec<f64> {
    let d = [seg.b[0] - seg.a[0], seg.b[1] - seg.a[1]];
    let w = [seg.a[0] - center[0], seg.a[1] - center[1]];
    let a = d[0] * d[0] + d[1] * d[1];
    let b = 2.0 * (d[0] * w[0] + d[1] * w[1]);
    let c = w[0] * w[0] + w[1] * w[1] - radius * radius;
    let disc = b * b - 4.0 * a * c;
    if disc <= 0.0 {
        return vec![];
    }
    let sq = disc.sqrt();
    let q = -0.5 * (b + b.signum() * sq);
    let mut roots = Vec::with_capacity(2);
    if q != 0.0 {
        roots.push(q / a);
        roots.push(c / q);
    } else {
        roots.push(0.0);
    }
    // A crossing at an endpoint still shapes the adjacent panel.
    roots.retain(|&t| t > -1e-12 && t < 1.0 + 1e-12);
    for t in roots.iter_mut() {
        *t = t.clamp(0.0, 1.0);
    }
    roots
}

/// Outer parameters where the inner integral over `trial` changes smoothness:
/// a front circle around `x(ξ)` passes a trial endpoint or touches the trial line.
pub fn outer_breakpoints(test: &Segment, trial: &Segment, radii: &[f64]) -> Vec<f64> {
    let mut pts = Vec::new();
    for &rho in radii {
        pts.extend(segment_circle_params(test, trial.a, rho));
        pts.extend(segment_circle_params(test, trial.b, rho));
        // n_y·(x(ξ) − a_y) = ±ρ with the foot point inside the trial segment.
        let n = trial.n;
        let f0 = n[0] * (test.a[0] - trial.a[0]) + n[1] * (test.a[1] - trial.a[1]);
        let f1 = n[0] * (test.b[0] - trial.a[0]) + n[1] * (test.b[1] - trial.a[1]);
        if (f1 - f0).abs() > 1e-14 {
            for target in [rho, -rho] {
                let xi = (target - f0) / (f1 - f0);
                if xi > 0.0 && xi < 1.0 {
                    let x = test.at(xi);
                    let s = trial.t[0] * (x[0] - trial.a[0]) + trial.t[1] * (x[1] - trial.a[1]);
                    if s > 0.0 && s < trial.len {
                        pts.push(xi);
                    }
                }
            }
        }
    }
    pts
}

/// How a pair of elements touches.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PairRelation {
    Disjoint,
    /// Shared vertex at `test_end` of the test element and `trial_end` of the trial element (0 = a, 1 = b).
    Adjacent { test_end: usize, trial_end: usize },
    Coincident,
}

/// Panels on `[0, 1]` from wavefront breakpoints and geometrically graded singular points.
pub fn build_panels(fronts: &[f64], singular: &[f64], st: &QuadSettings) -> Vec<Panel> {
    build_panels_graded(fronts, singular, &[], st.grading_levels, st)
}

/// As [`build_panels`], with extra plain cuts (no endpoint map).
pub fn build_panels_with(fronts: &[f64], singular: &[f64], plain: &[f64], st: &QuadSettings) -> Vec<Panel> {
    build_panels_graded(fronts, singular, plain, st.grading_levels, st)
}

/// Cuts that resolve a front circle nearly touching `seg` without crossing it
/// there: the intersection roots are complex or just outside `[0, 1]`, and the
/// panels are graded geometrically toward the closest point of the segment.
pub fn near_front_cuts(seg: &Segment, center: Point, radius: f64, ratio: f64, out: &mut Vec<f64>) {
    let w = [center[0] - seg.a[0], center[1] - seg.a[1]];
    let tau = (w[0] * seg.t[0] + w[1] * seg.t[1]) / seg.len;
    let d = (w[0] * seg.n[0] + w[1] * seg.n[1]).abs() / seg.len;
    let rr = radius / seg.len;
    let disc = rr * rr - d * d;
    let roots: Vec<(f64, f64)> = if disc >= 0.0 {
        let s = disc.sqrt();
        vec![(tau - s, 0.0), (tau + s, 0.0)]
    } else {
        vec![(tau, (-disc).sqrt())]
    };
    for (re, im) in roots {
        let p = re.clamp(0.0, 1.0);
        let delta = (re - p).hypot(im);
        if delta <= 1e-13 || delta >= 0.5 {
            continue;
        }
        graded_cuts(p, delta, ratio, out);
    }
}

/// Step of the geometric cuts toward a singularity just off the interval.
const NEAR_RATIO: f64 = 0.5;

/// Cuts at `p` and `p ± δ/ratioᵏ` inside `(0, 1)`, for a singularity at
/// distance `δ` from the point `p` of the parameter interval.
pub fn graded_cuts(p: f64, delta: f64, ratio: f64, out: &mut Vec<f64>) {
    if p > 0.0 && p < 1.0 {
        out.push(p);
    }
    let mut step = delta;
    while step < 1.0 {
        for q in [p - step, p + step] {
            if q > 0.0 && q < 1.0 {
                out.push(q);
            }
        }
        step /= ratio;
    }
}

fn build_panels_graded(fronts: &[f64], singular: &[f64], plain: &[f64], levels: usize, st: &QuadSettings) -> Vec<Panel> {
    let split = PanelSplit::new(fronts.iter().chain(singular.iter()).chain(plain.iter()).copied().collect());
    let mut pts = vec![0.0];
    pts.extend(split.breakpoints);
    pts.push(1.0);
    let is_front = |p: f64| fronts.iter().any(|&f| (f - p).abs() < 1e-12);
    let is_sing = |p: f64| singular.iter().any(|&f| (f - p).abs() < 1e-12);
    let mut panels = Vec::new();
    for w in pts.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        let (sl, sh) = (is_sing(lo), is_sing(hi));
        let (fl, fh) = (is_front(lo) && !sl, is_front(hi) && !sh);
        if sl || sh {
            // Geometric grading from the singular end(s).
            let mut sub = vec![(lo, hi, sl, sh)];
            if sl && sh {
                let mid = 0.5 * (lo + hi);
                sub = vec![(lo, mid, true, false), (mid, hi, false, true)];
            }
            for (a, b, ga, _) in sub {
                let len = b - a;
                let mut cuts = Vec::new();
                for k in 1..=levels {
                    cuts.push(len * st.grading_ratio.powi(k as i32));
                }
                // cuts are distances from the singular end, decreasing.
                let mut edges: Vec<f64> = if ga {
                    let mut e: Vec<f64> = cuts.iter().rev().map(|d| a + d).collect();
                    e.insert(0, a);
                    e.push(b);
                    e
                } else {
                    let mut e: Vec<f64> = cuts.iter().map(|d| b - d).collect();
                    e.insert(0, a);
                    e.push(b);
                    e
                };
                edges.dedup();
                for (i, ew) in edges.windows(2).enumerate() {
                    let innermost = if ga { i == 0 } else { i == edges.len() - 2 };
                    let map = if innermost {
                        if ga {
                            PanelMap::ToLow
                        } else {
                            PanelMap::ToHigh
                        }
                    } else if !ga && i == 0 && fl {
                        PanelMap::ToLow
                    } else if ga && i == edges.len() - 2 && fh {
                        PanelMap::ToHigh
                    } else {
                        PanelMap::Linear
                    };
                    panels.push(Panel { lo: ew[0], hi: ew[1], map });
                }
            }
        } else if fl && fh {
            let mid = 0.5 * (lo + hi);
            panels.push(Panel { lo, hi: mid, map: PanelMap::ToLow });
            panels.push(Panel { lo: mid, hi, map: PanelMap::ToHigh });
        } else if fl {
            panels.push(Panel { lo, hi, map: PanelMap::ToLow });
        } else if fh {
            panels.push(Panel { lo, hi, map: PanelMap::ToHigh });
        } else {
            panels.push(Panel { lo, hi, map: PanelMap::Linear });
        }
    }
    let mut points = singular.to_vec();
    points.extend_from_slice(fronts);
    enforce_grading(panels, &points, st.grading_ratio)
}

/// Splits panels that are long compared with their distance to a singular
/// point or front, so that every panel stays in the geometric progression
/// around it.
fn enforce_grading(panels: Vec<Panel>, singular: &[f64], ratio: f64) -> Vec<Panel> {
    if singular.is_empty() {
        return panels;
    }
    let factor = (1.0 - ratio) / ratio;
    let mut out = Vec::with_capacity(panels.len());
    let mut stack: Vec<Panel> = panels.into_iter().rev().collect();
    while let Some(p) = stack.pop() {
        let mut cut = None;
        for &sp in singular {
            if sp >= p.lo && sp <= p.hi {
                continue;
            }
            let (dist, near_lo) = if sp < p.lo { (p.lo - sp, true) } else { (sp - p.hi, false) };
            if dist < 1e-12 {
                continue;
            }
            let allowed = dist * factor;
            if p.hi - p.lo > allowed * (1.0 + 1e-6) + 1e-14 {
                cut = Some(if near_lo { p.lo + allowed } else { p.hi - allowed });
                break;
            }
        }
        match cut {
            None => out.push(p),
            Some(c) => {
                let m_lo = if p.map == PanelMap::ToLow { PanelMap::ToLow } else { PanelMap::Linear };
                let m_hi = if p.map == PanelMap::ToHigh { PanelMap::ToHigh } else { PanelMap::Linear };
                stack.push(Panel { lo: c, hi: p.hi, map: m_hi });
                stack.push(Panel { lo: p.lo, hi: c, map: m_lo });
            }
        }
    }
    out
}

fn norm<const N: usize>(v: &[f64; N]) -> f64 {
    v.iter().fold(0.0, |a, &x| a.max(x.abs()))
}

fn add_to<const N: usize>(acc: &mut [f64; N], v: &[f64; N], w: f64) {
    for k in 0..N {
        acc[k] += w * v[k];
    }
}

/// Composite rule on one panel.
pub fn integrate_panel<const N: usize, F: FnMut(f64) -> [f64; N]>(p: &Panel, rule: &QuadratureRule, f: &mut F) -> [f64; N] {
    let mut acc = [0.0; N];
    let len = p.hi - p.lo;
    for (u, w) in rule.nodes.iter().zip(&rule.weights) {
        let (x, jac) = match p.map {
            PanelMap::Linear => (p.lo + len * u, len),
            PanelMap::ToLow => (p.lo + len * u * u, 2.0 * len * u),
            PanelMap::ToHigh => (p.hi - len * u * u, 2.0 * len * u),
        };
        let v = f(x);
        add_to(&mut acc, &v, w * jac);
    }
    acc
}

/// Relative change of the last accepted halving, reported on failure.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NotConverged(pub f64);

/// Integrate over the panels. With `st.check`, each panel is compared with its
/// two halves and refined until the change is below `st.tol` relative to the
/// total, up to `st.max_depth` halvings.
pub fn integrate_1d<const N: usize, F: FnMut(f64) -> [f64; N]>(
    panels: &[Panel],
    rule: &QuadratureRule,
    st: &QuadSettings,
    f: &mut F,
) -> Result<[f64; N], NotConverged> {
    let mut coarse = Vec::with_capacity(panels.len());
    let mut total = [0.0; N];
    for p in panels {
        let v = integrate_panel(p, rule, f);
        add_to(&mut total, &v, 1.0);
        coarse.push(v);
    }
    if !st.check {
        return Ok(total);
    }
    // Relative to the summed panel magnitudes so that cancellation between
    // panels does not inflate the error estimate.
    let scale = coarse.iter().map(norm).sum::<f64>().max(norm(&total)).max(1e-300);
    let mut result = [0.0; N];
    let mut worst: f64 = 0.0;
    for (p, c) in panels.iter().zip(coarse) {
        let (v, change) = refine(p, c, rule, st, scale, 0, f);
        worst = worst.max(change);
        add_to(&mut result, &v, 1.0);
    }
    if worst > 1e-6 {
        return Err(NotConverged(worst));
    }
    Ok(result)
}

fn refine<const N: usize, F: FnMut(f64) -> [f64; N]>(
    p: &Panel,
    coarse: [f64; N],
    rule: &QuadratureRule,
    st: &QuadSettings,
    scale: f64,
    depth: usize,
    f: &mut F,
) -> ([f64; N], f64) {
    let [h0, h1] = p.halves();
    let a = integrate_panel(&h0, rule, f);
    let b = integrate_panel(&h1, rule, f);
    let mut fine = a;
    add_to(&mut fine, &b, 1.0);
    let mut diff = fine;
    add_to(&mut diff, &coarse, -1.0);
    let change = norm(&diff) / scale;
    if change <= st.tol || depth + 1 >= st.max_depth {
        return (fine, if change <= st.tol { 0.0 } else { change });
    }
    let (ra, ca) = refine(&h0, a, rule, st, scale, depth + 1, f);
    let (rb, cb) = refine(&h1, b, rule, st, scale, depth + 1, f);
    let mut out = ra;
    add_to(&mut out, &rb, 1.0);
    (out, ca.max(cb))
}

/// Inner and outer splits of a pair for one outer parameter `xi`.
pub fn split_at_wavefronts(test: &Segment, trial: &Segment, radii: &[f64], rel: PairRelation, xi: f64) -> (PanelSplit, PanelSplit) {
    let mut outer = outer_breakpoints(test, trial, radii);
    let x = test.at(xi);
    let mut inner: Vec<f64> = radii.iter().flat_map(|&r| segment_circle_params(trial, x, r)).collect();
    match rel {
        PairRelation::Coincident => {
            inner.push(xi);
            outer.push(0.5);
        }
        PairRelation::Adjacent { .. } | PairRelation::Disjoint => {}
    }
    (PanelSplit::new(outer), PanelSplit::new(inner))
}

/// `∫₀¹∫₀¹ f(ξ, η) dη dξ` over a test/trial pair.
pub fn integrate_pair<const N: usize, F: FnMut(f64, f64) -> [f64; N]>(
    test: &Segment,
    trial: &Segment,
    rel: PairRelation,
    radii: &[f64],
    rule: &QuadratureRule,
    st: &QuadSettings,
    mut f: F,
) -> Result<[f64; N], NotConverged> {
    let outer_fronts = outer_breakpoints(test, trial, radii);
    let mut outer_near = Vec::new();
    for &r in radii {
        near_front_cuts(test, trial.a, r, NEAR_RATIO, &mut outer_near);
        near_front_cuts(test, trial.b, r, NEAR_RATIO, &mut outer_near);
    }
    let (outer_sing, mild) = match rel {
        PairRelation::Disjoint => (vec![], false),
        PairRelation::Adjacent { test_end, .. } => (vec![test_end as f64], false),
        PairRelation::Coincident => (vec![0.0, 1.0], true),
    };
    let outer_panels = if mild {
        build_panels_graded(&outer_fronts, &outer_sing, &outer_near, 3, st)
    } else {
        build_panels_with(&outer_fronts, &outer_sing, &outer_near, st)
    };
    let mut inner_err: f64 = 0.0;
    let mut outer_f = |xi: f64| -> [f64; N] {
        let x = test.at(xi);
        let fronts: Vec<f64> = radii.iter().flat_map(|&r| segment_circle_params(trial, x, r)).collect();
        let mut near = Vec::new();
        let sing = match rel {
            PairRelation::Disjoint => vec![],
            PairRelation::Adjacent { trial_end, .. } => {
                let corner = if trial_end == 0 { trial.a } else { trial.b };
                let delta = (x[0] - corner[0]).hypot(x[1] - corner[1]) / trial.len;
                if delta > 1e-14 {
                    graded_cuts(trial_end as f64, delta, NEAR_RATIO, &mut near);
                    vec![]
                } else {
                    vec![trial_end as f64]
                }
            }
            PairRelation::Coincident => vec![xi],
        };
        for &r in radii {
            near_front_cuts(trial, x, r, NEAR_RATIO, &mut near);
        }
        let panels = build_panels_with(&fronts, &sing, &near, st);
        match integrate_1d(&panels, rule, st, &mut |eta| f(xi, eta)) {
            Ok(v) => v,
            Err(NotConverged(c)) => {
                inner_err = inner_err.max(c);
                [0.0; N]
            }
        }
    };
    let v = integrate_1d(&outer_panels, rule, st, &mut outer_f)?;
    if inner_err > 0.0 {
        return Err(NotConverged(inner_err));
    }
    Ok(v)
}

/// `∫₀¹ f(ξ) dξ` along `seg` for a kernel centered at `center`: panels are cut
/// where front circles around `center` cross the segment and graded toward
/// `center` when it lies on the segment.
pub fn integrate_line<const N: usize, F: FnMut(f64) -> [f64; N]>(
    seg: &Segment,
    center: Point,
    radii: &[f64],
    rule: &QuadratureRule,
    st: &QuadSettings,
    mut f: F,
) -> Result<[f64; N], NotConverged> {
    let fronts: Vec<f64> = radii.iter().flat_map(|&r| segment_circle_params(seg, center, r)).collect();
    let mut sing = Vec::new();
    let tol = 1e-10 * seg.len;
    for (p, end) in [(seg.a, 0.0), (seg.b, 1.0)] {
        if (p[0] - center[0]).hypot(p[1] - center[1]) < tol {
            sing.push(end);
        }
    }
    let mut near = Vec::new();
    for &r in radii {
        near_front_cuts(seg, center, r, NEAR_RATIO, &mut near);
    }
    let panels = build_panels_with(&fronts, &sing, &near, st);
    integrate_1d(&panels, rule, st, &mut f)
}
