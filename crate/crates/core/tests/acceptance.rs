//! Acceptance report: one PASS/FAIL line per criterion.
//!
//! The binary exits 0 once every check has been evaluated; a FAIL line is a
//! finding, not a crash. Set `TDBEM_ACCEPT_SKIP` to a comma-separated list of
//! criterion numbers to leave some out (they print SKIP).

mod common;

use nalgebra::DVector;
use tdbem::assembly::Formulation;
use tdbem::cli::{analytic_errors, contact_diagnostics, convergence, execute, preset, symmetric_s0, min_sym_eigenvalue, PRESETS};
use tdbem::contact::*;
use tdbem::geometry::{BoundaryMesh, SideTag};
use tdbem::mot_solver::{solve_monolithic, Marcher};
use tdbem::postprocess::{displacement_series, trace_at};

use common::oracles;
use common::toy::*;

// Example 1.
const EX1_PROBE_U2: f64 = 5e-2;
const EX1_U1_RATIO: f64 = 1e-2;
// Convergence windows.
const L2_ORDER: (f64, f64) = (1.2, 1.8);
const ENERGY_ORDER: (f64, f64) = (0.7, 1.3);
const CONVERGENCE_H: f64 = 0.1;
// Example 2, test 1.
const CLEARANCE_FLOOR: f64 = -1e-6;
const COMPLEMENTARITY_FACTOR: f64 = 1e-3;
const LAMBDA_ACTIVE_FRACTION: f64 = 0.1;
const LAMBDA_QUIET_FRACTION: f64 = 0.01;
// Bounce.
const ENERGY_DRIFT: f64 = 1e-3;
const ZIGZAG_FRACTION: f64 = 0.05;
const ZIGZAG_WINDOW: usize = 8;
// Oracles.
const KERNEL_TOL: f64 = 1e-8;
const MOT_TOL: f64 = 1e-10;
const LCP_TOL: f64 = 1e-6;

type Lines = Vec<(bool, String)>;

fn report(id: u32, title: &str, lines: Lines) -> bool {
    let pass = lines.iter().all(|l| l.0);
    println!("{} criterion {id}: {title}", if pass { "PASS" } else { "FAIL" });
    for (ok, text) in lines {
        println!("    [{}] {text}", if ok { "ok" } else { "x" });
    }
    pass
}

fn check(ok: bool, text: String) -> (bool, String) {
    (ok, text)
}

fn within(v: f64, (lo, hi): (f64, f64)) -> bool {
    v >= lo && v <= hi
}

fn ex1() -> Lines {
    let cfg = preset("1").unwrap();
    let run = execute(&cfg).unwrap();
    let a = analytic_errors(&run, cfg.analytic.unwrap());
    vec![
        check(
            a.max_probe_error_u2 <= EX1_PROBE_U2,
            format!("side-midpoint u2 error {:.3e} <= {EX1_PROBE_U2:e}", a.max_probe_error_u2),
        ),
        check(
            a.norm_u1 <= EX1_U1_RATIO * a.norm_u2,
            format!("||u1|| = {:.3e} <= {EX1_U1_RATIO:e} * ||u2|| = {:.3e}", a.norm_u1, EX1_U1_RATIO * a.norm_u2),
        ),
    ]
}

fn orders(formulation: Formulation) -> Lines {
    let mut base = preset("1").unwrap();
    base.formulation = formulation;
    base.refine_to(CONVERGENCE_H, Some(CONVERGENCE_H)).unwrap();
    let table = convergence(&base, 3).unwrap();
    let tag = format!("{formulation:?}").to_lowercase();
    if table.failed() {
        return vec![check(false, format!("{tag}: a level failed: {:?}", table.levels.iter().map(|l| &l.failure).collect::<Vec<_>>()))];
    }
    let errs = |q: &str| table.rows.iter().filter(|r| r.quantity == q).map(|r| format!("{:.3e}", r.error)).collect::<Vec<_>>().join(", ");
    let l2 = table.fitted("l2").unwrap_or(f64::NAN);
    let en = table.fitted("energy_squared").unwrap_or(f64::NAN);
    vec![
        check(within(l2, L2_ORDER), format!("{tag}: L2 order {l2:.3} in {L2_ORDER:?} (errors {})", errs("l2"))),
        check(
            within(en, ENERGY_ORDER),
            format!("{tag}: squared energy error order {en:.3} in {ENERGY_ORDER:?} (errors {})", errs("energy_squared")),
        ),
    ]
}

fn empty_contact() -> Lines {
    let run = execute(&preset("1").unwrap()).unwrap();
    vec![check(
        run.layout.n_lambda == 0 && run.solution.iterations == 1,
        format!("example 1: {} contact elements, {} Uzawa iteration(s)", run.layout.n_lambda, run.solution.iterations),
    )]
}

fn contact_test1() -> Lines {
    let cfg = preset("2t1").unwrap();
    let run = execute(&cfg).unwrap();
    let d = contact_diagnostics(&run);
    let layout = &run.layout;
    let nc = layout.n_lambda;
    let lam = &run.solution.lambda;
    let peak = layout.normal_idx.iter().map(|&i| lam[i].abs()).fold(0.0, f64::max);
    // Elements touching the ends of the contact zone are left out of the quiet window.
    let (xmin, xmax) = layout
        .contact_elements
        .iter()
        .flat_map(|&e| {
            let s = run.mesh.segment(e);
            [s.a[0], s.b[0]]
        })
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(x), hi.max(x)));
    let mut early = 0.0f64;
    let mut late = 0.0f64;
    for l in 0..layout.n_steps {
        let t = run.grid.t(l);
        for (j, &e) in layout.contact_elements.iter().enumerate() {
            let v = lam[layout.normal_idx[l * nc + j]].abs();
            let s = run.mesh.segment(e);
            let interior = s.a[0].min(s.b[0]) > xmin + 1e-12 && s.a[0].max(s.b[0]) < xmax - 1e-12;
            if t < 0.125 {
                early = early.max(v);
            }
            if (0.5..=1.0).contains(&t) && interior {
                late = late.max(v);
            }
        }
    }
    let bound = COMPLEMENTARITY_FACTOR * d.constraint_scale;
    vec![
        check(d.min_lambda >= 0.0, format!("min normal multiplier {:.3e} >= 0", d.min_lambda)),
        check(d.min_clearance >= CLEARANCE_FLOOR, format!("min u.nu - g at quadrature points {:.3e} >= {CLEARANCE_FLOOR:e}", d.min_clearance)),
        check(d.complementarity <= bound, format!("complementarity {:.3e} <= {bound:.3e}", d.complementarity)),
        check(
            peak > 0.0 && early >= LAMBDA_ACTIVE_FRACTION * peak,
            format!("lambda2 on [0, 0.125): max {early:.3e} >= {LAMBDA_ACTIVE_FRACTION} * peak {peak:.3e}"),
        ),
        check(late < LAMBDA_QUIET_FRACTION * peak, format!("lambda2 on [0.5, 1] away from ends: max {late:.3e} < {LAMBDA_QUIET_FRACTION} * peak")),
    ]
}

/// Largest step-scale sawtooth in component `c` of a trace: three consecutive
/// increments of alternating sign, measured by the smallest of them against the
/// local amplitude of the trace (largest |u| within the window).
fn worst_zigzag(tr: &[[f64; 2]], c: usize, from: usize) -> (f64, usize) {
    let mut worst = (0.0, 0);
    for k in from.max(1) + 1..tr.len() - 1 {
        let d = [tr[k - 1][c] - tr[k - 2][c], tr[k][c] - tr[k - 1][c], tr[k + 1][c] - tr[k][c]];
        if d[0] * d[1] >= 0.0 || d[1] * d[2] >= 0.0 {
            continue;
        }
        let lo = k.saturating_sub(ZIGZAG_WINDOW);
        let hi = (k + ZIGZAG_WINDOW).min(tr.len() - 1);
        let amp = tr[lo..=hi].iter().fold(0.0f64, |m, v| m.max(v[0].hypot(v[1])));
        if amp > 0.0 {
            let r = d.iter().fold(f64::INFINITY, |m, v| m.min(v.abs())) / amp;
            if r > worst.0 {
                worst = (r, k);
            }
        }
    }
    worst
}

fn bounce() -> Lines {
    let cfg = preset("bounce").unwrap();
    let run = execute(&cfg).unwrap();
    let cum = &run.energy.cumulative;
    let last = *cum.last().unwrap();
    let mut drift = 0.0f64;
    for (k, e) in cum.iter().enumerate() {
        // cumulative[k] is the work up to t_{k+1}
        if run.grid.t(k + 1) > 1.0 {
            drift = drift.max((e - last).abs() / last.abs());
        }
    }
    let layout = &run.layout;
    let nc = layout.n_lambda;
    let first_contact = (0..layout.n_steps)
        .find(|&l| (0..nc).any(|j| run.solution.lambda[layout.normal_idx[l * nc + j]] > 0.0))
        .unwrap_or(layout.n_steps);
    let series = displacement_series(&run.solution.x, layout);
    let mut worst = (0.0, String::new());
    for probe in &cfg.traces {
        let tr = trace_at(&run.mesh, layout, &series, probe.point());
        for c in 0..2 {
            let (r, k) = worst_zigzag(&tr, c, first_contact);
            if r > worst.0 {
                worst = (r, format!("{} u{} at t = {:.4}", probe.name, c + 1, run.grid.t(k)));
            }
        }
    }
    vec![
        check(drift <= ENERGY_DRIFT, format!("relative energy drift for t > 1: {drift:.3e} <= {ENERGY_DRIFT:e} (final energy {last:.6e})")),
        check(
            worst.0 <= ZIGZAG_FRACTION,
            format!("largest step-to-step zigzag after contact {:.3e} of local amplitude <= {ZIGZAG_FRACTION} ({})", worst.0, worst.1),
        ),
    ]
}

fn oracle_lines() -> Lines {
    let s = oracles::setup();
    let v = oracles::single_layer_error(&s);
    let (k, kt) = oracles::double_layer_errors(&s);
    let w = oracles::hypersingular_error(&s);
    let mut out: Lines = [("V", v), ("K", k), ("K* route", kt), ("W", w)]
        .into_iter()
        .map(|(name, e)| check(e.err < KERNEL_TOL, format!("(a) {name} entries vs brute force: {:.3e} < {KERNEL_TOL:e}", e.err)))
        .collect();
    let mut mot = 0.0f64;
    for formulation in [Formulation::Nonsymmetric, Formulation::Symmetric] {
        let p = square(0.25, 6, 1.5, SideTag::Neumann, formulation, "0");
        let xs = Marcher::new(&p.blocks).unwrap().march(&p.rhs).unwrap();
        let mono = solve_monolithic(&p.blocks, &p.rhs).unwrap();
        mot = mot.max(max_diff(&xs, &mono) / max_abs(&mono));
    }
    out.push(check(mot <= MOT_TOL, format!("(b) marching vs monolithic: {mot:.3e} <= {MOT_TOL:e}")));
    let p = contact_toy();
    let (b, r) = dense_contact(&p);
    let sols = enumerate_active_sets(&b, &r);
    let marcher = Marcher::new(&p.blocks).unwrap();
    let solver = ContactSolver { marcher: &marcher, layout: &p.layout, coupling: &p.coupling, rhs: &p.rhs };
    let rho = 0.5 * rho_threshold(&b).unwrap();
    let res = solver.solve(&UzawaConfig { rho, eps: 1e-12, max_iter: 200_000, mode: UzawaMode::Precomputed }).unwrap();
    let line = match sols.as_slice() {
        [exact] => {
            let err = (&flat_normal(&res, &p.layout) - exact).amax() / exact.amax();
            check(err <= LCP_TOL, format!("(c) Uzawa vs active-set enumeration ({} multipliers): {err:.3e} <= {LCP_TOL:e}", r.len()))
        }
        _ => check(false, format!("(c) enumeration found {} solutions", sols.len())),
    };
    out.push(line);
    out
}

/// 2 contact elements over 4 steps: 8 normal multipliers.
fn contact_toy() -> Problem {
    square(0.5, 4, 1.0, SideTag::Contact, Formulation::Nonsymmetric, "0")
}

fn uzawa_contraction() -> Lines {
    let p = contact_toy();
    let (b, r) = dense_contact(&p);
    let exact = enumerate_active_sets(&b, &r).remove(0);
    let threshold = rho_threshold(&b).unwrap();
    let rho = 0.5 * threshold;
    let mut lam = DVector::zeros(r.len());
    let mut prev = (&lam - &exact).norm();
    let mut grew = None;
    for k in 0..500 {
        lam = (&lam - (&b * &lam + &r) * rho).map(|v| v.max(0.0));
        let d = (&lam - &exact).norm();
        if d > prev * (1.0 + 1e-12) + 1e-15 && grew.is_none() {
            grew = Some(k);
        }
        prev = d;
    }
    let marcher = Marcher::new(&p.blocks).unwrap();
    let solver = ContactSolver { marcher: &marcher, layout: &p.layout, coupling: &p.coupling, rhs: &p.rhs };
    let eps = 1e-8;
    let run = |rho: f64| solver.solve(&UzawaConfig { rho, eps, max_iter: 200_000, mode: UzawaMode::Precomputed }).unwrap();
    let (a, c) = (run(0.5 * threshold), run(0.2 * threshold));
    let diff = max_diff(&a.x, &c.x) / max_abs(&a.x).max(1.0);
    vec![
        check(grew.is_none(), format!("distance to the fixed point non-increasing over 500 steps at rho = {rho:.3e} (threshold {threshold:.3e}), first growth: {grew:?}")),
        check(diff <= 10.0 * eps, format!("rho = threshold/2 and threshold/5 agree in U: {diff:.3e} <= {:e}", 10.0 * eps)),
    ]
}

fn positive_definite() -> Lines {
    PRESETS
        .iter()
        .map(|id| {
            let cfg = preset(id).unwrap();
            let mesh = BoundaryMesh::from_spec(&cfg.mesh).unwrap();
            let s0 = symmetric_s0(&mesh, cfg.dt(), &cfg.material, &cfg.assembly).unwrap();
            let m = min_sym_eigenvalue(&s0);
            check(m > 0.0, format!("preset {id}: smallest eigenvalue of sym(S0) {m:.3e} > 0 ({} dofs)", s0.nrows()))
        })
        .collect()
}

fn main() {
    let skip: Vec<u32> = std::env::var("TDBEM_ACCEPT_SKIP")
        .unwrap_or_default()
        .split(',')
        .filter_map(|s| s.trim().parse().ok())
        .collect();
    let criteria: [(u32, &str, fn() -> Lines); 8] = [
        (1, "example 1 against the closed-form solution", ex1),
        (2, "convergence orders on h = 0.1, 0.05, 0.025", || [orders(Formulation::Nonsymmetric), orders(Formulation::Symmetric)].concat()),
        (3, "empty contact boundary takes one Uzawa iteration", empty_contact),
        (4, "example 2 test 1 feasibility and complementarity", contact_test1),
        (5, "bounce energy conservation and smoothness", bounce),
        (6, "oracle equivalence", oracle_lines),
        (7, "Uzawa contraction and step independence", uzawa_contraction),
        (8, "positive definite symmetric part of S0 on preset meshes", positive_definite),
    ];
    let mut failed = 0;
    for (id, title, f) in criteria {
        if skip.contains(&id) {
            println!("SKIP criterion {id}: {title}");
            continue;
        }
        let t = std::time::Instant::now();
        if !report(id, title, f()) {
            failed += 1;
        }
        println!("    ({:.1} s)", t.elapsed().as_secs_f64());
    }
    println!("{failed} of 8 criteria failed");
}
