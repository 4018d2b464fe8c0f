//! Time marching and Uzawa against independent dense solves.

use nalgebra::DVector;
use tdbem::assembly::*;
use tdbem::contact::*;
use tdbem::geometry::*;
use tdbem::mot_solver::*;

mod common;

use common::toy::*;

#[test]
fn marching_matches_monolithic_solve() {
    for formulation in [Formulation::Nonsymmetric, Formulation::Symmetric] {
        let p = square(0.25, 6, 1.5, SideTag::Neumann, formulation, "0");
        let marcher = Marcher::new(&p.blocks).unwrap();
        let xs = marcher.march(&p.rhs).unwrap();
        let mono = solve_monolithic(&p.blocks, &p.rhs).unwrap();
        let scale = max_abs(&mono);
        assert!(scale > 0.0);
        let err = max_diff(&xs, &mono) / scale;
        assert!(err < 1e-10, "{formulation:?}: march vs monolithic {err:e}");
    }
}

#[test]
fn impulse_response_matches_marching() {
    let p = square(0.5, 5, 1.25, SideTag::Contact, Formulation::Nonsymmetric, "0");
    let marcher = Marcher::new(&p.blocks).unwrap();
    let mstar = p.coupling.normal.transpose();
    let z = marcher.impulse_response(&mstar).unwrap();
    for k in 0..mstar.ncols() {
        let mut rhs = vec![DVector::zeros(p.layout.block_size()); p.layout.n_steps];
        rhs[0] = mstar.column(k).into_owned();
        let xs = marcher.march(&rhs).unwrap();
        for (l, x) in xs.iter().enumerate() {
            let e = (x - z[l].column(k)).amax();
            assert!(e <= 1e-12 * x.amax().max(1.0), "column {k} step {l}: {e:e}");
        }
    }
}

#[test]
fn uzawa_matches_active_set_enumeration() {
    // 2 contact elements x 4 steps = 8 normal multipliers.
    let p = square(0.5, 4, 1.0, SideTag::Contact, Formulation::Nonsymmetric, "0");
    assert_eq!(p.layout.n_lambda * p.layout.n_steps, 8);
    let (b, r) = dense_contact(&p);
    let sols = enumerate_active_sets(&b, &r);
    assert_eq!(sols.len(), 1, "the complementarity problem should have one solution");
    let exact = &sols[0];
    assert!(exact.amax() > 0.0, "the load should activate contact");
    let marcher = Marcher::new(&p.blocks).unwrap();
    let solver = ContactSolver { marcher: &marcher, layout: &p.layout, coupling: &p.coupling, rhs: &p.rhs };
    let rho = 0.5 * rho_threshold(&b).unwrap();
    let cfg = UzawaConfig { rho, eps: 1e-12, max_iter: 200_000, mode: UzawaMode::Precomputed };
    let res = solver.solve(&cfg).unwrap();
    let lam = flat_normal(&res, &p.layout);
    let err = (&lam - exact).amax() / exact.amax();
    assert!(err < 1e-6, "uzawa vs enumeration: {err:e}");
}

#[test]
fn direct_and_precomputed_iterations_agree() {
    let p = square(0.5, 4, 1.0, SideTag::Contact, Formulation::Nonsymmetric, "0");
    let (b, _) = dense_contact(&p);
    let marcher = Marcher::new(&p.blocks).unwrap();
    let solver = ContactSolver { marcher: &marcher, layout: &p.layout, coupling: &p.coupling, rhs: &p.rhs };
    let rho = 0.5 * rho_threshold(&b).unwrap();
    let mut cfg = UzawaConfig { rho, eps: 1e-9, max_iter: 100_000, mode: UzawaMode::Precomputed };
    let pre = solver.solve(&cfg).unwrap();
    cfg.mode = UzawaMode::Direct;
    let dir = solver.solve(&cfg).unwrap();
    assert_eq!(pre.iterations, dir.iterations);
    let scale = pre.lambda.amax();
    assert!((&pre.lambda - &dir.lambda).amax() <= 1e-9 * scale);
    assert!(max_diff(&pre.x, &dir.x) <= 1e-9 * max_abs(&pre.x));
}

#[test]
fn distance_to_solution_never_grows() {
    let p = square(0.5, 4, 1.0, SideTag::Contact, Formulation::Nonsymmetric, "0");
    let (b, r) = dense_contact(&p);
    let exact = enumerate_active_sets(&b, &r).remove(0);
    let rho = 0.5 * rho_threshold(&b).unwrap();
    assert!(rho > 0.0);
    let mut lam = DVector::zeros(r.len());
    let mut prev = (&lam - &exact).norm();
    for k in 0..500 {
        lam = (&lam - (&b * &lam + &r) * rho).map(|v| v.max(0.0));
        let d = (&lam - &exact).norm();
        assert!(d <= prev * (1.0 + 1e-12) + 1e-15, "iteration {k}: {d:e} > {prev:e}");
        prev = d;
    }
}

#[test]
fn admissible_steps_give_the_same_solution() {
    let p = square(0.5, 4, 1.0, SideTag::Contact, Formulation::Nonsymmetric, "0");
    let (b, _) = dense_contact(&p);
    let marcher = Marcher::new(&p.blocks).unwrap();
    let solver = ContactSolver { marcher: &marcher, layout: &p.layout, coupling: &p.coupling, rhs: &p.rhs };
    let rho_max = rho_threshold(&b).unwrap();
    let eps = 1e-8;
    let run = |rho: f64| solver.solve(&UzawaConfig { rho, eps, max_iter: 200_000, mode: UzawaMode::Precomputed }).unwrap();
    let (a, c) = (run(0.5 * rho_max), run(0.2 * rho_max));
    let scale = max_abs(&a.x);
    assert!(max_diff(&a.x, &c.x) <= 10.0 * eps * scale.max(1.0));
}

#[test]
fn empty_contact_takes_one_iteration() {
    let p = square(0.5, 4, 1.0, SideTag::Neumann, Formulation::Nonsymmetric, "0");
    assert_eq!(p.layout.n_lambda, 0);
    let marcher = Marcher::new(&p.blocks).unwrap();
    let solver = ContactSolver { marcher: &marcher, layout: &p.layout, coupling: &p.coupling, rhs: &p.rhs };
    for mode in [UzawaMode::Precomputed, UzawaMode::Direct] {
        let res = solver.solve(&UzawaConfig { mode, ..Default::default() }).unwrap();
        assert_eq!(res.iterations, 1);
        let free = marcher.march(&p.rhs).unwrap();
        assert!(max_diff(&res.x, &free) == 0.0);
    }
}

#[test]
fn multipliers_respect_sign_and_complementarity() {
    let p = square(0.5, 4, 1.0, SideTag::Contact, Formulation::Nonsymmetric, "0");
    let (b, _) = dense_contact(&p);
    let marcher = Marcher::new(&p.blocks).unwrap();
    let solver = ContactSolver { marcher: &marcher, layout: &p.layout, coupling: &p.coupling, rhs: &p.rhs };
    let eps = 1e-7;
    let cfg = UzawaConfig { rho: 0.5 * rho_threshold(&b).unwrap(), eps, max_iter: 200_000, mode: UzawaMode::Precomputed };
    let res = solver.solve(&cfg).unwrap();
    for &i in &p.layout.tangent_idx {
        assert_eq!(res.lambda[i], 0.0);
    }
    let gmax = res.residual.iter().map(|r| r.amax()).fold(0.0, f64::max);
    for l in 0..p.layout.n_steps {
        let lam = normal_part(&res.lambda, &p.layout, l);
        for j in 0..p.layout.n_lambda {
            assert!(lam[j] >= 0.0);
            let c = lam[j].min(res.residual[l][j]).abs();
            assert!(c <= 10.0 * eps * gmax.max(1.0), "step {l} element {j}: {c:e}");
        }
    }
}
