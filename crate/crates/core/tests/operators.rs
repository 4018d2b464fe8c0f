//! Galerkin entries against direct quadrature of the pointwise time-integrated
//! kernels.

mod common;

use common::oracles::*;

const TOL: f64 = 1e-8;

#[test]
fn single_layer_matches_direct_quadrature() {
    let w = single_layer_error(&setup());
    assert!(w.err < TOL, "{} ({:e})", w.at, w.err);
}

#[test]
fn double_layer_and_adjoint_match_direct_quadrature() {
    let (k, kt) = double_layer_errors(&setup());
    assert!(k.err < TOL, "{} ({:e})", k.at, k.err);
    assert!(kt.err < TOL, "{} ({:e})", kt.at, kt.err);
}

#[test]
fn hypersingular_matches_direct_quadrature() {
    let w = hypersingular_error(&setup());
    assert!(w.err < TOL, "{} ({:e})", w.at, w.err);
}
