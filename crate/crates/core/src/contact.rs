//! Unilateral contact: coupling matrices and the projected Uzawa iteration.
//!
//! Multipliers are piecewise constant per contact element and time step. The
//! normal part `λ_⊥` acts on the body as the traction `λ_⊥ ν`; the tangential
//! part is pinned to zero. The constraint is `u(t_{ℓ+1})·ν ≥ gap` tested with
//! each multiplier basis function, i.e. against the displacement accumulated
//! from the increments of steps `0..=ℓ`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::geometry::{BoundaryMesh, DofLayout, TimeGrid};
use crate::mot_solver::Marcher;
use crate::quadrature::gauss_rule;

/// Spatial coupling between normal multipliers and displacement dofs, and the
/// tested gap.
#[derive(Clone, Debug)]
pub struct CouplingMatrices {
    pub n_contact: usize,
    pub dt: f64,
    /// `N[j, u(i, m)] = ν_{j,i} ∫_{e_j} w_m` over the full per-step unknown vector.
    pub normal: DMatrix<f64>,
    /// `g̃_ℓ[j] = Δt ∫_{e_j} gap(x, t_{ℓ+1})`.
    pub gap: Vec<DVector<f64>>,
}

impl CouplingMatrices {
    pub fn new(mesh: &BoundaryMesh, layout: &DofLayout, grid: &TimeGrid, gap: &Expr) -> Self {
        let nc = layout.n_lambda;
        let n = layout.block_size();
        let mut normal = DMatrix::zeros(nc, n);
        let rule = gauss_rule(8);
        let mut gaps = vec![DVector::zeros(nc); grid.n_steps];
        for (j, &e) in layout.contact_elements.iter().enumerate() {
            let seg = mesh.segment(e);
            let nu = mesh.contact_dirs[e];
            for node in layout.element_u_nodes(mesh, e).iter() {
                if let Some(m) = node {
                    for i in 0..2 {
                        normal[(j, layout.u_dof(i, *m))] += nu[i] * seg.len / 2.0;
                    }
                }
            }
            if !gap.is_zero() {
                for (l, g) in gaps.iter_mut().enumerate() {
                    let t = grid.t(l + 1);
                    let mut acc = 0.0;
                    for (&xi, &w) in rule.nodes.iter().zip(&rule.weights) {
                        let x = seg.at(xi);
                        acc += w * gap.eval(t, x[0], x[1]);
                    }
                    g[j] = grid.dt * seg.len * acc;
                }
            }
        }
        CouplingMatrices { n_contact: nc, dt: grid.dt, normal, gap: gaps }
    }

    /// `M* Λ_⊥` for one step: the load vector of the contact traction.
    pub fn load(&self, lambda_normal: &DVector<f64>) -> DVector<f64> {
        self.normal.tr_mul(lambda_normal)
    }

    /// `(M̃(U − G))_⊥` per step from displacement increments.
    pub fn residual(&self, xs: &[DVector<f64>]) -> Vec<DVector<f64>> {
        let mut acc = DVector::zeros(self.n_contact);
        xs.iter()
            .zip(&self.gap)
            .map(|(x, g)| {
                acc += &self.normal * x;
                &acc * self.dt - g
            })
            .collect()
    }
}

/// Projection onto the admissible multipliers: `max(·, 0)` on `J_⊥`, zero on `J_∥`.
pub fn project_prc(w: &mut [f64], layout: &DofLayout) {
    for &i in &layout.normal_idx {
        w[i] = w[i].max(0.0);
    }
    for &i in &layout.tangent_idx {
        w[i] = 0.0;
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UzawaMode {
    /// Precompute the multiplier-to-constraint response once; iterations are cheap.
    Precomputed,
    /// Re-solve the full time-marching system at every iteration.
    Direct,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UzawaConfig {
    pub rho: f64,
    pub eps: f64,
    pub max_iter: usize,
    pub mode: UzawaMode,
}

impl Default for UzawaConfig {
    fn default() -> Self {
        UzawaConfig { rho: 1e3, eps: 1e-5, max_iter: 10_000, mode: UzawaMode::Precomputed }
    }
}

impl UzawaConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0) || !(self.eps > 0.0) || self.max_iter == 0 {
            return Err(Error::Config("uzawa needs rho > 0, eps > 0, max_iter >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct UzawaResult {
    /// States per step, consistent with `lambda`.
    pub x: Vec<DVector<f64>>,
    /// Full multiplier vector (`J_⊥` and `J_∥` entries per step).
    pub lambda: DVector<f64>,
    pub iterations: usize,
    /// Relative multiplier update of every iteration.
    pub history: Vec<f64>,
    /// `(M̃(U − G))_⊥` per step at the returned state.
    pub residual: Vec<DVector<f64>>,
}

/// Normal multipliers of step `l` from the full vector.
pub fn normal_part(lambda: &DVector<f64>, layout: &DofLayout, l: usize) -> DVector<f64> {
    let nc = layout.n_lambda;
    DVector::from_iterator(nc, (0..nc).map(|j| lambda[layout.normal_idx[l * nc + j]]))
}

/// Block lower-triangular Toeplitz map `Λ_⊥ ↦ (M̃ U(Λ))_⊥` with `B_d` the
/// response of the constraint `d` steps after a unit multiplier.
#[derive(Clone, Debug)]
pub struct ConstraintResponse {
    pub b: Vec<DMatrix<f64>>,
}

impl ConstraintResponse {
    pub fn build(marcher: &Marcher, coupling: &CouplingMatrices) -> Result<Self> {
        let nc = coupling.n_contact;
        if nc == 0 {
            return Ok(ConstraintResponse { b: vec![DMatrix::zeros(0, 0); marcher.blocks.n_steps()] });
        }
        let mstar = coupling.normal.transpose();
        let z = marcher.impulse_response(&mstar)?;
        let mut acc = DMatrix::zeros(nc, nc);
        let b = z
            .iter()
            .map(|zd| {
                acc += &coupling.normal * zd * coupling.dt;
                acc.clone()
            })
            .collect();
        Ok(ConstraintResponse { b })
    }

    /// `Σ_d B_d Λ_{ℓ−d}` for every step.
    pub fn apply(&self, lam: &[DVector<f64>]) -> Vec<DVector<f64>> {
        let nc = self.b.first().map_or(0, |b| b.nrows());
        (0..lam.len())
            .map(|l| {
                let mut r = DVector::zeros(nc);
                for d in 0..=l {
                    r.gemv(1.0, &self.b[d], &lam[l - d], 1.0);
                }
                r
            })
            .collect()
    }

    /// The full space-time matrix (small problems only).
    pub fn dense(&self) -> DMatrix<f64> {
        let nt = self.b.len();
        let nc = self.b.first().map_or(0, |b| b.nrows());
        let mut out = DMatrix::zeros(nt * nc, nt * nc);
        for (d, b) in self.b.iter().enumerate() {
            for l in d..nt {
                out.view_mut((l * nc, (l - d) * nc), (nc, nc)).copy_from(b);
            }
        }
        out
    }
}

/// Everything the Uzawa loop needs besides the configuration.
pub struct ContactSolver<'a> {
    pub marcher: &'a Marcher<'a>,
    pub layout: &'a DofLayout,
    pub coupling: &'a CouplingMatrices,
    pub rhs: &'a [DVector<f64>],
}

impl ContactSolver<'_> {
    /// States for given normal multipliers (one vector per step).
    pub fn state(&self, lam: &[DVector<f64>]) -> Result<Vec<DVector<f64>>> {
        let rhs: Vec<DVector<f64>> = if self.coupling.n_contact == 0 {
            self.rhs.to_vec()
        } else {
            self.rhs.iter().zip(lam).map(|(f, l)| f + self.coupling.load(l)).collect()
        };
        self.marcher.march(&rhs)
    }

    pub fn solve(&self, cfg: &UzawaConfig) -> Result<UzawaResult> {
        let response = match cfg.mode {
            UzawaMode::Precomputed => Some(ConstraintResponse::build(self.marcher, self.coupling)?),
            UzawaMode::Direct => None,
        };
        self.solve_with(cfg, response.as_ref())
    }

    /// Runs the iteration; with `response` the constraint is updated from it,
    /// otherwise every iteration marches the full system.
    pub fn solve_with(&self, cfg: &UzawaConfig, response: Option<&ConstraintResponse>) -> Result<UzawaResult> {
        cfg.validate()?;
        let layout = self.layout;
        let nt = layout.n_steps;
        let nc = layout.n_lambda;
        let free = match response {
            Some(_) => Some(self.coupling.residual(&self.marcher.march(self.rhs)?)),
            None => None,
        };
        let mut lam: Vec<DVector<f64>> = vec![DVector::zeros(nc); nt];
        let mut history = Vec::new();
        let mut full = DVector::zeros(layout.lambda_len());
        loop {
            let resid = match (response, &free) {
                (Some(resp), Some(free)) => resp.apply(&lam).into_iter().zip(free).map(|(a, b)| a + b).collect(),
                _ => self.coupling.residual(&self.state(&lam)?),
            };
            let mut next = DVector::zeros(layout.lambda_len());
            for l in 0..nt {
                for j in 0..nc {
                    next[layout.normal_idx[l * nc + j]] = lam[l][j] - cfg.rho * resid[l][j];
                }
            }
            project_prc(next.as_mut_slice(), layout);
            let diff = (&next - &full).norm();
            let size = next.norm();
            let rel = if diff == 0.0 { 0.0 } else { diff / size };
            history.push(rel);
            full = next;
            for (l, lam_l) in lam.iter_mut().enumerate() {
                *lam_l = normal_part(&full, layout, l);
            }
            let k = history.len();
            if rel <= cfg.eps {
                break;
            }
            if k > 20 && history[k - 1] >= 10.0 * history[k - 21] && history[k - 21..].windows(2).all(|w| w[1] > w[0]) {
                return Err(Error::UzawaDiverged { iterations: k, history });
            }
            if k >= cfg.max_iter {
                return Err(Error::UzawaMaxIter { iterations: k, last: rel, history });
            }
        }
        let x = self.state(&lam)?;
        let residual = self.coupling.residual(&x);
        Ok(UzawaResult { x, lambda: full, iterations: history.len(), history, residual })
    }
}

/// Largest admissible step for the precomputed map: `2 λ_min(sym(B⁻¹))`,
/// the infimum of `2 xᵀBx / |Bx|²`.
pub fn rho_threshold(b: &DMatrix<f64>) -> Result<f64> {
    let inv = b.clone().try_inverse().ok_or(Error::Singular { pivot: 0.0 })?;
    let sym = (&inv + inv.transpose()) * 0.5;
    let ev = sym.symmetric_eigenvalues();
    Ok(2.0 * ev.iter().cloned().fold(f64::INFINITY, f64::min))
}
