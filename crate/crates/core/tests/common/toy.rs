//! Small square problems shared by the solver tests and the acceptance report.

use nalgebra::{DMatrix, DVector};
use tdbem::assembly::*;
use tdbem::contact::*;
use tdbem::expr::Expr;
use tdbem::geometry::*;
use tdbem::mot_solver::*;

pub struct Problem {
    pub layout: DofLayout,
    pub blocks: SystemBlocks,
    pub rhs: Vec<DVector<f64>>,
    pub coupling: CouplingMatrices,
}

/// Unit square pressed down on its top side; `bottom` decides whether the
/// bottom side is a contact boundary or free.
pub fn square(h: f64, n_steps: usize, t_final: f64, bottom: SideTag, formulation: Formulation, gap: &str) -> Problem {
    let n = SideTag::Neumann;
    let mesh = BoundaryMesh::square(h, 1.0, [bottom, n, n, n]).unwrap();
    let grid = TimeGrid::new(t_final, n_steps).unwrap();
    let layout = DofLayout::new(&mesh, &grid);
    let mat = Material::new(1.0, 1.0, std::f64::consts::FRAC_1_SQRT_2).unwrap();
    let blocks = assemble_system(&mesh, &layout, &grid, &mat, formulation, &AssemblyOptions::default()).unwrap();
    let top = Load {
        select: Selector::Box { xmin: -0.5, xmax: 0.5, ymin: 0.5, ymax: 0.5 },
        fx: Expr::constant(0.0),
        fy: Expr::parse("-H(t)").unwrap(),
    };
    let rhs = assemble_rhs(&mesh, &layout, &grid, &[top]);
    let coupling = CouplingMatrices::new(&mesh, &layout, &grid, &Expr::parse(gap).unwrap());
    Problem { layout, blocks, rhs, coupling }
}

pub fn max_abs(xs: &[DVector<f64>]) -> f64 {
    xs.iter().map(|x| x.amax()).fold(0.0, f64::max)
}

pub fn max_diff(a: &[DVector<f64>], b: &[DVector<f64>]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).amax()).fold(0.0, f64::max)
}

/// Dense space-time data of the contact problem: `B`, the free residual and
/// the map back to states.
pub fn dense_contact(p: &Problem) -> (DMatrix<f64>, DVector<f64>) {
    let marcher = Marcher::new(&p.blocks).unwrap();
    let b = ConstraintResponse::build(&marcher, &p.coupling).unwrap().dense();
    let free = p.coupling.residual(&marcher.march(&p.rhs).unwrap());
    (b, stack(&free))
}

/// Solves the linear complementarity problem `0 ≤ Λ ⟂ BΛ + r ≥ 0` by trying
/// every active set.
pub fn enumerate_active_sets(b: &DMatrix<f64>, r: &DVector<f64>) -> Vec<DVector<f64>> {
    let n = r.len();
    assert!(n <= 8);
    let scale = r.amax().max(1e-300);
    let mut found = Vec::new();
    for mask in 0u32..(1 << n) {
        let act: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
        let mut lam = DVector::zeros(n);
        if !act.is_empty() {
            let sub = DMatrix::from_fn(act.len(), act.len(), |i, j| b[(act[i], act[j])]);
            let rhs = DVector::from_iterator(act.len(), act.iter().map(|&i| -r[i]));
            let Some(sol) = sub.lu().solve(&rhs) else { continue };
            for (k, &i) in act.iter().enumerate() {
                lam[i] = sol[k];
            }
        }
        let w = b * &lam + r;
        let ok = (0..n).all(|i| lam[i] >= -1e-12 * lam.amax().max(1.0) && w[i] >= -1e-10 * scale);
        if ok {
            found.push(lam);
        }
    }
    found
}

pub fn flat_normal(res: &UzawaResult, layout: &DofLayout) -> DVector<f64> {
    stack(&(0..layout.n_steps).map(|l| normal_part(&res.lambda, layout, l)).collect::<Vec<_>>())
}

