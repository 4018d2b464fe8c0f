//! Marching-on-in-time solver for the block lower-triangular Toeplitz system
//! `Σ_{d=0}^{ℓ} S⁽ᵈ⁾ X_{ℓ−d} = F_ℓ`.

use nalgebra::{DMatrix, DVector, LU, Dyn};

use crate::assembly::SystemBlocks;
use crate::error::{Error, Result};

/// LU factors of the diagonal block `S⁽⁰⁾`.
pub struct DiagonalSolver {
    lu: LU<f64, Dyn, Dyn>,
    pub n: usize,
    /// Smallest pivot magnitude relative to the largest.
    pub pivot_ratio: f64,
}

impl DiagonalSolver {
    pub fn new(s0: &DMatrix<f64>) -> Result<Self> {
        let n = s0.nrows();
        if s0.ncols() != n {
            return Err(Error::Dimension(format!("S0 is {}x{}", n, s0.ncols())));
        }
        let lu = s0.clone().lu();
        let u = lu.u();
        let diag: Vec<f64> = (0..n).map(|i| u[(i, i)].abs()).collect();
        let max = diag.iter().cloned().fold(0.0, f64::max);
        let min = diag.iter().cloned().fold(f64::INFINITY, f64::min);
        let ratio = if max > 0.0 { min / max } else { 0.0 };
        if !(ratio > 1e-14) {
            return Err(Error::Singular { pivot: min });
        }
        Ok(DiagonalSolver { lu, n, pivot_ratio: ratio })
    }

    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        self.lu.solve(b).expect("factorization checked")
    }

    pub fn solve_mat(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.lu.solve(b).expect("factorization checked")
    }
}

/// Time-stepping solver bound to assembled blocks.
pub struct Marcher<'a> {
    pub blocks: &'a SystemBlocks,
    pub diag: DiagonalSolver,
}

impl<'a> Marcher<'a> {
    pub fn new(blocks: &'a SystemBlocks) -> Result<Self> {
        let s0 = blocks.blocks.first().ok_or_else(|| Error::Dimension("no time steps".into()))?.to_dense();
        Ok(Marcher { blocks, diag: DiagonalSolver::new(&s0)? })
    }

    /// Solves for all steps; `rhs[ℓ]` is `F_ℓ`.
    pub fn march(&self, rhs: &[DVector<f64>]) -> Result<Vec<DVector<f64>>> {
        let n = self.blocks.block_size();
        if rhs.len() != self.blocks.n_steps() || rhs.iter().any(|f| f.len() != n) {
            return Err(Error::Dimension("right-hand side does not match the system".into()));
        }
        let mut xs: Vec<DVector<f64>> = Vec::with_capacity(rhs.len());
        for (l, f) in rhs.iter().enumerate() {
            let mut r = f.clone();
            let mut hist = DVector::zeros(n);
            for d in 1..=l {
                self.blocks.blocks[d].mul_add(&xs[l - d], &mut hist);
            }
            r -= hist;
            xs.push(self.diag.solve(&r));
        }
        Ok(xs)
    }

    /// Responses to a right-hand side `B` applied at step 0 only (`F_0 = B`,
    /// `F_ℓ = 0` otherwise); column `k` of the result at step `ℓ` is the state
    /// produced by column `k` of `B`.
    pub fn impulse_response(&self, b: &DMatrix<f64>) -> Result<Vec<DMatrix<f64>>> {
        let n = self.blocks.block_size();
        if b.nrows() != n {
            return Err(Error::Dimension("impulse right-hand side has the wrong height".into()));
        }
        let m = b.ncols();
        let mut zs: Vec<DMatrix<f64>> = Vec::with_capacity(self.blocks.n_steps());
        for l in 0..self.blocks.n_steps() {
            let mut r = if l == 0 { b.clone() } else { DMatrix::zeros(n, m) };
            for d in 1..=l {
                let blk = &self.blocks.blocks[d];
                let z = &zs[l - d];
                let nt = blk.top.nrows();
                r.rows_mut(0, nt).gemm(-1.0, &blk.top, z, 1.0);
                if let Some(bot) = &blk.bottom {
                    r.rows_mut(nt, bot.nrows()).gemm(-1.0, bot, z, 1.0);
                }
            }
            zs.push(self.diag.solve_mat(&r));
        }
        Ok(zs)
    }
}

/// Stacks per-step vectors into one space-time vector.
pub fn stack(xs: &[DVector<f64>]) -> DVector<f64> {
    let n: usize = xs.iter().map(|x| x.len()).sum();
    let mut out = DVector::zeros(n);
    let mut o = 0;
    for x in xs {
        out.rows_mut(o, x.len()).copy_from(x);
        o += x.len();
    }
    out
}

/// Splits a space-time vector into steps of length `n`.
pub fn unstack(x: &DVector<f64>, n: usize) -> Vec<DVector<f64>> {
    (0..x.len() / n).map(|l| x.rows(l * n, n).into_owned()).collect()
}

/// Monolithic dense solve of the full space-time system (small problems).
pub fn solve_monolithic(blocks: &SystemBlocks, rhs: &[DVector<f64>]) -> Result<Vec<DVector<f64>>> {
    let a = blocks.full_matrix();
    let b = stack(rhs);
    let x = a.lu().solve(&b).ok_or(Error::Singular { pivot: 0.0 })?;
    Ok(unstack(&x, blocks.block_size()))
}
