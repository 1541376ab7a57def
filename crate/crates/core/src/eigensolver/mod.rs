//! Generalized symmetric eigenproblems `A u = σ B u` with `A` positive
//! semidefinite and `B` positive definite.
//!
//! Small problems go through a dense Cholesky reduction; larger ones through
//! a shift-invert block Lanczos iteration on `(A + B)⁻¹ B`.

mod dense;
mod lanczos;

use crate::assembly::{AssembledSystem, ScalarSystem};
use crate::error::{Error, Result};
use crate::sparse::{norm, CsrMatrix};
use serde::{Deserialize, Serialize};
use std::io::Write;

pub use dense::solve_dense;
pub use lanczos::solve_lanczos;

#[derive(Clone, Debug)]
pub struct EigenPair {
    pub value: f64,
    /// B-normalized free-DOF coefficients.
    pub vector: Vec<f64>,
    /// `‖A u − σ B u‖ / ‖B u‖`.
    pub residual: f64,
}

#[derive(Clone, Debug)]
pub struct Spectrum {
    pub pairs: Vec<EigenPair>,
    pub eps_fingerprint: String,
    pub tau: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum SolverPath {
    /// Dense up to `dense_threshold` unknowns, Lanczos above.
    #[default]
    Auto,
    Dense,
    Lanczos,
}

#[derive(Clone, Debug, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct SolverOptions {
    pub path: SolverPath,
    pub dense_threshold: usize,
    pub tol: f64,
    pub block_size: usize,
    /// Largest Krylov basis kept before a thick restart, as a multiple of the
    /// number of requested pairs (plus two blocks).
    pub basis_factor: f64,
    /// Cap on block expansions is `max_iter_factor * count`.
    pub max_iter_factor: usize,
    /// Seed for the Lanczos starting block; `None` derives it from the
    /// operator (the permittivity fingerprint for penalized solves).
    pub seed: Option<u64>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            path: SolverPath::Auto,
            dense_threshold: 3000,
            tol: 1e-9,
            block_size: 12,
            basis_factor: 3.0,
            max_iter_factor: 50,
            seed: None,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) || self.block_size == 0 || !(self.basis_factor >= 1.0) || self.max_iter_factor == 0 {
            return Err(Error::Config(format!("invalid solver options {self:?}")));
        }
        Ok(())
    }
}

/// The `count` smallest eigenpairs of `(A, B)` with default options.
pub fn solve_gevp(a: &CsrMatrix, b: &CsrMatrix, count: usize) -> Result<Vec<EigenPair>> {
    solve_gevp_with(a, b, count, &SolverOptions::default())
}

pub fn solve_gevp_with(a: &CsrMatrix, b: &CsrMatrix, count: usize, opts: &SolverOptions) -> Result<Vec<EigenPair>> {
    opts.validate()?;
    let n = a.dim();
    if b.dim() != n {
        return Err(Error::Dimension { expected: n, got: b.dim() });
    }
    if count > n {
        return Err(Error::Eigensolver(format!("requested {count} eigenpairs of a {n}-dimensional problem")));
    }
    if count == 0 {
        return Ok(Vec::new());
    }
    let dense = match opts.path {
        SolverPath::Dense => true,
        SolverPath::Lanczos => false,
        SolverPath::Auto => n <= opts.dense_threshold,
    };
    if dense {
        solve_dense(a, b, count)
    } else {
        solve_lanczos(a, b, count, opts)
    }
}

/// `‖A u − σ B u‖ / ‖B u‖`.
pub fn relative_residual(a: &CsrMatrix, b: &CsrMatrix, sigma: f64, u: &[f64]) -> f64 {
    let au = a.matvec(u);
    let bu = b.matvec(u);
    let r: Vec<f64> = au.iter().zip(&bu).map(|(x, y)| x - sigma * y).collect();
    norm(&r) / norm(&bu)
}

/// Lowest `count` pairs of `(K + τD, M)`.
pub fn solve_penalized(system: &AssembledSystem, count: usize) -> Result<Spectrum> {
    solve_penalized_with(system, count, &SolverOptions::default())
}

pub fn solve_penalized_with(system: &AssembledSystem, count: usize, opts: &SolverOptions) -> Result<Spectrum> {
    let mut opts = opts.clone();
    if opts.seed.is_none() {
        opts.seed = Some(u64::from_str_radix(&system.eps_fingerprint, 16).unwrap_or(0));
    }
    let a = system.penalized_stiffness();
    let pairs = solve_gevp_with(&a, &system.m, count, &opts)?;
    Ok(Spectrum { pairs, eps_fingerprint: system.eps_fingerprint.clone(), tau: system.tau })
}

/// Lowest `count` pairs of `(S, Ms)`.
pub fn solve_scalar(system: &ScalarSystem, count: usize, opts: &SolverOptions) -> Result<Vec<EigenPair>> {
    solve_gevp_with(&system.s, &system.ms, count, opts)
}

/// Modified Gram–Schmidt in the `M` inner product (two passes).
pub fn orthonormalize(vectors: &[Vec<f64>], m: &CsrMatrix) -> Result<Vec<Vec<f64>>> {
    const RANK_TOL: f64 = 1e-10;
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(vectors.len());
    let mut mout: Vec<Vec<f64>> = Vec::with_capacity(vectors.len());
    for (idx, v) in vectors.iter().enumerate() {
        if v.len() != m.dim() {
            return Err(Error::Dimension { expected: m.dim(), got: v.len() });
        }
        let mut w = v.clone();
        let start = m.bilinear(&w, &w).max(0.0).sqrt();
        for _ in 0..2 {
            for (q, mq) in out.iter().zip(&mout) {
                let c: f64 = mq.iter().zip(&w).map(|(a, b)| a * b).sum();
                w.iter_mut().zip(q).for_each(|(x, y)| *x -= c * y);
            }
        }
        let mw = m.matvec(&w);
        let nrm = w.iter().zip(&mw).map(|(a, b)| a * b).sum::<f64>().max(0.0).sqrt();
        if !(nrm > RANK_TOL * start.max(f64::MIN_POSITIVE)) || nrm == 0.0 {
            return Err(Error::Eigensolver(format!("vector {idx} is linearly dependent on its predecessors")));
        }
        out.push(w.iter().map(|x| x / nrm).collect());
        mout.push(mw.iter().map(|x| x / nrm).collect());
    }
    Ok(out)
}

/// `[qᵢᵀ M qⱼ]`.
pub fn gram(vectors: &[Vec<f64>], m: &CsrMatrix) -> Vec<Vec<f64>> {
    let mv: Vec<Vec<f64>> = vectors.iter().map(|v| m.matvec(v)).collect();
    vectors.iter().map(|u| mv.iter().map(|w| u.iter().zip(w).map(|(a, b)| a * b).sum()).collect()).collect()
}

impl Spectrum {
    pub fn values(&self) -> Vec<f64> {
        self.pairs.iter().map(|p| p.value).collect()
    }

    /// CSV with columns `index,sigma,type_tag,residual`; the tag column is
    /// filled in by classification.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "index,sigma,type_tag,residual")?;
        for (i, p) in self.pairs.iter().enumerate() {
            writeln!(w, "{},{:.15e},untagged,{:.3e}", i + 1, p.value, p.residual)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diagonal_pencil() {
        let a = CsrMatrix::from_diagonal(&[1.0, 2.0, 3.0]);
        let b = CsrMatrix::identity(3);
        let pairs = solve_gevp(&a, &b, 2).unwrap();
        assert!((pairs[0].value - 1.0).abs() < 1e-14);
        assert!((pairs[1].value - 2.0).abs() < 1e-14);
        assert!((pairs[0].vector[0].abs() - 1.0).abs() < 1e-14);
        assert!((pairs[1].vector[1].abs() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn too_many_pairs() {
        let a = CsrMatrix::identity(3);
        assert!(solve_gevp(&a, &a, 4).is_err());
    }

    #[test]
    fn gram_schmidt_small_cases() {
        let m = CsrMatrix::identity(2);
        let q = orthonormalize(&[vec![1.0, 0.0], vec![1.0, 1.0]], &m).unwrap();
        assert!((q[1][0]).abs() < 1e-15 && (q[1][1] - 1.0).abs() < 1e-15);
        assert!(orthonormalize(&[vec![1.0, 1.0], vec![2.0, 2.0]], &m).is_err());
        assert!(orthonormalize(&[vec![0.0, 0.0]], &m).is_err());
    }
}
