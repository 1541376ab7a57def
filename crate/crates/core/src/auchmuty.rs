//! Variational characterization of the `(M+1)`-st eigenvalue:
//! `f(u) = ½ T[u, u] − ‖(I − P_M) u‖` attains its minimum
//! `−½ (σ_{M+1} + 1)⁻¹` at eigenvectors of norm `(σ_{M+1} + 1)⁻¹`.

use crate::assembly::AssembledSystem;
use crate::eigensolver::{gram, EigenPair};
use crate::error::{Error, Result};
use crate::par::{self, Execution};
use crate::sparse::{axpy, dot, CsrMatrix};
use faer::linalg::solvers::Solve;
use faer::sparse::linalg::solvers::Llt;
use faer::{Mat, Side};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

const NONDIFFERENTIABLE: f64 = 1e-14;
/// Relative decrease of `f` counted as no progress.
const STAGNATION: f64 = 1e-15;

/// `T = M + K + τD`, the mass `B = M` and the first `M` B-orthonormal
/// eigenvectors spanning the range of `P_M`.
pub struct AuchmutyState {
    t: CsrMatrix,
    b: CsrMatrix,
    basis: Vec<Vec<f64>>,
    llt: Llt<usize, f64>,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct AuchmutyOptions {
    pub restarts: usize,
    pub max_iters: usize,
    /// Stop when the preconditioned gradient norm `√(gᵀT⁻¹g)` falls below
    /// this multiple of `√|f|`.
    pub grad_tol: f64,
    pub armijo: f64,
    pub seed: u64,
}

impl Default for AuchmutyOptions {
    fn default() -> Self {
        Self { restarts: 5, max_iters: 5000, grad_tol: 1e-6, armijo: 1e-4, seed: 1 }
    }
}

impl AuchmutyOptions {
    pub fn validate(&self) -> Result<()> {
        if self.restarts == 0 {
            return Err(Error::Config("auchmuty restarts must be at least 1".into()));
        }
        if !(self.grad_tol > 0.0) || !(self.armijo > 0.0 && self.armijo < 1.0) {
            return Err(Error::Config("auchmuty grad_tol must be positive and armijo in (0, 1)".into()));
        }
        Ok(())
    }
}

/// Result of `minimize_f`.
#[derive(Clone, Debug)]
pub struct Minimizer {
    pub u: Vec<f64>,
    pub f_star: f64,
    pub sigma_recovered: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    pub restarts_used: usize,
}

/// Validation report against an eigensolver reference.
#[derive(Clone, Debug, Serialize, Deserialize, schemars::JsonSchema)]
pub struct AuchmutyReport {
    #[serde(rename = "M")]
    pub m: usize,
    pub f_star: f64,
    pub sigma_recovered: f64,
    pub sigma_reference: f64,
    /// `|σ_recovered − σ_reference| / (1 + σ_reference)`.
    pub gap: f64,
    pub grad_norm: f64,
    pub restarts_used: usize,
    /// `|f* + ½(σ_reference + 1)⁻¹| / (½(σ_reference + 1)⁻¹)`.
    pub f_error: f64,
    /// `‖u*‖ (σ_reference + 1) − 1`.
    pub norm_error: f64,
    /// `max_i |⟨u*, u_i⟩|` over the projector basis.
    pub orthogonality: f64,
}

impl AuchmutyState {
    /// General pencil form: `t = A + B`, `b = B`.
    pub fn new(t: CsrMatrix, b: CsrMatrix, basis: Vec<Vec<f64>>) -> Result<Self> {
        let n = t.dim();
        if b.dim() != n {
            return Err(Error::Dimension { expected: n, got: b.dim() });
        }
        for v in &basis {
            if v.len() != n {
                return Err(Error::Dimension { expected: n, got: v.len() });
            }
        }
        if !basis.is_empty() {
            let g = gram(&basis, &b);
            for (i, row) in g.iter().enumerate() {
                for (j, &x) in row.iter().enumerate() {
                    let target = if i == j { 1.0 } else { 0.0 };
                    if (x - target).abs() > 1e-10 {
                        return Err(Error::Auchmuty(format!("projector basis is not orthonormal: gram[{i}][{j}] = {x}")));
                    }
                }
            }
        }
        let llt = t
            .to_faer_lower()?
            .sp_cholesky(Side::Lower)
            .map_err(|e| Error::Auchmuty(format!("T is not positive definite: {e:?}")))?;
        Ok(Self { t, b, basis, llt })
    }

    /// State for the penalized system, projecting on the first `m_count`
    /// eigenvectors of `pairs`.
    pub fn from_system(system: &AssembledSystem, m_count: usize, pairs: &[EigenPair]) -> Result<Self> {
        if pairs.len() < m_count {
            return Err(Error::Auchmuty(format!("{m_count} projector vectors requested, {} available", pairs.len())));
        }
        let basis = pairs[..m_count].iter().map(|p| p.vector.clone()).collect();
        Self::new(system.t_matrix(), system.m.clone(), basis)
    }

    pub fn dim(&self) -> usize {
        self.t.dim()
    }

    pub fn m_count(&self) -> usize {
        self.basis.len()
    }

    /// `w = (I − P_M) u`.
    pub fn complement(&self, u: &[f64]) -> Vec<f64> {
        let mut w = u.to_vec();
        for v in &self.basis {
            let c = self.b.bilinear(v, u);
            axpy(-c, v, &mut w);
        }
        w
    }

    fn b_norm(&self, w: &[f64]) -> f64 {
        self.b.bilinear(w, w).max(0.0).sqrt()
    }

    pub fn f_value(&self, u: &[f64]) -> Result<f64> {
        self.check_dim(u)?;
        let w = self.complement(u);
        Ok(0.5 * self.t.bilinear(u, u) - self.b_norm(&w))
    }

    /// `g = T u − B w / ‖w‖`.
    pub fn f_gradient(&self, u: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(u)?;
        let w = self.complement(u);
        let nw = self.b_norm(&w);
        if nw < NONDIFFERENTIABLE {
            return Err(Error::Auchmuty(format!("f is not differentiable where (I − P)u vanishes (‖w‖ = {nw:e})")));
        }
        let mut g = self.t.matvec(u);
        axpy(-1.0 / nw, &self.b.matvec(&w), &mut g);
        Ok(g)
    }

    fn check_dim(&self, u: &[f64]) -> Result<()> {
        if u.len() != self.dim() {
            return Err(Error::Dimension { expected: self.dim(), got: u.len() });
        }
        Ok(())
    }

    fn precondition(&self, g: &[f64]) -> Vec<f64> {
        let mut x = Mat::<f64>::from_fn(g.len(), 1, |i, _| g[i]);
        self.llt.solve_in_place(x.as_mut());
        x.col_as_slice(0).to_vec()
    }

    /// One descent from `u0`.
    fn descend(&self, mut u: Vec<f64>, opts: &AuchmutyOptions) -> Result<(Vec<f64>, f64, f64, usize, bool)> {
        let mut f = self.f_value(&u)?;
        let mut flat = 0;
        for iter in 0..opts.max_iters {
            let g = self.f_gradient(&u)?;
            let pg = self.precondition(&g);
            let slope = dot(&g, &pg);
            let gnorm = slope.max(0.0).sqrt();
            if gnorm <= opts.grad_tol * f.abs().sqrt() {
                return Ok((u, f, gnorm, iter, true));
            }
            let mut t = 1.0;
            let mut accepted = false;
            for _ in 0..60 {
                let mut trial = u.clone();
                axpy(-t, &pg, &mut trial);
                if self.b_norm(&self.complement(&trial)) >= NONDIFFERENTIABLE {
                    let ft = self.f_value(&trial)?;
                    if ft <= f - opts.armijo * t * slope {
                        flat = if f - ft <= STAGNATION * f.abs() { flat + 1 } else { 0 };
                        u = trial;
                        f = ft;
                        accepted = true;
                        break;
                    }
                }
                t *= 0.5;
            }
            if !accepted || flat >= 5 {
                return Ok((u, f, gnorm, iter, false));
            }
        }
        let g = self.f_gradient(&u)?;
        let gnorm = dot(&g, &self.precondition(&g)).max(0.0).sqrt();
        Ok((u, f, gnorm, opts.max_iters, false))
    }

    /// Gradient descent preconditioned by `T⁻¹` with Armijo backtracking from
    /// `opts.restarts` random starts orthogonal to the projector basis; the
    /// lowest value wins.
    pub fn minimize_f(&self, opts: &AuchmutyOptions) -> Result<Minimizer> {
        opts.validate()?;
        let n = self.dim();
        let runs = par::map_indexed(Execution::default(), opts.restarts, |r| {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(r as u64));
            let u0: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let mut u0 = self.complement(&u0);
            let nrm = self.b_norm(&u0);
            if nrm < NONDIFFERENTIABLE {
                return Err(Error::Auchmuty("random start lies in the projector range".into()));
            }
            u0.iter_mut().for_each(|x| *x /= nrm);
            self.descend(u0, opts)
        });
        let mut best: Option<(Vec<f64>, f64, f64, usize, bool)> = None;
        for r in runs {
            let r = r?;
            if best.as_ref().map_or(true, |b| r.1 < b.1) {
                best = Some(r);
            }
        }
        let (u, f_star, grad_norm, iterations, converged) = best.expect("at least one restart");
        let sigma_recovered = 1.0 / self.b_norm(&u) - 1.0;
        Ok(Minimizer { u, f_star, sigma_recovered, grad_norm, iterations, converged, restarts_used: opts.restarts })
    }

    /// Compare a minimizer with the reference `σ_{M+1}`.
    pub fn report(&self, min: &Minimizer, sigma_reference: f64) -> AuchmutyReport {
        let target = 0.5 / (sigma_reference + 1.0);
        let orthogonality = self.basis.iter().map(|v| self.b.bilinear(v, &min.u).abs()).fold(0.0, f64::max);
        AuchmutyReport {
            m: self.m_count(),
            f_star: min.f_star,
            sigma_recovered: min.sigma_recovered,
            sigma_reference,
            gap: (min.sigma_recovered - sigma_reference).abs() / (1.0 + sigma_reference),
            grad_norm: min.grad_norm,
            restarts_used: min.restarts_used,
            f_error: (min.f_star + target).abs() / target,
            norm_error: self.b_norm(&min.u) * (sigma_reference + 1.0) - 1.0,
            orthogonality,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(m: usize) -> AuchmutyState {
        let a = CsrMatrix::from_diagonal(&[1.0, 2.0, 3.0]);
        let b = CsrMatrix::identity(3);
        let basis = (0..m).map(|i| (0..3).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
        AuchmutyState::new(a.sum(&b), b, basis).unwrap()
    }

    #[test]
    fn toy_pencil_minimum_values() {
        let min = toy(0).minimize_f(&AuchmutyOptions::default()).unwrap();
        assert!((min.f_star + 0.25).abs() < 1e-12);
        assert!((min.sigma_recovered - 1.0).abs() < 1e-10);
        let min = toy(1).minimize_f(&AuchmutyOptions::default()).unwrap();
        assert!((min.f_star + 1.0 / 6.0).abs() < 1e-12);
        assert!((min.sigma_recovered - 2.0).abs() < 1e-10);
    }

    #[test]
    fn zero_and_sign_symmetry() {
        let s = toy(1);
        assert_eq!(s.f_value(&[0.0; 3]).unwrap(), 0.0);
        let u = [0.3, -0.2, 0.7];
        let v = [-0.3, 0.2, -0.7];
        assert_eq!(s.f_value(&u).unwrap(), s.f_value(&v).unwrap());
        assert!(s.f_gradient(&[1.0, 0.0, 0.0]).is_err());
    }
}
