//! Shift-invert block Lanczos with full B-reorthogonalization and thick
//! restarts.
//!
//! The operator is `S = (A + B)⁻¹ B`, self-adjoint in the B inner product,
//! whose dominant eigenvalues `θ = 1 / (σ + 1)` belong to the smallest `σ`.
//! The basis splits into a "done" part, whose images under `S` lie in the
//! span of the whole basis, and a frontier block whose images are computed
//! next. Converged candidates are verified against the true residual
//! `‖A u − σ B u‖ / ‖B u‖` before being returned.

use super::{relative_residual, EigenPair, SolverOptions};
use crate::error::{Error, Result};
use crate::sparse::CsrMatrix;
use faer::linalg::matmul::matmul;
use faer::linalg::solvers::Solve;
use faer::sparse::linalg::solvers::Llt;
use faer::{Accum, Mat, MatRef, Par, Side};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const DROP_TOL: f64 = 1e-10;

struct Krylov<'a> {
    b: &'a CsrMatrix,
    q: Mat<f64>,
    bq: Mat<f64>,
    /// `h[i, j] = qᵢᵀ B S qⱼ` for `j < done`, `i < k`.
    h: Mat<f64>,
    done: usize,
    k: usize,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl<'a> Krylov<'a> {
    fn new(b: &'a CsrMatrix, cap: usize) -> Self {
        let n = b.dim();
        Self { b, q: Mat::zeros(n, cap), bq: Mat::zeros(n, cap), h: Mat::zeros(cap, cap), done: 0, k: 0 }
    }

    fn cap(&self) -> usize {
        self.q.ncols()
    }

    /// Orthogonalize `w` against the basis, append the surviving columns and
    /// return the coefficients: `w = Q[.., ..k_new] · coeffs` up to dropped
    /// parts.
    fn append(&mut self, mut w: Mat<f64>) -> Mat<f64> {
        let n = w.nrows();
        let k0 = self.k;
        let m = w.ncols();
        let mut coeffs = Mat::<f64>::zeros(self.cap(), m);
        let start: Vec<f64> = (0..m)
            .map(|j| {
                let col = w.col_as_slice(j);
                self.b.bilinear(col, col).max(0.0).sqrt()
            })
            .collect();
        if k0 > 0 {
            for _ in 0..2 {
                let c = self.bq.subcols(0, k0).transpose() * w.as_ref();
                matmul(w.as_mut(), Accum::Add, self.q.subcols(0, k0), c.as_ref(), -1.0, Par::Seq);
                for j in 0..m {
                    for i in 0..k0 {
                        coeffs[(i, j)] += c[(i, j)];
                    }
                }
            }
        }
        for j in 0..m {
            if self.k == self.cap() {
                break;
            }
            let mut col = w.col_as_slice(j).to_vec();
            for _ in 0..2 {
                for i in k0..self.k {
                    let c = dot(self.bq.col_as_slice(i), &col);
                    col.iter_mut().zip(self.q.col_as_slice(i)).for_each(|(x, y)| *x -= c * y);
                    coeffs[(i, j)] += c;
                }
            }
            let mut bcol = self.b.matvec(&col);
            let mut nrm = dot(&col, &bcol).max(0.0).sqrt();
            if nrm < 1e-3 * start[j] && nrm > DROP_TOL * start[j] {
                // heavy cancellation: one more pass against everything
                let k = self.k;
                let mut cm = Mat::<f64>::from_fn(n, 1, |i, _| col[i]);
                let c = self.bq.subcols(0, k).transpose() * cm.as_ref();
                matmul(cm.as_mut(), Accum::Add, self.q.subcols(0, k), c.as_ref(), -1.0, Par::Seq);
                for i in 0..k {
                    coeffs[(i, j)] += c[(i, 0)];
                }
                col.copy_from_slice(cm.col_as_slice(0));
                bcol = self.b.matvec(&col);
                nrm = dot(&col, &bcol).max(0.0).sqrt();
            }
            if !(nrm > DROP_TOL * start[j]) {
                continue;
            }
            col.iter_mut().for_each(|x| *x /= nrm);
            bcol.iter_mut().for_each(|x| *x /= nrm);
            let kk = self.k;
            self.q.col_as_slice_mut(kk).copy_from_slice(&col);
            self.bq.col_as_slice_mut(kk).copy_from_slice(&bcol);
            coeffs[(kk, j)] = nrm;
            self.k += 1;
        }
        coeffs
    }

    /// Apply `S` to the frontier, orthogonalize and advance.
    fn expand(&mut self, apply: &dyn Fn(MatRef<'_, f64>) -> Mat<f64>) {
        let (lo, hi) = (self.done, self.k);
        let w = apply(self.q.subcols(lo, hi - lo));
        let coeffs = self.append(w);
        for j in lo..hi {
            for i in 0..self.k {
                self.h[(i, j)] = coeffs[(i, j - lo)];
            }
        }
        self.done = hi;
    }

    /// Ritz pairs of the done part, ordered by decreasing `θ`, with the
    /// frontier coupling `‖H[front, done] · y‖` as residual estimate.
    fn ritz(&self) -> Result<(Vec<f64>, Mat<f64>, Vec<f64>)> {
        let d = self.done;
        let hd = Mat::<f64>::from_fn(d, d, |i, j| 0.5 * (self.h[(i, j)] + self.h[(j, i)]));
        let evd = hd
            .self_adjoint_eigen(Side::Lower)
            .map_err(|e| Error::Eigensolver(format!("projected eigenproblem failed: {e:?}")))?;
        let s = evd.S().column_vector();
        let u = evd.U();
        let theta: Vec<f64> = (0..d).rev().map(|i| s[i]).collect();
        let y = Mat::<f64>::from_fn(d, d, |i, j| u[(i, d - 1 - j)]);
        let est = (0..d)
            .map(|j| {
                let mut acc = 0.0;
                for r in d..self.k {
                    let v: f64 = (0..d).map(|i| self.h[(r, i)] * y[(i, j)]).sum();
                    acc += v * v;
                }
                acc.sqrt()
            })
            .collect();
        Ok((theta, y, est))
    }

    /// Keep the first `p` Ritz vectors followed by the frontier.
    fn restart(&mut self, theta: &[f64], y: &Mat<f64>, p: usize) {
        let (d, k) = (self.done, self.k);
        let nf = k - d;
        let yp = y.subcols(0, p);
        let q = self.q.subcols(0, d) * yp;
        let bq = self.bq.subcols(0, d) * yp;
        let fq = self.q.subcols(d, nf).to_owned();
        let fbq = self.bq.subcols(d, nf).to_owned();
        let coupling = Mat::<f64>::from_fn(nf, p, |r, j| (0..d).map(|i| self.h[(d + r, i)] * yp[(i, j)]).sum());
        for j in 0..p {
            self.q.col_as_slice_mut(j).copy_from_slice(q.col_as_slice(j));
            self.bq.col_as_slice_mut(j).copy_from_slice(bq.col_as_slice(j));
        }
        for j in 0..nf {
            self.q.col_as_slice_mut(p + j).copy_from_slice(fq.col_as_slice(j));
            self.bq.col_as_slice_mut(p + j).copy_from_slice(fbq.col_as_slice(j));
        }
        self.h.fill(0.0);
        for j in 0..p {
            self.h[(j, j)] = theta[j];
            for r in 0..nf {
                self.h[(p + r, j)] = coupling[(r, j)];
                self.h[(j, p + r)] = coupling[(r, j)];
            }
        }
        self.done = p;
        self.k = p + nf;
    }
}

pub fn solve_lanczos(a: &CsrMatrix, b: &CsrMatrix, count: usize, opts: &SolverOptions) -> Result<Vec<EigenPair>> {
    let n = a.dim();
    let t = a.sum(b).to_faer_lower()?;
    let llt: Llt<usize, f64> = t
        .sp_cholesky(Side::Lower)
        .map_err(|e| Error::Eigensolver(format!("A + B is not positive definite: {e:?}")))?;
    let bs = opts.block_size.clamp(1, n);
    let cap = ((opts.basis_factor * count as f64).ceil() as usize + 2 * bs).min(n);
    let keep = (count + bs).min(cap.saturating_sub(2 * bs)).max(count);
    let max_iter = opts.max_iter_factor * count;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.unwrap_or(0x5eed));
    let trace = std::env::var_os("PERMOPT_TRACE").is_some();

    let apply = |x: MatRef<'_, f64>| -> Mat<f64> {
        let mut y = Mat::<f64>::zeros(n, x.ncols());
        for j in 0..x.ncols() {
            let col: Vec<f64> = (0..n).map(|i| x[(i, j)]).collect();
            y.col_as_slice_mut(j).copy_from_slice(&b.matvec(&col));
        }
        llt.solve_in_place(y.as_mut());
        y
    };

    let mut kry = Krylov::new(b, cap);
    let start = Mat::<f64>::from_fn(n, bs, |_, _| rng.gen_range(-1.0..1.0));
    kry.append(apply(start.as_ref()));
    let mut verify_scale = 1.0;
    for iter in 0..max_iter {
        if kry.k == kry.done {
            // invariant subspace: continue from a fresh random block
            let fresh = Mat::<f64>::from_fn(n, bs, |_, _| rng.gen_range(-1.0..1.0));
            kry.append(fresh);
        }
        let exhausted = kry.k == kry.done;
        if !exhausted {
            kry.expand(&apply);
        }
        if kry.done < count {
            if exhausted {
                break;
            }
            continue;
        }
        let (theta, y, est) = kry.ritz()?;
        let ready = (0..count).all(|j| est[j] <= opts.tol * verify_scale * theta[j]);
        if trace {
            let worst = (0..count).map(|j| est[j] / theta[j]).fold(0.0, f64::max);
            eprintln!("iter={iter} k={} done={} worst_estimate={worst:.1e}", kry.k, kry.done);
        }
        if ready || exhausted {
            let pairs = finish(&kry, &y, count, a, b);
            if exhausted || pairs.iter().all(|p| p.residual <= opts.tol) {
                return Ok(pairs);
            }
            verify_scale *= 0.1;
        }
        if kry.k + bs > kry.cap() {
            kry.restart(&theta, &y, keep.min(kry.done));
        }
    }
    Err(Error::Eigensolver(format!(
        "Lanczos did not reach residual {:e} within {max_iter} block iterations",
        opts.tol
    )))
}

fn finish(kry: &Krylov<'_>, y: &Mat<f64>, count: usize, a: &CsrMatrix, b: &CsrMatrix) -> Vec<EigenPair> {
    let d = kry.done;
    let u = kry.q.subcols(0, d) * y.subcols(0, count);
    let mut pairs: Vec<EigenPair> = (0..count)
        .map(|j| {
            let mut v = u.col_as_slice(j).to_vec();
            let nrm = b.bilinear(&v, &v).sqrt();
            v.iter_mut().for_each(|x| *x /= nrm);
            let value = a.bilinear(&v, &v);
            let residual = relative_residual(a, b, value, &v);
            EigenPair { value, vector: v, residual }
        })
        .collect();
    pairs.sort_by(|p, q| p.value.total_cmp(&q.value));
    pairs
}
