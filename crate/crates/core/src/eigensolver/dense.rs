use super::{relative_residual, EigenPair};
use crate::error::{Error, Result};
use crate::sparse::CsrMatrix;
use faer::linalg::triangular_solve::{solve_lower_triangular_in_place, solve_upper_triangular_in_place};
use faer::{Mat, Par, Side};

/// Full decomposition: `B = L Lᵀ`, `C = L⁻¹ A L⁻ᵀ`, `u = L⁻ᵀ y`.
pub fn solve_dense(a: &CsrMatrix, b: &CsrMatrix, count: usize) -> Result<Vec<EigenPair>> {
    let n = a.dim();
    let ad = a.to_dense();
    let bd = b.to_dense();
    let bm = Mat::<f64>::from_fn(n, n, |i, j| bd[i][j]);
    let llt = bm
        .llt(Side::Lower)
        .map_err(|e| Error::Eigensolver(format!("B is not positive definite: {e:?}")))?;
    let l = llt.L();
    let mut x = Mat::<f64>::from_fn(n, n, |i, j| ad[i][j]);
    solve_lower_triangular_in_place(l, x.as_mut(), Par::Seq);
    let mut c = x.transpose().to_owned();
    solve_lower_triangular_in_place(l, c.as_mut(), Par::Seq);
    let c = Mat::<f64>::from_fn(n, n, |i, j| 0.5 * (c[(i, j)] + c[(j, i)]));
    let evd = c
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::Eigensolver(format!("dense eigendecomposition failed: {e:?}")))?;
    let mut y = evd.U().subcols(0, count).to_owned();
    solve_upper_triangular_in_place(l.transpose(), y.as_mut(), Par::Seq);
    let s = evd.S().column_vector();
    let pairs = (0..count)
        .map(|k| {
            let mut v: Vec<f64> = (0..n).map(|i| y[(i, k)]).collect();
            let nrm = b.bilinear(&v, &v).sqrt();
            v.iter_mut().for_each(|x| *x /= nrm);
            let value = s[k];
            let residual = relative_residual(a, b, value, &v);
            EigenPair { value, vector: v, residual }
        })
        .collect();
    Ok(pairs)
}
