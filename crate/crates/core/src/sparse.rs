//! Compressed sparse row matrices with a fixed pattern.

use crate::error::{Error, Result};
use faer::sparse::{SparseColMat, Triplet};
use std::io::Write;

#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl CsrMatrix {
    /// Zero matrix with the given (sorted, deduplicated) column lists per row.
    pub fn from_pattern(rows: Vec<Vec<usize>>) -> Self {
        let n = rows.len();
        let mut row_ptr = Vec::with_capacity(n + 1);
        row_ptr.push(0);
        let mut cols = Vec::new();
        for r in rows {
            debug_assert!(r.windows(2).all(|w| w[0] < w[1]));
            cols.extend(r);
            row_ptr.push(cols.len());
        }
        let nnz = cols.len();
        Self { n, row_ptr, cols, vals: vec![0.0; nnz] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::from_pattern((0..n).map(|i| vec![i]).collect());
        m.vals.fill(1.0);
        m
    }

    pub fn from_diagonal(d: &[f64]) -> Self {
        let mut m = Self::from_pattern((0..d.len()).map(|i| vec![i]).collect());
        m.vals.copy_from_slice(d);
        m
    }

    /// Dense (row-major) input; exact zeros are dropped.
    pub fn from_dense(rows: &[Vec<f64>]) -> Self {
        let pattern = rows.iter().map(|r| (0..r.len()).filter(|&j| r[j] != 0.0).collect()).collect();
        let mut m = Self::from_pattern(pattern);
        for (i, r) in rows.iter().enumerate() {
            for k in m.row_ptr[i]..m.row_ptr[i + 1] {
                m.vals[k] = r[m.cols[k]];
            }
        }
        m
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.cols[r.clone()], &self.vals[r])
    }

    /// Position of `(i, j)` in the value array.
    #[inline]
    pub fn position(&self, i: usize, j: usize) -> Option<usize> {
        let lo = self.row_ptr[i];
        let hi = self.row_ptr[i + 1];
        self.cols[lo..hi].binary_search(&j).ok().map(|k| lo + k)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.position(i, j).map_or(0.0, |k| self.vals[k])
    }

    #[inline]
    pub fn add_at(&mut self, pos: usize, v: f64) {
        self.vals[pos] += v;
    }

    pub fn values(&self) -> &[f64] {
        &self.vals
    }

    pub fn same_pattern(&self, other: &CsrMatrix) -> bool {
        self.n == other.n && self.row_ptr == other.row_ptr && self.cols == other.cols
    }

    /// `a * self + b * other`; both must share a pattern.
    pub fn linear_combination(&self, a: f64, other: &CsrMatrix, b: f64) -> Result<CsrMatrix> {
        if !self.same_pattern(other) {
            return Err(Error::Assembly("linear combination of matrices with different patterns".into()));
        }
        let mut out = self.clone();
        for (o, x) in out.vals.iter_mut().zip(&other.vals) {
            *o = a * *o + b * x;
        }
        Ok(out)
    }

    /// `self + other` over the union of both patterns.
    pub fn sum(&self, other: &CsrMatrix) -> CsrMatrix {
        if self.same_pattern(other) {
            return self.linear_combination(1.0, other, 1.0).expect("same pattern");
        }
        let rows = (0..self.n)
            .map(|i| {
                let mut r: Vec<usize> = self.row(i).0.iter().chain(other.row(i).0).copied().collect();
                r.sort_unstable();
                r.dedup();
                r
            })
            .collect();
        let mut out = CsrMatrix::from_pattern(rows);
        for m in [self, other] {
            for i in 0..m.n {
                for k in m.row_ptr[i]..m.row_ptr[i + 1] {
                    let pos = out.position(i, m.cols[k]).expect("union pattern");
                    out.vals[pos] += m.vals[k];
                }
            }
        }
        out
    }

    pub fn scaled(&self, a: f64) -> CsrMatrix {
        let mut out = self.clone();
        out.vals.iter_mut().for_each(|v| *v *= a);
        out
    }

    pub fn matvec_into(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate() {
            let mut acc = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += self.vals[k] * x[self.cols[k]];
            }
            *yi = acc;
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.matvec_into(x, &mut y);
        y
    }

    /// `uᵀ A v`.
    pub fn bilinear(&self, u: &[f64], v: &[f64]) -> f64 {
        let mut acc = 0.0;
        for (i, ui) in u.iter().enumerate() {
            if *ui == 0.0 {
                continue;
            }
            let mut row = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                row += self.vals[k] * v[self.cols[k]];
            }
            acc += ui * row;
        }
        acc
    }

    /// Largest `|a_ij - a_ji|`.
    pub fn max_asymmetry(&self) -> f64 {
        let mut worst = 0.0_f64;
        for i in 0..self.n {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                let j = self.cols[k];
                worst = worst.max((self.vals[k] - self.get(j, i)).abs());
            }
        }
        worst
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.n]; self.n];
        for (i, row) in d.iter_mut().enumerate() {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                row[self.cols[k]] = self.vals[k];
            }
        }
        d
    }

    /// Lower triangle in faer's compressed-column format.
    pub(crate) fn to_faer_lower(&self) -> Result<SparseColMat<usize, f64>> {
        let mut trips = Vec::with_capacity(self.nnz() / 2 + self.n);
        for i in 0..self.n {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                let j = self.cols[k];
                if j <= i {
                    trips.push(Triplet::new(i, j, self.vals[k]));
                }
            }
        }
        SparseColMat::try_new_from_triplets(self.n, self.n, &trips)
            .map_err(|e| Error::Eigensolver(format!("sparse conversion failed: {e:?}")))
    }

    /// Coordinate text dump: one `row col value` line per stored entry,
    /// 1-based, sorted by `(row, col)`.
    pub fn write_coordinate<W: Write>(&self, mut w: W) -> Result<()> {
        for i in 0..self.n {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                writeln!(w, "{} {} {:e}", i + 1, self.cols[k] + 1, self.vals[k])?;
            }
        }
        Ok(())
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `y += a * x`.
pub fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn coordinate_dump_is_sorted_and_one_based() {
        let m = CsrMatrix::from_dense(&[vec![2.0, -1.0], vec![-1.0, 0.5]]);
        let mut out = Vec::new();
        m.write_coordinate(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text, "1 1 2e0\n1 2 -1e0\n2 1 -1e0\n2 2 5e-1\n");
    }

    #[test]
    fn matvec_and_bilinear() {
        let m = CsrMatrix::from_dense(&[vec![2.0, 1.0, 0.0], vec![1.0, 3.0, 0.0], vec![0.0, 0.0, 4.0]]);
        assert_eq!(m.matvec(&[1.0, 1.0, 1.0]), vec![3.0, 4.0, 4.0]);
        assert_eq!(m.bilinear(&[1.0, 0.0, 1.0], &[0.0, 1.0, 1.0]), 5.0);
        assert_eq!(m.max_asymmetry(), 0.0);
    }
}
