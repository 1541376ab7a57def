//! Symmetric 3x3 matrices stored as six independent entries.

use std::ops::{Add, AddAssign, Mul, Neg, Sub};

/// Symmetric 3x3 matrix in upper-triangle order `(11, 12, 13, 22, 23, 33)`.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct Sym3(pub [f64; 6]);

/// Position of entry `(i, j)` in the upper-6 layout.
#[inline]
pub const fn upper_index(i: usize, j: usize) -> usize {
    let (a, b) = if i <= j { (i, j) } else { (j, i) };
    match (a, b) {
        (0, 0) => 0,
        (0, 1) => 1,
        (0, 2) => 2,
        (1, 1) => 3,
        (1, 2) => 4,
        _ => 5,
    }
}

impl Sym3 {
    pub const ZERO: Sym3 = Sym3([0.0; 6]);
    pub const IDENTITY: Sym3 = Sym3([1.0, 0.0, 0.0, 1.0, 0.0, 1.0]);

    pub fn diag(a: f64, b: f64, c: f64) -> Self {
        Sym3([a, 0.0, 0.0, b, 0.0, c])
    }

    pub fn scaled_identity(a: f64) -> Self {
        Self::diag(a, a, a)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[upper_index(i, j)]
    }

    /// Symmetric part of a general matrix.
    pub fn from_matrix(m: &[[f64; 3]; 3]) -> Self {
        Sym3([
            m[0][0],
            0.5 * (m[0][1] + m[1][0]),
            0.5 * (m[0][2] + m[2][0]),
            m[1][1],
            0.5 * (m[1][2] + m[2][1]),
            m[2][2],
        ])
    }

    pub fn to_matrix(&self) -> [[f64; 3]; 3] {
        let s = &self.0;
        [[s[0], s[1], s[2]], [s[1], s[3], s[4]], [s[2], s[4], s[5]]]
    }

    /// `v ⊗ v`.
    pub fn outer(v: &[f64; 3]) -> Self {
        Sym3([
            v[0] * v[0],
            v[0] * v[1],
            v[0] * v[2],
            v[1] * v[1],
            v[1] * v[2],
            v[2] * v[2],
        ])
    }

    pub fn trace(&self) -> f64 {
        self.0[0] + self.0[3] + self.0[5]
    }

    /// Frobenius product `A : B` over all nine entries.
    #[inline]
    pub fn frobenius_dot(&self, other: &Sym3) -> f64 {
        let a = &self.0;
        let b = &other.0;
        a[0] * b[0] + a[3] * b[3] + a[5] * b[5] + 2.0 * (a[1] * b[1] + a[2] * b[2] + a[4] * b[4])
    }

    #[inline]
    pub fn frobenius_norm(&self) -> f64 {
        self.frobenius_dot(self).sqrt()
    }

    #[inline]
    pub fn mul_vec(&self, v: &[f64; 3]) -> [f64; 3] {
        let s = &self.0;
        [
            s[0] * v[0] + s[1] * v[1] + s[2] * v[2],
            s[1] * v[0] + s[3] * v[1] + s[4] * v[2],
            s[2] * v[0] + s[4] * v[1] + s[5] * v[2],
        ]
    }

    /// `ξ · A ξ`.
    pub fn quadratic(&self, v: &[f64; 3]) -> f64 {
        let w = self.mul_vec(v);
        w[0] * v[0] + w[1] * v[1] + w[2] * v[2]
    }

    pub fn max_abs_entry(&self) -> f64 {
        self.0.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
    }

    /// Ascending eigenvalues and the matching orthonormal eigenvectors
    /// (as columns).
    pub fn eigen(&self) -> ([f64; 3], [[f64; 3]; 3]) {
        let mut a = self.to_matrix();
        let mut v = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        // cyclic Jacobi
        for _ in 0..50 {
            let off = a[0][1].abs() + a[0][2].abs() + a[1][2].abs();
            let scale = a[0][0].abs() + a[1][1].abs() + a[2][2].abs();
            if off <= f64::MIN_POSITIVE || off <= 1e-18 * scale {
                break;
            }
            for (p, q) in [(0, 1), (0, 2), (1, 2)] {
                if a[p][q] == 0.0 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let sn = t * c;
                for k in 0..3 {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - sn * akq;
                    a[k][q] = sn * akp + c * akq;
                }
                for k in 0..3 {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - sn * aqk;
                    a[q][k] = sn * apk + c * aqk;
                }
                for row in v.iter_mut() {
                    let (vp, vq) = (row[p], row[q]);
                    row[p] = c * vp - sn * vq;
                    row[q] = sn * vp + c * vq;
                }
            }
        }
        let mut order = [0usize, 1, 2];
        order.sort_by(|&x, &y| a[x][x].total_cmp(&a[y][y]));
        let mut vals = [0.0; 3];
        let mut vecs = [[0.0; 3]; 3];
        for (k, &o) in order.iter().enumerate() {
            vals[k] = a[o][o];
            for i in 0..3 {
                vecs[i][k] = v[i][o];
            }
        }
        (vals, vecs)
    }

    pub fn eigenvalues(&self) -> [f64; 3] {
        self.eigen().0
    }

    /// `V diag(vals) Vᵀ` for eigenvector columns `V`.
    pub fn from_eigen(vals: &[f64; 3], vecs: &[[f64; 3]; 3]) -> Self {
        let mut out = [0.0; 6];
        for (k, &lam) in vals.iter().enumerate() {
            for i in 0..3 {
                for j in i..3 {
                    out[upper_index(i, j)] += lam * vecs[i][k] * vecs[j][k];
                }
            }
        }
        Sym3(out)
    }

    /// Clamp the eigenvalues into `[lo, hi]`, keeping the eigenvectors.
    pub fn clamp_spectrum(&self, lo: f64, hi: f64) -> Self {
        let (vals, vecs) = self.eigen();
        if vals[0] >= lo && vals[2] <= hi {
            return *self;
        }
        let clamped = vals.map(|v| v.clamp(lo, hi));
        Self::from_eigen(&clamped, &vecs)
    }

    /// `Rᵀ A R` for a general 3x3 matrix `R`.
    pub fn conjugate(&self, r: &[[f64; 3]; 3]) -> Self {
        let a = self.to_matrix();
        let mut out = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                let mut acc = 0.0;
                for p in 0..3 {
                    for q in 0..3 {
                        acc += r[p][i] * a[p][q] * r[q][j];
                    }
                }
                out[i][j] = acc;
            }
        }
        Sym3::from_matrix(&out)
    }
}

impl Add for Sym3 {
    type Output = Sym3;
    fn add(self, rhs: Sym3) -> Sym3 {
        let mut out = self.0;
        for (o, r) in out.iter_mut().zip(rhs.0) {
            *o += r;
        }
        Sym3(out)
    }
}

impl AddAssign for Sym3 {
    fn add_assign(&mut self, rhs: Sym3) {
        for (o, r) in self.0.iter_mut().zip(rhs.0) {
            *o += r;
        }
    }
}

impl Sub for Sym3 {
    type Output = Sym3;
    fn sub(self, rhs: Sym3) -> Sym3 {
        self + (-rhs)
    }
}

impl Neg for Sym3 {
    type Output = Sym3;
    fn neg(self) -> Sym3 {
        Sym3(self.0.map(|x| -x))
    }
}

impl Mul<Sym3> for f64 {
    type Output = Sym3;
    fn mul(self, rhs: Sym3) -> Sym3 {
        Sym3(rhs.0.map(|x| self * x))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frobenius_of_identity() {
        assert!((Sym3::IDENTITY.frobenius_norm() - 3f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn eigen_roundtrip() {
        let a = Sym3([2.0, 0.3, -0.1, 1.5, 0.2, 0.7]);
        let (vals, vecs) = a.eigen();
        assert!(vals[0] <= vals[1] && vals[1] <= vals[2]);
        let b = Sym3::from_eigen(&vals, &vecs);
        for k in 0..6 {
            assert!((a.0[k] - b.0[k]).abs() < 1e-13);
        }
    }

    #[test]
    fn diagonal_clamp() {
        let a = Sym3::diag(0.1, 1.0, 5.0).clamp_spectrum(0.5, 2.0);
        let d = Sym3::diag(0.5, 1.0, 2.0);
        for k in 0..6 {
            assert!((a.0[k] - d.0[k]).abs() < 1e-14);
        }
    }
}
