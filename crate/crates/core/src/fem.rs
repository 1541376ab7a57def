//! Trilinear (Q1) reference element and tensor Gauss rules on `[0, 1]^3`.

/// A quadrature point in local cell coordinates; weights sum to one over the
/// reference cell and must be multiplied by the cell volume.
#[derive(Clone, Copy, Debug)]
pub struct QuadPoint {
    pub local: [f64; 3],
    pub weight: f64,
}

/// 2x2x2 Gauss rule, exact for polynomials of degree 3 per axis.
pub fn gauss_2x2x2() -> [QuadPoint; 8] {
    let d = 0.5 / 3f64.sqrt();
    let pts = [0.5 - d, 0.5 + d];
    let mut out = [QuadPoint { local: [0.0; 3], weight: 0.125 }; 8];
    for (q, o) in out.iter_mut().enumerate() {
        o.local = [pts[q & 1], pts[(q >> 1) & 1], pts[(q >> 2) & 1]];
    }
    out
}

/// One-point rule at the cell centre.
pub fn midpoint() -> [QuadPoint; 1] {
    [QuadPoint { local: [0.5; 3], weight: 1.0 }]
}

/// Q1 basis values; local node `a = ax + 2 ay + 4 az`.
#[inline]
pub fn q1_values(x: &[f64; 3]) -> [f64; 8] {
    let mut out = [0.0; 8];
    for (a, o) in out.iter_mut().enumerate() {
        let mut v = 1.0;
        for (d, xd) in x.iter().enumerate() {
            v *= if (a >> d) & 1 == 1 { *xd } else { 1.0 - xd };
        }
        *o = v;
    }
    out
}

/// Q1 basis gradients in physical units for a cell with spacing `h`.
#[inline]
pub fn q1_gradients(x: &[f64; 3], h: &[f64; 3]) -> [[f64; 3]; 8] {
    let mut out = [[0.0; 3]; 8];
    for (a, o) in out.iter_mut().enumerate() {
        let f = [0, 1, 2].map(|d| if (a >> d) & 1 == 1 { x[d] } else { 1.0 - x[d] });
        let s = [0, 1, 2].map(|d| if (a >> d) & 1 == 1 { 1.0 } else { -1.0 });
        o[0] = s[0] * f[1] * f[2] / h[0];
        o[1] = f[0] * s[1] * f[2] / h[1];
        o[2] = f[0] * f[1] * s[2] / h[2];
    }
    out
}

/// Basis values and gradients tabulated at the points of a rule.
#[derive(Clone, Debug)]
pub struct Tabulation {
    pub points: Vec<QuadPoint>,
    pub values: Vec<[f64; 8]>,
    pub gradients: Vec<[[f64; 3]; 8]>,
}

impl Tabulation {
    pub fn new(points: &[QuadPoint], h: &[f64; 3]) -> Self {
        Self {
            points: points.to_vec(),
            values: points.iter().map(|p| q1_values(&p.local)).collect(),
            gradients: points.iter().map(|p| q1_gradients(&p.local, h)).collect(),
        }
    }
}
