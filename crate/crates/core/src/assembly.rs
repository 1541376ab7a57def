//! Q1 finite-element assembly of the penalized curl-curl system and of the
//! scalar Dirichlet problem for `-div(ε ∇f)`.
//!
//! Element matrices are computed cell-parallel and accumulated into the
//! global matrices in cell order, so the result does not depend on the
//! execution mode or on the number of workers.

use crate::error::{Error, Result};
use crate::fem::{gauss_2x2x2, midpoint, Tabulation};
use crate::grid::{DofKind, DofSpace, Grid};
use crate::par::{self, Execution};
use crate::permittivity::SymMatrixField;
use crate::sparse::CsrMatrix;
use crate::sym3::Sym3;
use serde::{Deserialize, Serialize};

/// Quadrature used for the divergence penalty `∫ div(εu) div(εv)`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum PenaltyQuadrature {
    /// One point at the cell centre. Discrete divergence-free fields then
    /// include the interpolated cavity modes, so the penalty does not lock.
    #[default]
    Reduced,
    /// 2x2x2 Gauss, the same rule as every other term.
    Full,
}

/// Matrices of `T_ε[u, v] = <u, v>_ε + ∫ curl u·curl v + τ ∫ div(εu) div(εv)`
/// restricted to the free DOFs of the tangential-zero vector space.
#[derive(Clone, Debug)]
pub struct AssembledSystem {
    pub k: CsrMatrix,
    pub d: CsrMatrix,
    pub m: CsrMatrix,
    pub tau: f64,
    pub space: DofSpace,
    /// Fingerprint of the permittivity the system was assembled from.
    pub eps_fingerprint: String,
}

/// Stiffness `∫ ε ∇f·∇g` and plain mass `∫ f g` on the scalar Dirichlet space.
#[derive(Clone, Debug)]
pub struct ScalarSystem {
    pub s: CsrMatrix,
    pub ms: CsrMatrix,
    pub space: DofSpace,
}

const EDOF: usize = 24;
const CHUNK: usize = 2048;

type ElementMatrix = Vec<f64>;

/// Sparsity pattern coupling every pair of free DOFs that share a cell.
pub fn pattern(space: &DofSpace) -> CsrMatrix {
    let grid = space.grid();
    let comps = space.components();
    let cells = grid.cells();
    let rows = (0..space.num_free())
        .map(|dof| {
            let (node, _) = space.owner(dof);
            let [i, j, k] = grid.node_coords(node);
            let mut cols = Vec::with_capacity(27 * comps);
            for kk in k.saturating_sub(1)..=(k + 1).min(cells[2]) {
                for jj in j.saturating_sub(1)..=(j + 1).min(cells[1]) {
                    for ii in i.saturating_sub(1)..=(i + 1).min(cells[0]) {
                        let nb = grid.node_index(ii, jj, kk);
                        for c in 0..comps {
                            if let Some(col) = space.index(nb, c) {
                                cols.push(col);
                            }
                        }
                    }
                }
            }
            cols
        })
        .collect();
    CsrMatrix::from_pattern(rows)
}

/// Accumulate element matrices (row-major, `comps * 8` square, upper triangle
/// filled) into `target` in cell order.
fn accumulate(
    space: &DofSpace,
    target: &mut CsrMatrix,
    exec: Execution,
    kernel: impl Fn(usize) -> ElementMatrix + Sync + Send,
) {
    let grid = space.grid();
    let comps = space.components();
    let edof = 8 * comps;
    let ncell = grid.num_cells();
    let mut start = 0;
    while start < ncell {
        let end = (start + CHUNK).min(ncell);
        let elems = par::map_indexed(exec, end - start, |i| kernel(start + i));
        for (offset, em) in elems.iter().enumerate() {
            let nodes = grid.cell_nodes(start + offset);
            let map: Vec<Option<usize>> =
                (0..edof).map(|e| space.index(nodes[e / comps], e % comps)).collect();
            for p in 0..edof {
                let Some(gp) = map[p] else { continue };
                for q in p..edof {
                    let Some(gq) = map[q] else { continue };
                    let v = em[p * edof + q];
                    if v == 0.0 {
                        continue;
                    }
                    let pos = target.position(gp, gq).expect("entry outside pattern");
                    target.add_at(pos, v);
                    if gp != gq {
                        let pos = target.position(gq, gp).expect("entry outside pattern");
                        target.add_at(pos, v);
                    }
                }
            }
        }
        start = end;
    }
}

fn require_vector_space(space: &DofSpace) -> Result<()> {
    if space.kind() != DofKind::VectorTangentialZero {
        return Err(Error::Assembly("vector assembly needs a tangential-zero vector space".into()));
    }
    Ok(())
}

fn require_positive_definite(eps: &SymMatrixField) -> Result<()> {
    for (n, v) in eps.values().iter().enumerate() {
        let lo = v.eigenvalues()[0];
        if !(lo > 0.0) {
            return Err(Error::Assembly(format!(
                "permittivity is not positive definite at node {n} (smallest eigenvalue {lo:e})"
            )));
        }
    }
    Ok(())
}

/// ε-weighted mass `∫ ε u·v`.
pub fn assemble_mass(space: &DofSpace, eps: &SymMatrixField) -> Result<CsrMatrix> {
    assemble_mass_with(space, eps, Execution::default())
}

pub fn assemble_mass_with(space: &DofSpace, eps: &SymMatrixField, exec: Execution) -> Result<CsrMatrix> {
    require_vector_space(space)?;
    check_grid(space.grid(), eps)?;
    require_positive_definite(eps)?;
    let grid = space.grid();
    let tab = Tabulation::new(&gauss_2x2x2(), &grid.spacing());
    let vol = grid.cell_volume();
    let mut m = pattern(space);
    accumulate(space, &mut m, exec, |cell| {
        let vals = eps.cell_values(cell);
        let mut em = vec![0.0; EDOF * EDOF];
        for (q, phi) in tab.points.iter().zip(&tab.values) {
            let e = SymMatrixField::interpolate(&vals, phi);
            let w = q.weight * vol;
            for a in 0..8 {
                for b in a..8 {
                    let pp = w * phi[a] * phi[b];
                    for c in 0..3 {
                        let d0 = if a == b { c } else { 0 };
                        for d in d0..3 {
                            em[(3 * a + c) * EDOF + 3 * b + d] += pp * e.get(c, d);
                        }
                    }
                }
            }
        }
        // blocks with a < b need the lower (c > d) part too
        for a in 0..8 {
            for b in (a + 1)..8 {
                for c in 1..3 {
                    for d in 0..c {
                        em[(3 * a + c) * EDOF + 3 * b + d] = em[(3 * a + d) * EDOF + 3 * b + c];
                    }
                }
            }
        }
        em
    });
    Ok(m)
}

/// Curl-curl stiffness `∫ curl u·curl v`; uses
/// `(∇φ_a × e_c)·(∇φ_b × e_d) = δ_cd ∇φ_a·∇φ_b - ∂_d φ_a ∂_c φ_b`.
pub fn assemble_curlcurl(space: &DofSpace) -> Result<CsrMatrix> {
    assemble_curlcurl_with(space, Execution::default())
}

pub fn assemble_curlcurl_with(space: &DofSpace, exec: Execution) -> Result<CsrMatrix> {
    require_vector_space(space)?;
    let grid = space.grid();
    let tab = Tabulation::new(&gauss_2x2x2(), &grid.spacing());
    let vol = grid.cell_volume();
    // constant spacing: every cell has the same element matrix
    let mut em = vec![0.0; EDOF * EDOF];
    for (q, g) in tab.points.iter().zip(&tab.gradients) {
        let w = q.weight * vol;
        for a in 0..8 {
            for b in 0..8 {
                let gg = g[a][0] * g[b][0] + g[a][1] * g[b][1] + g[a][2] * g[b][2];
                for c in 0..3 {
                    for d in 0..3 {
                        let delta = if c == d { gg } else { 0.0 };
                        em[(3 * a + c) * EDOF + 3 * b + d] += w * (delta - g[a][d] * g[b][c]);
                    }
                }
            }
        }
    }
    let mut k = pattern(space);
    accumulate(space, &mut k, exec, |_| em.clone());
    Ok(k)
}

/// Divergence penalty `∫ div(εu) div(εv)` with
/// `div(εu) = tr(ε Du) + div ε · u`.
pub fn assemble_div_penalty(
    space: &DofSpace,
    eps: &SymMatrixField,
    rule: PenaltyQuadrature,
) -> Result<CsrMatrix> {
    assemble_div_penalty_with(space, eps, rule, Execution::default())
}

pub fn assemble_div_penalty_with(
    space: &DofSpace,
    eps: &SymMatrixField,
    rule: PenaltyQuadrature,
    exec: Execution,
) -> Result<CsrMatrix> {
    require_vector_space(space)?;
    check_grid(space.grid(), eps)?;
    let grid = space.grid();
    let tab = Tabulation::new(&penalty_points(rule), &grid.spacing());
    let vol = grid.cell_volume();
    let mut d = pattern(space);
    accumulate(space, &mut d, exec, |cell| {
        let vals = eps.cell_values(cell);
        let mut em = vec![0.0; EDOF * EDOF];
        for ((q, phi), grads) in tab.points.iter().zip(&tab.values).zip(&tab.gradients) {
            let e = SymMatrixField::interpolate(&vals, phi);
            let dive = SymMatrixField::divergence_from(&vals, grads);
            let mut g = [0.0; EDOF];
            for a in 0..8 {
                let eg = e.mul_vec(&grads[a]);
                for c in 0..3 {
                    g[3 * a + c] = eg[c] + phi[a] * dive[c];
                }
            }
            let w = q.weight * vol;
            for p in 0..EDOF {
                let wp = w * g[p];
                for r in p..EDOF {
                    em[p * EDOF + r] += wp * g[r];
                }
            }
        }
        em
    });
    Ok(d)
}

impl AssembledSystem {
    pub fn assemble(
        space: &DofSpace,
        eps: &SymMatrixField,
        tau: f64,
        rule: PenaltyQuadrature,
    ) -> Result<Self> {
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::Assembly(format!("penalty weight must be positive, got {tau}")));
        }
        Ok(Self {
            k: assemble_curlcurl(space)?,
            d: assemble_div_penalty(space, eps, rule)?,
            m: assemble_mass(space, eps)?,
            tau,
            space: space.clone(),
            eps_fingerprint: eps.fingerprint(),
        })
    }

    /// Same system with a different penalty weight.
    pub fn with_tau(&self, tau: f64) -> Self {
        Self { tau, ..self.clone() }
    }

    /// `K + τ D`.
    pub fn penalized_stiffness(&self) -> CsrMatrix {
        self.k.linear_combination(1.0, &self.d, self.tau).expect("shared pattern")
    }

    /// `M + K + τ D`, the matrix of `T_ε`.
    pub fn t_matrix(&self) -> CsrMatrix {
        self.penalized_stiffness().linear_combination(1.0, &self.m, 1.0).expect("shared pattern")
    }

    /// `T_ε[u, v] = uᵀ (M + K + τD) v`.
    pub fn t_form(&self, u: &[f64], v: &[f64]) -> Result<f64> {
        let n = self.space.num_free();
        for x in [u, v] {
            if x.len() != n {
                return Err(Error::Dimension { expected: n, got: x.len() });
            }
        }
        Ok(self.m.bilinear(u, v) + self.k.bilinear(u, v) + self.tau * self.d.bilinear(u, v))
    }
}

/// Scalar Dirichlet problem `-div(ε∇f) = ρ f`.
pub fn assemble_scalar(grid: &Grid, eps: &SymMatrixField) -> Result<ScalarSystem> {
    assemble_scalar_with(grid, eps, Execution::default())
}

pub fn assemble_scalar_with(grid: &Grid, eps: &SymMatrixField, exec: Execution) -> Result<ScalarSystem> {
    check_grid(grid, eps)?;
    require_positive_definite(eps)?;
    let space = DofSpace::new(grid, DofKind::ScalarDirichlet);
    let tab = Tabulation::new(&gauss_2x2x2(), &grid.spacing());
    let vol = grid.cell_volume();
    let mut s = pattern(&space);
    let mut ms = pattern(&space);
    accumulate(&space, &mut s, exec, |cell| {
        let vals = eps.cell_values(cell);
        let mut em = vec![0.0; 64];
        for ((q, phi), g) in tab.points.iter().zip(&tab.values).zip(&tab.gradients) {
            let e = SymMatrixField::interpolate(&vals, phi);
            let w = q.weight * vol;
            for a in 0..8 {
                let eg = e.mul_vec(&g[a]);
                for b in a..8 {
                    em[a * 8 + b] += w * (eg[0] * g[b][0] + eg[1] * g[b][1] + eg[2] * g[b][2]);
                }
            }
        }
        em
    });
    let mut em = vec![0.0; 64];
    for (q, phi) in tab.points.iter().zip(&tab.values) {
        for a in 0..8 {
            for b in a..8 {
                em[a * 8 + b] += q.weight * vol * phi[a] * phi[b];
            }
        }
    }
    accumulate(&space, &mut ms, exec, |_| em.clone());
    Ok(ScalarSystem { s, ms, space })
}

fn check_grid(grid: &Grid, eps: &SymMatrixField) -> Result<()> {
    if eps.grid() != grid {
        return Err(Error::Assembly("permittivity and DOF space live on different grids".into()));
    }
    Ok(())
}

/// Nodal vector field (3 values per node) from free coefficients, evaluated at
/// local coordinates of a cell.
pub fn vector_at(nodal: &[f64], nodes: &[usize; 8], phi: &[f64; 8]) -> [f64; 3] {
    let mut out = [0.0; 3];
    for (n, p) in nodes.iter().zip(phi) {
        for c in 0..3 {
            out[c] += p * nodal[3 * n + c];
        }
    }
    out
}

/// `∫ η E·F` for nodal vector fields `E`, `F` (3 values per node) with the
/// 2x2x2 Gauss rule; exact for trilinear `η`.
pub fn weighted_inner(eta: &SymMatrixField, e: &[f64], f: &[f64]) -> f64 {
    let grid = eta.grid();
    let tab = Tabulation::new(&gauss_2x2x2(), &grid.spacing());
    let vol = grid.cell_volume();
    let per_cell = par::map_indexed(Execution::default(), grid.num_cells(), |cell| {
        let nodes = grid.cell_nodes(cell);
        let vals = eta.cell_values(cell);
        let mut acc = 0.0;
        for (q, phi) in tab.points.iter().zip(&tab.values) {
            let et = SymMatrixField::interpolate(&vals, phi);
            let ev = vector_at(e, &nodes, phi);
            let fv = vector_at(f, &nodes, phi);
            let w = et.mul_vec(&fv);
            acc += q.weight * (ev[0] * w[0] + ev[1] * w[1] + ev[2] * w[2]);
        }
        acc
    });
    vol * per_cell.iter().sum::<f64>()
}

/// Nodal load `g_n = ∫ φ_n Σ_l w_l E_l ⊗ E_l` for weighted nodal vector
/// fields; pairing with a nodal direction `η` gives `Σ_l w_l ∫ η E_l·E_l`.
pub fn outer_product_load(grid: &Grid, fields: &[(f64, Vec<f64>)]) -> Vec<Sym3> {
    let tab = Tabulation::new(&gauss_2x2x2(), &grid.spacing());
    let vol = grid.cell_volume();
    let per_cell = par::map_indexed(Execution::default(), grid.num_cells(), |cell| {
        let nodes = grid.cell_nodes(cell);
        let mut local = [Sym3::ZERO; 8];
        for (q, phi) in tab.points.iter().zip(&tab.values) {
            let mut g = Sym3::ZERO;
            for (w, e) in fields {
                g += *w * Sym3::outer(&vector_at(e, &nodes, phi));
            }
            let g = (q.weight * vol) * g;
            for (l, p) in local.iter_mut().zip(phi) {
                *l += *p * g;
            }
        }
        local
    });
    let mut load = vec![Sym3::ZERO; grid.num_nodes()];
    for (cell, local) in per_cell.into_iter().enumerate() {
        for (n, l) in grid.cell_nodes(cell).iter().zip(local) {
            load[*n] += l;
        }
    }
    load
}

fn penalty_points(rule: PenaltyQuadrature) -> Vec<crate::fem::QuadPoint> {
    match rule {
        PenaltyQuadrature::Reduced => midpoint().to_vec(),
        PenaltyQuadrature::Full => gauss_2x2x2().to_vec(),
    }
}

/// Value and gradient `∂_i u_j` of a nodal vector field at a tabulated point.
fn field_jet(nodal: &[f64], nodes: &[usize; 8], phi: &[f64; 8], grads: &[[f64; 3]; 8]) -> ([f64; 3], [[f64; 3]; 3]) {
    let u = vector_at(nodal, nodes, phi);
    let mut du = [[0.0; 3]; 3];
    for (n, g) in nodes.iter().zip(grads) {
        for (i, row) in du.iter_mut().enumerate() {
            for (j, d) in row.iter_mut().enumerate() {
                *d += g[i] * nodal[3 * n + j];
            }
        }
    }
    (u, du)
}

/// `div(ηu) = tr(η Du) + div η · u` at a point.
fn div_matrix_times(eta: &Sym3, div_eta: &[f64; 3], u: &[f64; 3], du: &[[f64; 3]; 3]) -> f64 {
    let mut acc = 0.0;
    for i in 0..3 {
        acc += div_eta[i] * u[i];
        for j in 0..3 {
            acc += eta.get(i, j) * du[i][j];
        }
    }
    acc
}

/// `∫ div(εE) div(ηE)` for a nodal vector field `E` under the penalty rule.
pub fn penalty_cross(eps: &SymMatrixField, eta: &SymMatrixField, rule: PenaltyQuadrature, e: &[f64]) -> f64 {
    let grid = eps.grid();
    let tab = Tabulation::new(&penalty_points(rule), &grid.spacing());
    let vol = grid.cell_volume();
    let per_cell = par::map_indexed(Execution::default(), grid.num_cells(), |cell| {
        let nodes = grid.cell_nodes(cell);
        let ev = eps.cell_values(cell);
        let hv = eta.cell_values(cell);
        let mut acc = 0.0;
        for ((q, phi), grads) in tab.points.iter().zip(&tab.values).zip(&tab.gradients) {
            let (u, du) = field_jet(e, &nodes, phi, grads);
            let a = div_matrix_times(
                &SymMatrixField::interpolate(&ev, phi),
                &SymMatrixField::divergence_from(&ev, grads),
                &u,
                &du,
            );
            let b = div_matrix_times(
                &SymMatrixField::interpolate(&hv, phi),
                &SymMatrixField::divergence_from(&hv, grads),
                &u,
                &du,
            );
            acc += q.weight * a * b;
        }
        acc
    });
    vol * per_cell.iter().sum::<f64>()
}

/// Nodal load `p_n` with `Σ_n p_n : η_n = Σ_l w_l ∫ div(εE_l) div(ηE_l)` for
/// every nodal direction `η`, under the penalty rule.
pub fn penalty_cross_load(eps: &SymMatrixField, rule: PenaltyQuadrature, fields: &[(f64, Vec<f64>)]) -> Vec<Sym3> {
    let grid = eps.grid();
    let tab = Tabulation::new(&penalty_points(rule), &grid.spacing());
    let vol = grid.cell_volume();
    let per_cell = par::map_indexed(Execution::default(), grid.num_cells(), |cell| {
        let nodes = grid.cell_nodes(cell);
        let ev = eps.cell_values(cell);
        let mut local = [Sym3::ZERO; 8];
        for ((q, phi), grads) in tab.points.iter().zip(&tab.values).zip(&tab.gradients) {
            let e = SymMatrixField::interpolate(&ev, phi);
            let de = SymMatrixField::divergence_from(&ev, grads);
            for (w, f) in fields {
                let (u, du) = field_jet(f, &nodes, phi, grads);
                let scale = q.weight * vol * w * div_matrix_times(&e, &de, &u, &du);
                for b in 0..8 {
                    let mut m = [[0.0; 3]; 3];
                    for (i, row) in m.iter_mut().enumerate() {
                        for (j, x) in row.iter_mut().enumerate() {
                            *x = grads[b][i] * u[j] + phi[b] * du[i][j];
                        }
                    }
                    local[b] += scale * Sym3::from_matrix(&m);
                }
            }
        }
        local
    });
    let mut load = vec![Sym3::ZERO; grid.num_nodes()];
    for (cell, local) in per_cell.into_iter().enumerate() {
        for (n, l) in grid.cell_nodes(cell).iter().zip(local) {
            load[*n] += l;
        }
    }
    load
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::BoxDomain;

    fn space(n: usize) -> DofSpace {
        let g = Grid::new(BoxDomain::cube(1.0).unwrap(), [n; 3]).unwrap();
        DofSpace::new(&g, DofKind::VectorTangentialZero)
    }

    #[test]
    fn matrices_are_exactly_symmetric() {
        let sp = space(3);
        let eps = SymMatrixField::from_fn(sp.grid(), |p| {
            Sym3([1.0 + p[0], 0.1 * p[1], 0.05, 1.2 + p[2] * p[0], 0.02, 0.9 + 0.3 * p[1]])
        });
        let sys = AssembledSystem::assemble(&sp, &eps, 2.0, PenaltyQuadrature::Reduced).unwrap();
        assert_eq!(sys.k.max_asymmetry(), 0.0);
        assert_eq!(sys.d.max_asymmetry(), 0.0);
        assert_eq!(sys.m.max_asymmetry(), 0.0);
        let full = assemble_div_penalty(&sp, &eps, PenaltyQuadrature::Full).unwrap();
        assert_eq!(full.max_asymmetry(), 0.0);
    }

    #[test]
    fn indefinite_permittivity_is_rejected() {
        let sp = space(2);
        let eps = SymMatrixField::constant(sp.grid(), Sym3::diag(1.0, -0.1, 1.0));
        assert!(assemble_mass(&sp, &eps).is_err());
    }

    #[test]
    fn t_form_dimension_mismatch() {
        let sp = space(2);
        let eps = SymMatrixField::constant(sp.grid(), Sym3::IDENTITY);
        let sys = AssembledSystem::assemble(&sp, &eps, 1.0, PenaltyQuadrature::Reduced).unwrap();
        assert!(sys.t_form(&[1.0], &[1.0]).is_err());
    }
}
