//! Box domains, tensor-product grids and constrained degree-of-freedom spaces.
//!
//! Nodes are numbered lexicographically with x fastest:
//! `node = i + (nx + 1) * (j + (ny + 1) * k)`.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Axis-aligned box `origin + [0, lengths]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
pub struct BoxDomain {
    pub origin: [f64; 3],
    pub lengths: [f64; 3],
}

impl BoxDomain {
    pub fn new(origin: [f64; 3], lengths: [f64; 3]) -> Result<Self> {
        if lengths.iter().any(|&l| !(l > 0.0) || !l.is_finite()) {
            return Err(Error::Grid(format!("box lengths must be positive, got {lengths:?}")));
        }
        if origin.iter().any(|o| !o.is_finite()) {
            return Err(Error::Grid(format!("box origin must be finite, got {origin:?}")));
        }
        Ok(Self { origin, lengths })
    }

    /// The cube `(0, a)^3`.
    pub fn cube(a: f64) -> Result<Self> {
        Self::new([0.0; 3], [a; 3])
    }

    pub fn volume(&self) -> f64 {
        self.lengths.iter().product()
    }

    pub fn contains(&self, p: &[f64; 3], slack: f64) -> bool {
        (0..3).all(|a| p[a] >= self.origin[a] - slack && p[a] <= self.origin[a] + self.lengths[a] + slack)
    }
}

/// JSON description of a grid, `{origin, lengths, cells}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub origin: [f64; 3],
    pub lengths: [f64; 3],
    pub cells: [usize; 3],
}

#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    domain: BoxDomain,
    cells: [usize; 3],
    spacing: [f64; 3],
}

impl Grid {
    pub fn new(domain: BoxDomain, cells: [usize; 3]) -> Result<Self> {
        let domain = BoxDomain::new(domain.origin, domain.lengths)?;
        if cells.iter().any(|&c| c < 2) {
            return Err(Error::Grid(format!("need at least 2 cells per axis, got {cells:?}")));
        }
        let spacing = [0, 1, 2].map(|a| domain.lengths[a] / cells[a] as f64);
        Ok(Self { domain, cells, spacing })
    }

    pub fn from_spec(spec: &GridSpec) -> Result<Self> {
        Self::new(BoxDomain::new(spec.origin, spec.lengths)?, spec.cells)
    }

    pub fn spec(&self) -> GridSpec {
        GridSpec { origin: self.domain.origin, lengths: self.domain.lengths, cells: self.cells }
    }

    pub fn domain(&self) -> &BoxDomain {
        &self.domain
    }

    pub fn cells(&self) -> [usize; 3] {
        self.cells
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn nodes_per_axis(&self) -> [usize; 3] {
        self.cells.map(|c| c + 1)
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes_per_axis().iter().product()
    }

    pub fn num_cells(&self) -> usize {
        self.cells.iter().product()
    }

    pub fn cell_volume(&self) -> f64 {
        self.spacing.iter().product()
    }

    #[inline]
    pub fn node_index(&self, i: usize, j: usize, k: usize) -> usize {
        let n = self.nodes_per_axis();
        i + n[0] * (j + n[1] * k)
    }

    #[inline]
    pub fn node_coords(&self, node: usize) -> [usize; 3] {
        let n = self.nodes_per_axis();
        [node % n[0], (node / n[0]) % n[1], node / (n[0] * n[1])]
    }

    pub fn node_position(&self, node: usize) -> [f64; 3] {
        let c = self.node_coords(node);
        [0, 1, 2].map(|a| self.domain.origin[a] + c[a] as f64 * self.spacing[a])
    }

    #[inline]
    pub fn cell_coords(&self, cell: usize) -> [usize; 3] {
        let c = self.cells;
        [cell % c[0], (cell / c[0]) % c[1], cell / (c[0] * c[1])]
    }

    /// Lower corner of a cell in physical coordinates.
    pub fn cell_origin(&self, cell: usize) -> [f64; 3] {
        let c = self.cell_coords(cell);
        [0, 1, 2].map(|a| self.domain.origin[a] + c[a] as f64 * self.spacing[a])
    }

    /// The eight nodes of a cell; local index `a = ax + 2 ay + 4 az`.
    pub fn cell_nodes(&self, cell: usize) -> [usize; 8] {
        let [ci, cj, ck] = self.cell_coords(cell);
        let mut out = [0; 8];
        for (a, o) in out.iter_mut().enumerate() {
            *o = self.node_index(ci + (a & 1), cj + ((a >> 1) & 1), ck + ((a >> 2) & 1));
        }
        out
    }

    /// Whether the node lies on one of the two faces normal to `axis`.
    #[inline]
    pub fn on_boundary_along(&self, node: usize, axis: usize) -> bool {
        let c = self.node_coords(node)[axis];
        c == 0 || c == self.cells[axis]
    }

    pub fn is_boundary_node(&self, node: usize) -> bool {
        (0..3).any(|a| self.on_boundary_along(node, a))
    }

    /// Cell owning a point together with the local coordinates in `[0, 1]^3`.
    /// Points on an inter-cell face belong to the lower-index cell.
    pub fn locate(&self, p: &[f64; 3]) -> Result<(usize, [f64; 3])> {
        let tol = 1e-12 * self.domain.lengths.iter().fold(0.0_f64, |m, &l| m.max(l));
        if !self.domain.contains(p, tol) {
            return Err(Error::Permittivity(format!("point {p:?} lies outside the domain")));
        }
        let mut idx = [0usize; 3];
        let mut local = [0.0; 3];
        for a in 0..3 {
            let t = (p[a] - self.domain.origin[a]) / self.spacing[a];
            let t = t.clamp(0.0, self.cells[a] as f64);
            // lower-index owner: t = 3.0 goes to cell 2 with local 1.0
            let mut c = t.ceil() as usize;
            c = c.saturating_sub(1).min(self.cells[a] - 1);
            idx[a] = c;
            local[a] = t - c as f64;
        }
        let cell = idx[0] + self.cells[0] * (idx[1] + self.cells[1] * idx[2]);
        Ok((cell, local))
    }
}

/// Which boundary condition a DOF space encodes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, schemars::JsonSchema)]
pub enum DofKind {
    /// Three components per node, tangential components zero on the boundary
    /// (`ν × u = 0`).
    VectorTangentialZero,
    /// One value per node, zero on the boundary.
    ScalarDirichlet,
}

const CONSTRAINED: u32 = u32::MAX;

/// Map from node components to contiguous free indices.
#[derive(Clone, Debug)]
pub struct DofSpace {
    kind: DofKind,
    grid: Grid,
    free_index: Vec<u32>,
    owners: Vec<(usize, usize)>,
}

impl DofSpace {
    pub fn new(grid: &Grid, kind: DofKind) -> Self {
        let comps = kind.components();
        let nn = grid.num_nodes();
        let mut free_index = vec![CONSTRAINED; nn * comps];
        let mut owners = Vec::new();
        for node in 0..nn {
            for c in 0..comps {
                let free = match kind {
                    DofKind::ScalarDirichlet => !grid.is_boundary_node(node),
                    // component c is tangential on faces normal to every other axis
                    DofKind::VectorTangentialZero => {
                        (0..3).filter(|&a| a != c).all(|a| !grid.on_boundary_along(node, a))
                    }
                };
                if free {
                    free_index[node * comps + c] = owners.len() as u32;
                    owners.push((node, c));
                }
            }
        }
        Self { kind, grid: grid.clone(), free_index, owners }
    }

    pub fn kind(&self) -> DofKind {
        self.kind
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn components(&self) -> usize {
        self.kind.components()
    }

    pub fn num_free(&self) -> usize {
        self.owners.len()
    }

    /// Free index of `(node, component)`, or `None` when constrained.
    #[inline]
    pub fn index(&self, node: usize, comp: usize) -> Option<usize> {
        let v = self.free_index[node * self.components() + comp];
        (v != CONSTRAINED).then_some(v as usize)
    }

    /// `(node, component)` owning a free index.
    pub fn owner(&self, dof: usize) -> (usize, usize) {
        self.owners[dof]
    }

    /// Expand free coefficients to a full nodal array (zeros where constrained).
    pub fn expand(&self, coeffs: &[f64]) -> Vec<f64> {
        let comps = self.components();
        let mut out = vec![0.0; self.grid.num_nodes() * comps];
        for (dof, &(node, c)) in self.owners.iter().enumerate() {
            out[node * comps + c] = coeffs[dof];
        }
        out
    }

    /// Restrict a full nodal array to the free coefficients.
    pub fn restrict(&self, nodal: &[f64]) -> Vec<f64> {
        let comps = self.components();
        self.owners.iter().map(|&(node, c)| nodal[node * comps + c]).collect()
    }
}

impl DofKind {
    pub fn components(self) -> usize {
        match self {
            DofKind::VectorTangentialZero => 3,
            DofKind::ScalarDirichlet => 1,
        }
    }
}
