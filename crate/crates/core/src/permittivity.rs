//! Nodal symmetric-matrix fields with trilinear interpolation.
//!
//! Permittivities, perturbation directions and gradient fields all share this
//! representation. Values are stored per node; inside a cell the field is the
//! trilinear interpolant, so first derivatives are available in closed form.

use crate::error::{Error, Result};
use crate::fem::{gauss_2x2x2, q1_gradients, q1_values, Tabulation};
use crate::grid::{Grid, GridSpec};
use crate::par::{self, Execution};
use crate::sym3::Sym3;
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Frobenius norms below this are treated as a degenerate permittivity.
pub const DEGENERATE_FROBENIUS: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct SymMatrixField {
    grid: Grid,
    values: Vec<Sym3>,
}

/// Ellipticity band `[alpha, beta]` and gradient bound `gamma`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct AdmissibilityBounds {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl AdmissibilityBounds {
    pub fn new(alpha: f64, beta: f64, gamma: f64) -> Result<Self> {
        let b = Self { alpha, beta, gamma };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.beta > self.alpha && self.beta.is_finite() && self.gamma > 0.0) {
            return Err(Error::Permittivity(format!(
                "bounds need 0 < alpha < beta < inf and gamma > 0, got {self:?}"
            )));
        }
        Ok(())
    }
}

/// Target value `m` of the Frobenius mass.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
pub struct MassConstraint {
    pub m: f64,
}

impl MassConstraint {
    pub fn new(m: f64) -> Result<Self> {
        if !(m > 0.0 && m.is_finite()) {
            return Err(Error::Permittivity(format!("mass must be positive, got {m}")));
        }
        Ok(Self { m })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NodeSpectrum {
    pub min_eig: f64,
    pub max_eig: f64,
}

#[derive(Clone, Debug)]
pub struct AdmissibilityReport {
    pub nodes: Vec<NodeSpectrum>,
    /// Largest Euclidean norm of `∇ε_ij` over all cells, upper-6 order.
    pub max_gradient: [f64; 6],
    pub alpha_violations: Vec<usize>,
    pub beta_violations: Vec<usize>,
    pub gamma_violated: bool,
}

impl AdmissibilityReport {
    pub fn spectral_pass(&self) -> bool {
        self.alpha_violations.is_empty() && self.beta_violations.is_empty()
    }

    pub fn pass(&self) -> bool {
        self.spectral_pass() && !self.gamma_violated
    }
}

/// Schema of the on-disk field format.
pub fn field_file_schema() -> schemars::schema::RootSchema {
    schemars::schema_for!(FieldFile)
}

/// On-disk field format.
#[derive(Serialize, Deserialize, schemars::JsonSchema)]
#[serde(deny_unknown_fields)]
struct FieldFile {
    grid: GridSpec,
    symmetry: String,
    values: Vec<f64>,
}

impl SymMatrixField {
    pub fn from_values(grid: &Grid, values: Vec<Sym3>) -> Result<Self> {
        if values.len() != grid.num_nodes() {
            return Err(Error::Dimension { expected: grid.num_nodes(), got: values.len() });
        }
        Ok(Self { grid: grid.clone(), values })
    }

    pub fn constant(grid: &Grid, value: Sym3) -> Self {
        Self { grid: grid.clone(), values: vec![value; grid.num_nodes()] }
    }

    pub fn zeros(grid: &Grid) -> Self {
        Self::constant(grid, Sym3::ZERO)
    }

    /// Sample `f` at every node.
    pub fn from_fn(grid: &Grid, f: impl Fn(&[f64; 3]) -> Sym3) -> Self {
        let values = (0..grid.num_nodes()).map(|n| f(&grid.node_position(n))).collect();
        Self { grid: grid.clone(), values }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[Sym3] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Sym3] {
        &mut self.values
    }

    pub fn node(&self, n: usize) -> Sym3 {
        self.values[n]
    }

    pub fn map(&self, f: impl Fn(&Sym3) -> Sym3) -> Self {
        Self { grid: self.grid.clone(), values: self.values.iter().map(f).collect() }
    }

    pub fn scale(&self, t: f64) -> Self {
        self.map(|v| t * *v)
    }

    /// `self + t * other`.
    pub fn axpy(&self, t: f64, other: &SymMatrixField) -> Self {
        let values = self.values.iter().zip(&other.values).map(|(a, b)| *a + t * *b).collect();
        Self { grid: self.grid.clone(), values }
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |m, v| m.max(v.max_abs_entry()))
    }

    /// Cell values in local node order.
    #[inline]
    pub fn cell_values(&self, cell: usize) -> [Sym3; 8] {
        self.grid.cell_nodes(cell).map(|n| self.values[n])
    }

    /// Interpolated value from tabulated basis values.
    #[inline]
    pub fn interpolate(cell_vals: &[Sym3; 8], phi: &[f64; 8]) -> Sym3 {
        let mut out = [0.0; 6];
        for (v, p) in cell_vals.iter().zip(phi) {
            for k in 0..6 {
                out[k] += p * v.0[k];
            }
        }
        Sym3(out)
    }

    /// Column-wise divergence `(div ε)_c = Σ_i ∂_i ε_ic` from tabulated gradients.
    #[inline]
    pub fn divergence_from(cell_vals: &[Sym3; 8], grads: &[[f64; 3]; 8]) -> [f64; 3] {
        let mut out = [0.0; 3];
        for (v, g) in cell_vals.iter().zip(grads) {
            for (c, o) in out.iter_mut().enumerate() {
                for (i, gi) in g.iter().enumerate() {
                    *o += gi * v.get(i, c);
                }
            }
        }
        out
    }

    pub fn eval(&self, p: &[f64; 3]) -> Result<Sym3> {
        let (cell, local) = self.grid.locate(p)?;
        Ok(Self::interpolate(&self.cell_values(cell), &q1_values(&local)))
    }

    /// Exact divergence of the trilinear interpolant; points on inter-cell
    /// faces use the lower-index cell.
    pub fn divergence(&self, p: &[f64; 3]) -> Result<[f64; 3]> {
        let (cell, local) = self.grid.locate(p)?;
        let grads = q1_gradients(&local, &self.grid.spacing());
        Ok(Self::divergence_from(&self.cell_values(cell), &grads))
    }

    pub fn check_admissibility(&self, bounds: &AdmissibilityBounds) -> AdmissibilityReport {
        let nodes: Vec<NodeSpectrum> = self
            .values
            .iter()
            .map(|v| {
                let e = v.eigenvalues();
                NodeSpectrum { min_eig: e[0], max_eig: e[2] }
            })
            .collect();
        let alpha_violations =
            nodes.iter().enumerate().filter(|(_, s)| s.min_eig < bounds.alpha).map(|(i, _)| i).collect();
        let beta_violations =
            nodes.iter().enumerate().filter(|(_, s)| s.max_eig > bounds.beta).map(|(i, _)| i).collect();
        let max_gradient = self.max_entry_gradients();
        let gamma_violated = max_gradient.iter().any(|&g| g > bounds.gamma);
        AdmissibilityReport { nodes, max_gradient, alpha_violations, beta_violations, gamma_violated }
    }

    /// Largest `|∇ε_ij|` per entry. `|∇f|²` of a trilinear `f` is convex along
    /// each coordinate line, so its maximum over a cell sits at a corner.
    pub fn max_entry_gradients(&self) -> [f64; 6] {
        let h = self.grid.spacing();
        let corners: Vec<[[f64; 3]; 8]> = (0..8)
            .map(|a| q1_gradients(&[(a & 1) as f64, ((a >> 1) & 1) as f64, ((a >> 2) & 1) as f64], &h))
            .collect();
        let mut out = [0.0_f64; 6];
        for cell in 0..self.grid.num_cells() {
            let vals = self.cell_values(cell);
            for grads in &corners {
                for (k, o) in out.iter_mut().enumerate() {
                    let mut g = [0.0; 3];
                    for (v, gr) in vals.iter().zip(grads) {
                        for d in 0..3 {
                            g[d] += gr[d] * v.0[k];
                        }
                    }
                    *o = o.max((g[0] * g[0] + g[1] * g[1] + g[2] * g[2]).sqrt());
                }
            }
        }
        out
    }

    /// `V[ε] = ∫ |ε|_F` with the 2x2x2 Gauss rule.
    pub fn frobenius_mass(&self) -> f64 {
        self.frobenius_mass_with(Execution::default())
    }

    pub fn frobenius_mass_with(&self, exec: Execution) -> f64 {
        let tab = Tabulation::new(&gauss_2x2x2(), &self.grid.spacing());
        let vol = self.grid.cell_volume();
        let per_cell = par::map_indexed(exec, self.grid.num_cells(), |cell| {
            let vals = self.cell_values(cell);
            tab.points
                .iter()
                .zip(&tab.values)
                .map(|(q, phi)| q.weight * Self::interpolate(&vals, phi).frobenius_norm())
                .sum::<f64>()
        });
        vol * per_cell.iter().sum::<f64>()
    }

    /// Nodal representation `n` of the mass differential: for every nodal
    /// direction `η`, `dV[η] = Σ_nodes n_node : η_node`.
    pub fn mass_differential_load(&self) -> Result<Vec<Sym3>> {
        let tab = Tabulation::new(&gauss_2x2x2(), &self.grid.spacing());
        let vol = self.grid.cell_volume();
        let per_cell = par::map_indexed(Execution::default(), self.grid.num_cells(), |cell| {
            let vals = self.cell_values(cell);
            let mut local = [Sym3::ZERO; 8];
            for (q, phi) in tab.points.iter().zip(&tab.values) {
                let e = Self::interpolate(&vals, phi);
                let f = e.frobenius_norm();
                if f < DEGENERATE_FROBENIUS {
                    return Err(Error::Permittivity(format!(
                        "degenerate permittivity (|ε|_F = {f:e}) in cell {cell}"
                    )));
                }
                let normal = (q.weight * vol / f) * e;
                for (l, p) in local.iter_mut().zip(phi) {
                    *l += *p * normal;
                }
            }
            Ok(local)
        });
        let mut load = vec![Sym3::ZERO; self.grid.num_nodes()];
        for (cell, local) in per_cell.into_iter().enumerate() {
            let local = local?;
            for (n, l) in self.grid.cell_nodes(cell).iter().zip(local) {
                load[*n] += l;
            }
        }
        Ok(load)
    }

    /// `dV[η] = ∫ (ε / |ε|_F) : η`.
    pub fn mass_differential(&self, direction: &SymMatrixField) -> Result<f64> {
        self.check_same_grid(direction)?;
        let load = self.mass_differential_load()?;
        Ok(load.iter().zip(&direction.values).map(|(a, b)| a.frobenius_dot(b)).sum())
    }

    /// Rescale onto the mass level set `V = m`.
    pub fn project_to_mass(&self, m: f64) -> Result<Self> {
        let v = self.frobenius_mass();
        if !(v > 0.0) {
            return Err(Error::Permittivity("cannot rescale a field with zero mass".into()));
        }
        Ok(self.scale(m / v))
    }

    /// Clamp every nodal spectrum into `[alpha, beta]`.
    pub fn project_spectral_box(&self, alpha: f64, beta: f64) -> Self {
        self.map(|v| v.clamp_spectrum(alpha, beta))
    }

    /// `∫ φ_n` for every node (lumped mass weights).
    pub fn node_weights(grid: &Grid) -> Vec<f64> {
        let mut w = vec![0.0; grid.num_nodes()];
        let share = grid.cell_volume() / 8.0;
        for cell in 0..grid.num_cells() {
            for n in grid.cell_nodes(cell) {
                w[n] += share;
            }
        }
        w
    }

    /// Lumped (nodal-quadrature) Frobenius pairing `Σ_n w_n A_n : B_n`.
    pub fn lumped_dot(&self, other: &SymMatrixField, weights: &[f64]) -> f64 {
        self.values.iter().zip(&other.values).zip(weights).map(|((a, b), w)| w * a.frobenius_dot(b)).sum()
    }

    pub fn check_same_grid(&self, other: &SymMatrixField) -> Result<()> {
        if self.grid != other.grid {
            return Err(Error::Permittivity("fields live on different grids".into()));
        }
        Ok(())
    }

    /// Short hex digest of the grid and nodal values.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        let spec = self.grid.spec();
        for x in spec.origin.iter().chain(&spec.lengths) {
            h.update(x.to_le_bytes());
        }
        for c in spec.cells {
            h.update((c as u64).to_le_bytes());
        }
        for v in &self.values {
            for x in v.0 {
                h.update(x.to_le_bytes());
            }
        }
        let d = h.finalize();
        d[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Seed derived from the fingerprint.
    pub fn fingerprint_seed(&self) -> u64 {
        u64::from_str_radix(&self.fingerprint(), 16).unwrap_or(0)
    }

    pub fn to_json(&self) -> Result<String> {
        let file = FieldFile {
            grid: self.grid.spec(),
            symmetry: "upper6".into(),
            values: self.values.iter().flat_map(|v| v.0).collect(),
        };
        Ok(serde_json::to_string(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: FieldFile = serde_json::from_str(text)?;
        if file.symmetry != "upper6" {
            return Err(Error::Config(format!("unsupported symmetry layout '{}'", file.symmetry)));
        }
        let grid = Grid::from_spec(&file.grid)?;
        if file.values.len() != 6 * grid.num_nodes() {
            return Err(Error::Config(format!(
                "field file has {} values, expected {}",
                file.values.len(),
                6 * grid.num_nodes()
            )));
        }
        let values =
            file.values.chunks_exact(6).map(|c| Sym3([c[0], c[1], c[2], c[3], c[4], c[5]])).collect();
        Ok(Self { grid, values })
    }
}

/// `ε_k(x) = base(x) + (sin(k x₁ + phase) / k) · amplitude`, sampled at the
/// nodes (`x₁` measured from the domain origin). Fails when a member leaves
/// the `[alpha, beta]` band.
pub fn oscillatory_sequence(
    base: &SymMatrixField,
    k: u32,
    amplitude: &Sym3,
    phase: f64,
    bounds: Option<&AdmissibilityBounds>,
) -> Result<SymMatrixField> {
    if k == 0 {
        return Err(Error::Permittivity("oscillation index k must be positive".into()));
    }
    let grid = base.grid();
    let x0 = grid.domain().origin[0];
    let kf = k as f64;
    let values = (0..grid.num_nodes())
        .map(|n| {
            let x = grid.node_position(n)[0] - x0;
            base.node(n) + ((kf * x + phase).sin() / kf) * *amplitude
        })
        .collect();
    let field = SymMatrixField::from_values(grid, values)?;
    if let Some(b) = bounds {
        let rep = field.check_admissibility(b);
        if !rep.spectral_pass() {
            return Err(Error::Permittivity(format!(
                "oscillatory member k={k} leaves the [{}, {}] band",
                b.alpha, b.beta
            )));
        }
    }
    Ok(field)
}

/// Parameters of a smooth random permittivity: `level·I` plus `modes` products
/// of low-frequency cosines times random symmetric matrices with entries in
/// `[-amplitude, amplitude]`, finally clamped into `[alpha, beta]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct SmoothRandomSpec {
    pub level: f64,
    pub amplitude: f64,
    pub modes: usize,
    pub max_frequency: u32,
}

impl Default for SmoothRandomSpec {
    fn default() -> Self {
        Self { level: 1.0, amplitude: 0.15, modes: 3, max_frequency: 2 }
    }
}

pub fn smooth_random_field<R: Rng>(
    grid: &Grid,
    spec: &SmoothRandomSpec,
    alpha: f64,
    beta: f64,
    rng: &mut R,
) -> SymMatrixField {
    let d = grid.domain();
    let modes: Vec<(Sym3, [u32; 3], [f64; 3])> = (0..spec.modes)
        .map(|_| {
            let m = Sym3(std::array::from_fn(|_| rng.gen_range(-spec.amplitude..=spec.amplitude)));
            let f = std::array::from_fn(|_| rng.gen_range(0..=spec.max_frequency));
            let ph = std::array::from_fn(|_| rng.gen_range(0.0..std::f64::consts::TAU));
            (m, f, ph)
        })
        .collect();
    SymMatrixField::from_fn(grid, |p| {
        let mut v = Sym3::scaled_identity(spec.level);
        for (m, f, ph) in &modes {
            let mut s = 1.0;
            for a in 0..3 {
                let x = (p[a] - d.origin[a]) / d.lengths[a];
                s *= (std::f64::consts::PI * f[a] as f64 * x + ph[a]).cos();
            }
            v += s * *m;
        }
        v.clamp_spectrum(alpha, beta)
    })
}
