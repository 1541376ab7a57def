//! Elementary symmetric functions `Λ_{F,s}` of Maxwell eigenvalues, their
//! differential with respect to the permittivity, the nodal gradient field
//! and a finite-difference harness.

use crate::assembly::{
    outer_product_load, penalty_cross, penalty_cross_load, weighted_inner, AssembledSystem, PenaltyQuadrature,
};
use crate::classification::{classify, ClassifyOptions, Tag, TaggedSpectrum};
use crate::eigensolver::{solve_penalized_with, EigenPair, SolverOptions};
use crate::error::{Error, Result};
use crate::grid::{DofKind, DofSpace};
use crate::par::{self, Execution};
use crate::permittivity::{AdmissibilityBounds, SymMatrixField};
use crate::sym3::Sym3;
use serde::{Deserialize, Serialize};

/// `F` (1-based Maxwell indices) and the degree `s`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct SymmetricFunctionSpec {
    #[serde(rename = "F")]
    pub f: Vec<usize>,
    pub s: usize,
}

impl SymmetricFunctionSpec {
    pub fn new(mut f: Vec<usize>, s: usize) -> Result<Self> {
        f.sort_unstable();
        f.dedup();
        let spec = Self { f, s };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.f.is_empty() || self.f.contains(&0) {
            return Err(Error::Spectral(format!("index set must be nonempty and 1-based, got {:?}", self.f)));
        }
        if self.f.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Spectral(format!("index set must be strictly increasing, got {:?}", self.f)));
        }
        if self.s == 0 || self.s > self.f.len() {
            return Err(Error::Spectral(format!("degree s = {} outside 1..={}", self.s, self.f.len())));
        }
        Ok(())
    }

    /// Largest index in `F`.
    pub fn max_index(&self) -> usize {
        *self.f.last().expect("validated nonempty")
    }
}

/// Partition of `F` into clusters of (numerically) equal eigenvalues.
#[derive(Clone, Debug)]
pub struct ClusterPartition {
    /// 1-based Maxwell indices in `F`.
    pub indices: Vec<usize>,
    /// Per group, the 1-based Maxwell indices it contains.
    pub groups: Vec<Vec<usize>>,
    /// Per group, the mean eigenvalue `λ_{F_k}`.
    pub values: Vec<f64>,
    /// Per group, ε-orthonormal eigenvectors as nodal fields (3 per node).
    pub basis: Vec<Vec<Vec<f64>>>,
}

/// Group the ascending `values` into maximal chains whose consecutive gaps
/// are at most `tol·(1 + λ)`, and check that `F` is a union of groups.
pub fn cluster_groups(values: &[f64], f: &[usize], tol: f64) -> Result<Vec<Vec<usize>>> {
    let max = *f.iter().max().ok_or_else(|| Error::Spectral("empty index set".into()))?;
    if max > values.len() {
        return Err(Error::Spectral(format!("index {max} requested but only {} Maxwell values", values.len())));
    }
    let mut all: Vec<Vec<usize>> = Vec::new();
    for (i, &v) in values.iter().enumerate() {
        match all.last_mut() {
            Some(g) if (v - values[g[g.len() - 1] - 1]).abs() <= tol * (1.0 + v.abs()) => g.push(i + 1),
            _ => all.push(vec![i + 1]),
        }
    }
    let mut groups = Vec::new();
    for g in all {
        let inside = g.iter().filter(|i| f.contains(i)).count();
        if inside == 0 {
            continue;
        }
        if inside != g.len() {
            let outside: Vec<usize> = g.iter().filter(|i| !f.contains(i)).copied().collect();
            return Err(Error::Spectral(format!(
                "eigenvalue cluster {g:?} straddles the index set: indices {outside:?} outside F are within tolerance"
            )));
        }
        if g.last() == Some(&values.len()) {
            return Err(Error::Spectral(format!(
                "cannot certify the gap above index {}: no further Maxwell value available",
                values.len()
            )));
        }
        groups.push(g);
    }
    Ok(groups)
}

/// Build the partition from ascending Maxwell pairs.
pub fn detect_clusters(
    maxwell: &[EigenPair],
    space: &DofSpace,
    spec: &SymmetricFunctionSpec,
    cluster_tol: f64,
) -> Result<ClusterPartition> {
    spec.validate()?;
    if space.kind() != DofKind::VectorTangentialZero {
        return Err(Error::Spectral("eigenvectors must live in the vector space".into()));
    }
    let values: Vec<f64> = maxwell.iter().map(|p| p.value).collect();
    let groups = cluster_groups(&values, &spec.f, cluster_tol)?;
    let vals = groups.iter().map(|g| g.iter().map(|&i| values[i - 1]).sum::<f64>() / g.len() as f64).collect();
    let basis = groups
        .iter()
        .map(|g| g.iter().map(|&i| space.expand(&maxwell[i - 1].vector)).collect())
        .collect();
    Ok(ClusterPartition { indices: spec.f.clone(), groups, values: vals, basis })
}

/// Elementary symmetric polynomial of degree `s` of `values`.
pub fn elementary_symmetric(values: &[f64], s: usize) -> f64 {
    let mut e = vec![0.0; s + 1];
    e[0] = 1.0;
    for &v in values {
        for d in (1..=s.min(values.len())).rev() {
            e[d] += v * e[d - 1];
        }
    }
    e[s]
}

fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Neumaier-compensated sum.
fn compensated_sum(terms: impl IntoIterator<Item = f64>) -> f64 {
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for t in terms {
        let s = sum + t;
        comp += if sum.abs() >= t.abs() { (sum - s) + t } else { (t - s) + sum };
        sum = s;
    }
    sum + comp
}

impl ClusterPartition {
    pub fn sizes(&self) -> Vec<usize> {
        self.groups.iter().map(|g| g.len()).collect()
    }

    /// `Λ_{F,s}` with every group value repeated `|F_k|` times.
    pub fn sym_func(&self, s: usize) -> f64 {
        let expanded: Vec<f64> =
            self.values.iter().zip(self.sizes()).flat_map(|(&v, n)| std::iter::repeat(v).take(n)).collect();
        elementary_symmetric(&expanded, s)
    }

    /// `c_k = Σ C(|F_k|−1, s_k−1) λ_k^{s_k} Π_{j≠k} C(|F_j|, s_j) λ_j^{s_j}`
    /// over compositions `s_1 + … + s_n = s` with `0 ≤ s_j ≤ |F_j|`; `k` is
    /// 0-based.
    pub fn coeff_ck(&self, s: usize, k: usize) -> f64 {
        let sizes = self.sizes();
        let n = sizes.len();
        let mut terms = Vec::new();
        let mut comp = vec![0usize; n];
        enumerate_compositions(&sizes, s, 0, &mut comp, &mut |c| {
            if c[k] == 0 {
                return;
            }
            let mut t = binomial(sizes[k] - 1, c[k] - 1) * self.values[k].powi(c[k] as i32);
            for j in 0..n {
                if j != k {
                    t *= binomial(sizes[j], c[j]) * self.values[j].powi(c[j] as i32);
                }
            }
            terms.push(t);
        });
        compensated_sum(terms)
    }

    pub fn coefficients(&self, s: usize) -> Vec<f64> {
        (0..self.groups.len()).map(|k| self.coeff_ck(s, k)).collect()
    }

    /// `dΛ_{F,s}[η] = −Σ_k c_k Σ_{l∈F_k} ∫ η E⁽ˡ⁾·E⁽ˡ⁾`.
    pub fn differential(&self, s: usize, direction: &SymMatrixField) -> f64 {
        let c = self.coefficients(s);
        let jobs: Vec<(usize, usize)> =
            self.basis.iter().enumerate().flat_map(|(k, b)| (0..b.len()).map(move |l| (k, l))).collect();
        let parts = par::map_slice(Execution::default(), &jobs, |&(k, l)| {
            let e = &self.basis[k][l];
            c[k] * weighted_inner(direction, e, e)
        });
        -compensated_sum(parts)
    }

    /// Nodal gradient `G_n = g_n / w_n` with
    /// `g_n = −Σ_k c_k Σ_l ∫ φ_n E⁽ˡ⁾ ⊗ E⁽ˡ⁾` and `w_n = ∫ φ_n`, so that the
    /// lumped pairing `Σ_n w_n G_n : η_n` reproduces the differential for
    /// every nodal direction `η`.
    pub fn gradient_field(&self, s: usize, grid: &crate::grid::Grid) -> SymMatrixField {
        let c = self.coefficients(s);
        let fields: Vec<(f64, Vec<f64>)> = self
            .basis
            .iter()
            .zip(&c)
            .flat_map(|(b, &ck)| b.iter().map(move |e| (-ck, e.clone())))
            .collect();
        let load = outer_product_load(grid, &fields);
        let w = SymMatrixField::node_weights(grid);
        let values = load.into_iter().zip(&w).map(|(g, wn)| (1.0 / wn) * g).collect();
        SymMatrixField::from_values(grid, values).expect("grid-sized load")
    }

    /// `c_k / λ_{F_k}`: the derivative of `Λ_{F,s}` with respect to any one
    /// member of group `k`.
    pub fn member_weights(&self, s: usize) -> Vec<f64> {
        self.coefficients(s).iter().zip(&self.values).map(|(c, v)| c / v).collect()
    }

    /// Penalty contribution `2τ Σ_k (c_k/λ_{F_k}) Σ_l ∫ div(εE⁽ˡ⁾) div(ηE⁽ˡ⁾)`
    /// to the derivative of the discrete eigenvalues. It vanishes when the
    /// eigenvectors are exactly ε-divergence free.
    pub fn penalty_differential(
        &self,
        s: usize,
        eps: &SymMatrixField,
        tau: f64,
        rule: PenaltyQuadrature,
        direction: &SymMatrixField,
    ) -> f64 {
        let w = self.member_weights(s);
        let terms = self
            .basis
            .iter()
            .zip(&w)
            .flat_map(|(b, &wk)| b.iter().map(move |e| 2.0 * tau * wk * penalty_cross(eps, direction, rule, e)));
        compensated_sum(terms)
    }

    /// Nodal representative of `penalty_differential` under the lumped pairing.
    pub fn penalty_gradient_field(&self, s: usize, eps: &SymMatrixField, tau: f64, rule: PenaltyQuadrature) -> SymMatrixField {
        let w = self.member_weights(s);
        let fields: Vec<(f64, Vec<f64>)> = self
            .basis
            .iter()
            .zip(&w)
            .flat_map(|(b, &wk)| b.iter().map(move |e| (2.0 * tau * wk, e.clone())))
            .collect();
        let load = penalty_cross_load(eps, rule, &fields);
        let nw = SymMatrixField::node_weights(eps.grid());
        let values = load.into_iter().zip(&nw).map(|(g, wn)| (1.0 / wn) * g).collect();
        SymMatrixField::from_values(eps.grid(), values).expect("grid-sized load")
    }

    /// Replace the basis of every group by `Q_k · R_k` for orthogonal `R_k`
    /// drawn by the caller (one per group, square of the group size).
    pub fn rotated(&self, rotations: &[Vec<Vec<f64>>]) -> Result<Self> {
        if rotations.len() != self.basis.len() {
            return Err(Error::Dimension { expected: self.basis.len(), got: rotations.len() });
        }
        let basis = self
            .basis
            .iter()
            .zip(rotations)
            .map(|(b, r)| {
                if r.len() != b.len() {
                    return Err(Error::Dimension { expected: b.len(), got: r.len() });
                }
                Ok((0..b.len())
                    .map(|j| {
                        let mut v = vec![0.0; b[0].len()];
                        for (i, bi) in b.iter().enumerate() {
                            let rij = r[i][j];
                            v.iter_mut().zip(bi).for_each(|(x, y)| *x += rij * y);
                        }
                        v
                    })
                    .collect())
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { basis, ..self.clone() })
    }
}

fn enumerate_compositions(sizes: &[usize], remaining: usize, j: usize, comp: &mut Vec<usize>, f: &mut dyn FnMut(&[usize])) {
    if j == sizes.len() {
        if remaining == 0 {
            f(comp);
        }
        return;
    }
    let rest: usize = sizes[j + 1..].iter().sum();
    for sj in 0..=sizes[j].min(remaining) {
        if remaining - sj > rest {
            continue;
        }
        comp[j] = sj;
        enumerate_compositions(sizes, remaining - sj, j + 1, comp, f);
    }
    comp[j] = 0;
}

/// Settings shared by every evaluation of a Maxwell spectrum at a given
/// permittivity.
#[derive(Clone, Debug, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct SpectralModel {
    pub tau: f64,
    pub penalty_quadrature: PenaltyQuadrature,
    pub solver: SolverOptions,
    pub classify: ClassifyOptions,
    pub cluster_tol: f64,
    /// Pairs requested beyond the highest Maxwell index needed.
    pub extra_pairs: usize,
    /// Add the penalty term to gradients so they differentiate the discrete
    /// eigenvalues exactly.
    pub penalty_correction: bool,
}

impl Default for SpectralModel {
    fn default() -> Self {
        Self {
            tau: 10.0,
            penalty_quadrature: PenaltyQuadrature::Reduced,
            solver: SolverOptions::default(),
            classify: ClassifyOptions::default(),
            cluster_tol: 1e-6,
            extra_pairs: 6,
            penalty_correction: true,
        }
    }
}

/// `evaluate` gives up once the request exceeds this multiple of the need.
const MAX_WIDENING: usize = 8;

impl SpectralModel {
    /// Defaults for non-constant permittivities on coarse meshes, where the
    /// divergence residual of discrete Maxwell modes reaches `1e-1`: modes
    /// are split by their penalty share at `0.5` instead.
    pub fn for_variable_permittivity() -> Self {
        let mut m = Self::default();
        m.classify.penalty_share_tol = Some(0.5);
        m
    }
}

/// One solved and classified spectrum.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub system: AssembledSystem,
    pub tagged: TaggedSpectrum,
    /// Maxwell pairs in ascending order.
    pub maxwell: Vec<EigenPair>,
}

impl Evaluation {
    pub fn maxwell_values(&self) -> Vec<f64> {
        self.maxwell.iter().map(|p| p.value).collect()
    }

    /// `Λ_{F,s}` of the raw values (no clustering).
    pub fn sym_func_raw(&self, spec: &SymmetricFunctionSpec) -> Result<f64> {
        let v = self.maxwell_values();
        let picked = spec
            .f
            .iter()
            .map(|&i| v.get(i - 1).copied().ok_or_else(|| Error::Spectral(format!("Maxwell index {i} unavailable"))))
            .collect::<Result<Vec<_>>>()?;
        Ok(elementary_symmetric(&picked, spec.s))
    }
}

impl SpectralModel {
    /// Solve until at least `needed` Maxwell pairs are available, doubling
    /// the request when gradient modes crowd the low end. Ambiguous values
    /// below the highest needed Maxwell value are an error.
    pub fn evaluate(&self, eps: &SymMatrixField, needed: usize) -> Result<Evaluation> {
        let space = DofSpace::new(eps.grid(), DofKind::VectorTangentialZero);
        let system = AssembledSystem::assemble(&space, eps, self.tau, self.penalty_quadrature)?;
        let n = space.num_free();
        let mut count = (needed + self.extra_pairs).min(n);
        loop {
            let spectrum = solve_penalized_with(&system, count, &self.solver)?;
            let tagged = classify(&spectrum, &system, &[], &self.classify)?;
            let maxwell: Vec<EigenPair> = tagged.maxwell().map(|p| p.pair.clone()).take(needed).collect();
            if maxwell.len() >= needed {
                let top = maxwell[needed - 1].value;
                if let Some(bad) = tagged.pairs.iter().find(|p| p.tag == Tag::Ambiguous && p.pair.value <= top) {
                    return Err(Error::Classification(format!(
                        "ambiguous eigenvalue {} (div residual {:.3e}) inside the Maxwell window",
                        bad.pair.value, bad.div_residual
                    )));
                }
                return Ok(Evaluation { system, tagged, maxwell });
            }
            if count == n || count >= MAX_WIDENING * (needed + self.extra_pairs) {
                return Err(Error::Classification(format!(
                    "only {} Maxwell values found among the lowest {count} eigenvalues",
                    maxwell.len()
                )));
            }
            count = (2 * count).min(n);
        }
    }

    /// Evaluate and partition for `spec`; one Maxwell value beyond `F` is
    /// computed to certify the gap.
    pub fn partition(&self, eps: &SymMatrixField, spec: &SymmetricFunctionSpec) -> Result<(Evaluation, ClusterPartition)> {
        let eval = self.evaluate(eps, spec.max_index() + 1)?;
        let part = detect_clusters(&eval.maxwell, &eval.system.space, spec, self.cluster_tol)?;
        Ok((eval, part))
    }
}

impl SpectralModel {
    /// Directional derivative of `Λ_{F,s}` at `eps`: the cluster formula,
    /// plus the penalty term when `penalty_correction` is set.
    pub fn differential(&self, part: &ClusterPartition, eps: &SymMatrixField, s: usize, direction: &SymMatrixField) -> f64 {
        let d = part.differential(s, direction);
        if self.penalty_correction {
            d + part.penalty_differential(s, eps, self.tau, self.penalty_quadrature, direction)
        } else {
            d
        }
    }

    /// Nodal gradient matching `differential` under the lumped pairing.
    pub fn gradient(&self, part: &ClusterPartition, eps: &SymMatrixField, s: usize) -> SymMatrixField {
        let g = part.gradient_field(s, eps.grid());
        if self.penalty_correction {
            g.axpy(1.0, &part.penalty_gradient_field(s, eps, self.tau, self.penalty_quadrature))
        } else {
            g
        }
    }
}

/// One row of a finite-difference table.
#[derive(Clone, Debug, Serialize)]
pub struct FdRow {
    pub step: f64,
    pub finite_difference: f64,
    /// The cluster formula.
    pub analytic: f64,
    pub relative_error: f64,
    /// The formula plus the penalty term.
    pub corrected: f64,
    pub corrected_relative_error: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct FdReport {
    pub rows: Vec<FdRow>,
    pub best_relative_error: f64,
    /// `log(e_i / e_{i+1}) / log(t_i / t_{i+1})` for consecutive steps.
    pub observed_orders: Vec<f64>,
    /// Some consecutive pair above the roundoff floor shows order ≥ 1.5.
    pub quadratic: bool,
}

/// Central differences `(Λ(ε+tη) − Λ(ε−tη)) / 2t` against the analytic
/// differential. Every perturbed field must stay inside `bounds` when given.
pub fn fd_check(
    model: &SpectralModel,
    eps: &SymMatrixField,
    spec: &SymmetricFunctionSpec,
    direction: &SymMatrixField,
    steps: &[f64],
    bounds: Option<&AdmissibilityBounds>,
) -> Result<FdReport> {
    eps.check_same_grid(direction)?;
    let (_, part) = model.partition(eps, spec)?;
    let analytic = part.differential(spec.s, direction);
    let corrected = analytic + part.penalty_differential(spec.s, eps, model.tau, model.penalty_quadrature, direction);
    let needed = spec.max_index();
    let values = par::map_slice(Execution::default(), steps, |&t| -> Result<f64> {
        let mut lam = [0.0; 2];
        for (slot, sign) in [1.0, -1.0].iter().enumerate() {
            let pert = eps.axpy(sign * t, direction);
            if let Some(b) = bounds {
                if !pert.check_admissibility(b).spectral_pass() {
                    return Err(Error::Spectral(format!("perturbation with step {t:e} leaves the admissible band")));
                }
            }
            lam[slot] = model.evaluate(&pert, needed)?.sym_func_raw(spec)?;
        }
        Ok((lam[0] - lam[1]) / (2.0 * t))
    });
    let mut rows = Vec::with_capacity(steps.len());
    for (&t, fd) in steps.iter().zip(values) {
        let fd = fd?;
        let rel = |x: f64| (fd - x).abs() / x.abs().max(f64::MIN_POSITIVE);
        rows.push(FdRow {
            step: t,
            finite_difference: fd,
            analytic,
            relative_error: rel(analytic),
            corrected,
            corrected_relative_error: rel(corrected),
        });
    }
    let best = rows.iter().map(|r| r.relative_error).fold(f64::INFINITY, f64::min);
    let observed_orders: Vec<f64> = rows
        .windows(2)
        .map(|w| (w[0].relative_error / w[1].relative_error).ln() / (w[0].step / w[1].step).ln())
        .collect();
    let quadratic = observed_orders.iter().any(|&p| p >= 1.5);
    Ok(FdReport { rows, best_relative_error: best, observed_orders, quadratic })
}

/// `−Σ_k c_k |F_k|`, the differential along `ε` itself.
pub fn normalization_target(part: &ClusterPartition, s: usize) -> f64 {
    -part.coefficients(s).iter().zip(part.sizes()).map(|(c, n)| c * n as f64).sum::<f64>()
}

/// `Σ_n w_n A_n : B_n`, the pairing under which `gradient_field` represents
/// the differential.
pub fn lumped_pairing(a: &SymMatrixField, b: &SymMatrixField) -> f64 {
    a.lumped_dot(b, &SymMatrixField::node_weights(a.grid()))
}

/// Nodewise `Σ_l E⁽ˡ⁾ ⊗ E⁽ˡ⁾` of a cluster at the nodes (diagnostic).
pub fn nodal_outer_sum(basis: &[Vec<f64>], num_nodes: usize) -> Vec<Sym3> {
    (0..num_nodes)
        .map(|n| {
            let mut acc = Sym3::ZERO;
            for e in basis {
                acc += Sym3::outer(&[e[3 * n], e[3 * n + 1], e[3 * n + 2]]);
            }
            acc
        })
        .collect()
}
