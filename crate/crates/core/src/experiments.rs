//! Experiment drivers: continuity under oscillating perturbations, the
//! uniform eigenvalue bound, and the refinement study of the splitting of
//! the penalized spectrum.

use crate::assembly::AssembledSystem;
use crate::classification::{classify, solve_dirichlet, ClassifyOptions, Tag};
use crate::config::{fingerprint, pi_cube, FieldSource};
use crate::eigensolver::{solve_penalized_with, SolverOptions};
use crate::error::{Error, Result};
use crate::grid::{DofKind, DofSpace, Grid, GridSpec};
use crate::par::{self, Execution};
use crate::permittivity::{oscillatory_sequence, AdmissibilityBounds, SmoothRandomSpec, SymMatrixField};
use crate::spectral_calculus::SpectralModel;
use crate::sym3::Sym3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;
use std::fmt::Write as _;
use std::path::Path;

/// CSV table plus JSON summary.
#[derive(Clone, Debug)]
pub struct ExperimentOutput {
    pub name: &'static str,
    pub csv: String,
    pub summary: serde_json::Value,
}

// ---------------------------------------------------------------- continuity

#[derive(Clone, Debug, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct ContinuityConfig {
    pub grid: GridSpec,
    pub base: FieldSource,
    /// Oscillation amplitude, upper-triangle order.
    pub amplitude: [f64; 6],
    pub k_list: Vec<u32>,
    pub j_max: usize,
    /// Phase of `sin(k x₁ + phase)`. With `π/2` the oscillation does not
    /// vanish at the nodes when `k` equals the cell count.
    pub phase: f64,
    pub bounds: Option<AdmissibilityBounds>,
    /// Largest deviation accepted at the largest `k`.
    pub tolerance: f64,
    pub model: SpectralModel,
}

impl Default for ContinuityConfig {
    fn default() -> Self {
        Self {
            grid: pi_cube(16),
            base: FieldSource::default(),
            amplitude: [0.1, 0.0, 0.0, 0.1, 0.0, 0.1],
            k_list: vec![1, 2, 4, 8, 16],
            j_max: 6,
            phase: std::f64::consts::FRAC_PI_2,
            bounds: None,
            tolerance: 1e-2,
            model: SpectralModel::for_variable_permittivity(),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ContinuityRow {
    pub k: u32,
    /// `max_j |λ_j[ε_k] − λ_j[ε]|`.
    pub max_deviation: f64,
    pub deviations: Vec<f64>,
    /// `max |ε_k − ε|` over nodal entries.
    pub sup_distance: f64,
    /// Largest entry gradient of `ε_k`.
    pub gradient_sup: f64,
}

pub fn continuity_experiment(config: &ContinuityConfig, seed: u64, base_dir: &Path) -> Result<ExperimentOutput> {
    if config.k_list.is_empty() || config.j_max == 0 {
        return Err(Error::Config("continuity needs a non-empty k_list and j_max ≥ 1".into()));
    }
    let grid = Grid::from_spec(&config.grid)?;
    let base = config.base.build(&grid, seed, base_dir)?;
    let amp = Sym3(config.amplitude);
    let reference = config.model.evaluate(&base, config.j_max)?.maxwell_values();
    let base_grad = max_of(&base.max_entry_gradients());
    let rows = par::map_slice(Execution::default(), &config.k_list, |&k| -> Result<ContinuityRow> {
        let eps_k = oscillatory_sequence(&base, k, &amp, config.phase, config.bounds.as_ref())?;
        let values = config.model.evaluate(&eps_k, config.j_max)?.maxwell_values();
        let deviations: Vec<f64> =
            values.iter().zip(&reference).take(config.j_max).map(|(a, b)| (a - b).abs()).collect();
        let sup_distance = eps_k
            .values()
            .iter()
            .zip(base.values())
            .map(|(a, b)| (*a - *b).max_abs_entry())
            .fold(0.0, f64::max);
        Ok(ContinuityRow {
            k,
            max_deviation: max_of(&deviations),
            deviations,
            sup_distance,
            gradient_sup: max_of(&eps_k.max_entry_gradients()),
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    let mut csv = String::from("k,j,deviation,sup_distance,gradient_sup\n");
    for r in &rows {
        for (j, d) in r.deviations.iter().enumerate() {
            writeln!(csv, "{},{},{:.6e},{:.6e},{:.6e}", r.k, j + 1, d, r.sup_distance, r.gradient_sup).unwrap();
        }
    }
    let mut sorted = rows.clone();
    sorted.sort_by_key(|r| r.k);
    let decreasing = sorted.windows(2).all(|w| w[1].max_deviation <= w[0].max_deviation);
    let last = sorted.last().expect("non-empty");
    let first = sorted.first().expect("non-empty");
    let lipschitz = sorted
        .iter()
        .filter(|r| r.sup_distance > 0.0)
        .map(|r| r.max_deviation / r.sup_distance)
        .fold(0.0, f64::max);
    // gradients stay bounded away from those of the limit
    let gradient_gap = (last.gradient_sup - base_grad).abs();
    let summary = json!({
        "experiment": "continuity",
        "config_fingerprint": fingerprint(config)?,
        "seed": seed,
        "reference": reference,
        "rows": sorted,
        "decreasing": decreasing,
        "final_deviation": last.max_deviation,
        "tolerance": config.tolerance,
        "within_tolerance": last.max_deviation <= config.tolerance,
        "lipschitz_constant": lipschitz,
        "base_gradient_sup": base_grad,
        "gradient_sup_first": first.gradient_sup,
        "gradient_sup_last": last.gradient_sup,
        "gradients_converge": gradient_gap <= 1e-3 * (1.0 + base_grad),
    });
    Ok(ExperimentOutput { name: "continuity", csv, summary })
}

fn max_of(v: &[f64]) -> f64 {
    v.iter().copied().fold(0.0, f64::max)
}

// --------------------------------------------------------------------- bound

#[derive(Clone, Debug, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct BoundConfig {
    pub grid: GridSpec,
    pub bounds: AdmissibilityBounds,
    pub samples: usize,
    pub j_max: usize,
    pub random: SmoothRandomSpec,
    pub tau: f64,
    pub solver: SolverOptions,
    /// Accepted relative change of `C` between the first half of the samples
    /// and all of them.
    pub stability_tol: f64,
}

impl Default for BoundConfig {
    fn default() -> Self {
        Self {
            grid: pi_cube(8),
            bounds: AdmissibilityBounds { alpha: 0.5, beta: 2.0, gamma: 5.0 },
            samples: 20,
            j_max: 10,
            random: SmoothRandomSpec { level: 1.0, amplitude: 0.4, modes: 4, max_frequency: 2 },
            tau: 10.0,
            solver: SolverOptions::default(),
            stability_tol: 0.1,
        }
    }
}

fn penalized_values(eps: &SymMatrixField, tau: f64, count: usize, solver: &SolverOptions) -> Result<Vec<f64>> {
    let space = DofSpace::new(eps.grid(), DofKind::VectorTangentialZero);
    let system = AssembledSystem::assemble(&space, eps, tau, Default::default())?;
    Ok(solve_penalized_with(&system, count, solver)?.values())
}

/// Admissible random fields: draws failing the gradient bound are redrawn.
pub fn admissible_samples(grid: &Grid, config: &BoundConfig, seed: u64) -> Result<Vec<SymMatrixField>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let b = &config.bounds;
    let mut out = Vec::with_capacity(config.samples);
    let mut draws = 0;
    while out.len() < config.samples {
        draws += 1;
        if draws > 50 * config.samples.max(1) {
            return Err(Error::Config("random fields keep violating the gradient bound; lower the amplitude".into()));
        }
        let f = crate::permittivity::smooth_random_field(grid, &config.random, b.alpha, b.beta, &mut rng);
        if f.check_admissibility(b).pass() {
            out.push(f);
        }
    }
    Ok(out)
}

pub fn bound_experiment(config: &BoundConfig, seed: u64) -> Result<ExperimentOutput> {
    config.bounds.validate()?;
    if config.samples < 2 || config.j_max == 0 {
        return Err(Error::Config("bound experiment needs at least 2 samples and j_max ≥ 1".into()));
    }
    let grid = Grid::from_spec(&config.grid)?;
    let identity = SymMatrixField::constant(&grid, Sym3::IDENTITY);
    let reference = penalized_values(&identity, config.tau, config.j_max, &config.solver)?;
    let samples = admissible_samples(&grid, config, seed)?;
    let ratios = par::map_slice(Execution::default(), &samples, |eps| -> Result<Vec<f64>> {
        let v = penalized_values(eps, config.tau, config.j_max, &config.solver)?;
        Ok(v.iter().zip(&reference).map(|(s, r)| s / (r + 1.0)).collect())
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let mut csv = String::from("sample,j,sigma_ratio\n");
    for (i, r) in ratios.iter().enumerate() {
        for (j, x) in r.iter().enumerate() {
            writeln!(csv, "{},{},{:.9e}", i + 1, j + 1, x).unwrap();
        }
    }
    let c_of = |n: usize| ratios[..n].iter().flatten().copied().fold(0.0, f64::max);
    let half = config.samples / 2;
    let (c_half, c_all) = (c_of(half), c_of(config.samples));
    let change = (c_all - c_half).abs() / c_half;
    let c_identity = reference.iter().map(|r| r / (r + 1.0)).fold(0.0, f64::max);
    let summary = json!({
        "experiment": "bound",
        "config_fingerprint": fingerprint(config)?,
        "seed": seed,
        "reference": reference,
        "c_identity": c_identity,
        "c_half": c_half,
        "c_all": c_all,
        "relative_change": change,
        "finite": c_all.is_finite(),
        "stable": change < config.stability_tol,
    });
    Ok(ExperimentOutput { name: "bound", csv, summary })
}

// ----------------------------------------------------------------- splitting

#[derive(Clone, Debug, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct SplittingConfig {
    /// Box shared by all meshes.
    pub origin: [f64; 3],
    pub lengths: [f64; 3],
    /// Cells per axis of each mesh.
    pub meshes: Vec<usize>,
    /// Scalar permittivity `c`, so that `ε = c I`.
    pub eps_scale: f64,
    pub tau: f64,
    /// Eigenvalues up to this value are compared.
    pub window: f64,
    pub solver: SolverOptions,
    pub classify: ClassifyOptions,
    /// Separation demanded of gradient modes from the Maxwell divergence
    /// threshold.
    pub gradient_div_min: f64,
}

impl Default for SplittingConfig {
    fn default() -> Self {
        Self {
            origin: [0.0; 3],
            lengths: [std::f64::consts::PI; 3],
            meshes: vec![8, 16, 32],
            eps_scale: 1.0,
            tau: 10.0,
            window: 25.0,
            solver: SolverOptions::default(),
            classify: ClassifyOptions::default(),
            gradient_div_min: 0.1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Maxwell,
    Gradient,
}

/// Closed-form values for `ε = c I` on a box: Maxwell `k²/c` with
/// `k² = Σ (m_i π / L_i)²`, at most one index zero, multiplicity 2 when all
/// are positive; gradient `τ c k²` with all indices positive.
pub fn analytic_targets(lengths: [f64; 3], c: f64, tau: f64, window: f64) -> Vec<(f64, Family)> {
    let pi = std::f64::consts::PI;
    let kmax: Vec<usize> =
        lengths.iter().map(|l| ((window * c.max(1.0 / c) * 4.0).sqrt() * l / pi).ceil() as usize + 1).collect();
    let mut out = Vec::new();
    for m in 0..=kmax[0] {
        for n in 0..=kmax[1] {
            for p in 0..=kmax[2] {
                let idx = [m, n, p];
                let zeros = idx.iter().filter(|&&i| i == 0).count();
                let k2: f64 = idx.iter().zip(&lengths).map(|(&i, l)| (i as f64 * pi / l).powi(2)).sum();
                if zeros <= 1 {
                    let lam = k2 / c;
                    if lam <= window {
                        let mult = if zeros == 0 { 2 } else { 1 };
                        out.extend(std::iter::repeat((lam, Family::Maxwell)).take(mult));
                    }
                }
                if zeros == 0 {
                    let g = tau * c * k2;
                    if g <= window {
                        out.push((g, Family::Gradient));
                    }
                }
            }
        }
    }
    out.sort_by(|a, b| a.0.total_cmp(&b.0).then((a.1 as u8).cmp(&(b.1 as u8))));
    out
}

/// One computed value next to its closed-form partner.
#[derive(Clone, Debug, Serialize)]
pub struct MatchedPair {
    pub sigma: f64,
    pub target: f64,
    pub family: Family,
    pub tag: Tag,
    pub div_residual: f64,
    pub relative_distance: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct MeshResult {
    pub cells: usize,
    pub matched: usize,
    pub max_relative_distance: f64,
    pub lambda1: f64,
    pub lambda1_error: f64,
    pub tags_agree: bool,
    pub max_maxwell_div: f64,
    /// `None` when no gradient value lies in the window.
    pub min_gradient_div: Option<f64>,
    pub mismatched_tags: usize,
    #[serde(skip)]
    pub pairs: Vec<MatchedPair>,
}

fn run_mesh(config: &SplittingConfig, cells: usize, targets: &[(f64, Family)]) -> Result<MeshResult> {
    let spec = GridSpec { origin: config.origin, lengths: config.lengths, cells: [cells; 3] };
    let grid = Grid::from_spec(&spec)?;
    let eps = SymMatrixField::constant(&grid, Sym3::scaled_identity(config.eps_scale));
    let space = DofSpace::new(&grid, DofKind::VectorTangentialZero);
    let system = AssembledSystem::assemble(&space, &eps, config.tau, Default::default())?;
    let count = targets.len().min(space.num_free());
    let spectrum = solve_penalized_with(&system, count, &config.solver)?;
    let n_grad = targets.iter().filter(|t| t.1 == Family::Gradient).count();
    let rho: Vec<f64> = solve_dirichlet(&grid, &eps, n_grad + 4, &config.solver)?.iter().map(|p| p.value).collect();
    let tagged = classify(&spectrum, &system, &rho, &config.classify)?;
    let pairs: Vec<MatchedPair> = tagged
        .pairs
        .iter()
        .zip(targets)
        .map(|(p, t)| MatchedPair {
            sigma: p.pair.value,
            target: t.0,
            family: t.1,
            tag: p.tag,
            div_residual: p.div_residual,
            relative_distance: (p.pair.value - t.0).abs() / t.0,
        })
        .collect();
    let expected = |f: Family| match f {
        Family::Maxwell => Tag::Maxwell,
        Family::Gradient => Tag::Gradient,
    };
    let mismatched = pairs.iter().filter(|p| p.tag != expected(p.family)).count();
    let of = |f: Family| pairs.iter().filter(move |p| p.family == f).map(|p| p.div_residual);
    let min_gradient_div = of(Family::Gradient).reduce(f64::min);
    let lam1_target = targets.iter().find(|t| t.1 == Family::Maxwell).map(|t| t.0).unwrap_or(f64::NAN);
    let lambda1 = pairs.first().map(|p| p.sigma).unwrap_or(f64::NAN);
    Ok(MeshResult {
        cells,
        matched: pairs.len(),
        max_relative_distance: pairs.iter().map(|p| p.relative_distance).fold(0.0, f64::max),
        lambda1,
        lambda1_error: (lambda1 - lam1_target).abs(),
        tags_agree: mismatched == 0,
        max_maxwell_div: of(Family::Maxwell).fold(0.0, f64::max),
        min_gradient_div,
        mismatched_tags: mismatched,
        pairs,
    })
}

/// Closed-form targets and one result per mesh.
pub fn splitting_meshes(config: &SplittingConfig) -> Result<(Vec<(f64, Family)>, Vec<MeshResult>)> {
    if config.meshes.is_empty() {
        return Err(Error::Config("splitting study needs at least one mesh".into()));
    }
    if !(config.eps_scale > 0.0 && config.tau > 0.0 && config.window > 0.0) {
        return Err(Error::Config("eps_scale, tau and window must be positive".into()));
    }
    let targets = analytic_targets(config.lengths, config.eps_scale, config.tau, config.window);
    if targets.is_empty() {
        return Err(Error::Config("no closed-form eigenvalue lies below the window".into()));
    }
    let results = par::map_slice(Execution::default(), &config.meshes, |&n| run_mesh(config, n, &targets))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    Ok((targets, results))
}

fn family_name(f: Family) -> &'static str {
    match f {
        Family::Maxwell => "maxwell",
        Family::Gradient => "gradient",
    }
}

/// Refinement study for `ε = c I`: every computed value below the window is
/// matched in order with the merged closed-form Maxwell and gradient values.
pub fn splitting_refinement_study(config: &SplittingConfig) -> Result<ExperimentOutput> {
    let (targets, results) = splitting_meshes(config)?;
    let mut csv = String::from("cells,index,sigma,target,family,relative_distance,tag,div_residual\n");
    for r in &results {
        for (i, p) in r.pairs.iter().enumerate() {
            writeln!(
                csv,
                "{},{},{:.12e},{:.12e},{},{:.6e},{},{:.6e}",
                r.cells,
                i + 1,
                p.sigma,
                p.target,
                family_name(p.family),
                p.relative_distance,
                p.tag,
                p.div_residual
            )
            .unwrap();
        }
    }
    let ratios: Vec<f64> = results.windows(2).map(|w| w[0].lambda1_error / w[1].lambda1_error).collect();
    let orders: Vec<f64> = results
        .windows(2)
        .map(|w| (w[0].lambda1_error / w[1].lambda1_error).ln() / (w[1].cells as f64 / w[0].cells as f64).ln())
        .collect();
    let summary = json!({
        "experiment": "splitting",
        "config_fingerprint": fingerprint(config)?,
        "targets": targets.len(),
        "meshes": results,
        "lambda1_error_ratios": ratios,
        "observed_orders": orders,
        "gradient_div_min": config.gradient_div_min,
    });
    Ok(ExperimentOutput { name: "splitting", csv, summary })
}
