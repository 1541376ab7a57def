//! Projected-gradient optimization of `Λ_{F,s}` over permittivities with a
//! fixed Frobenius mass inside the spectral box `[α, β]`.

use crate::classification::{select_tau, solve_dirichlet};
use crate::error::{Error, Result};
use crate::permittivity::{AdmissibilityBounds, SymMatrixField};
use crate::spectral_calculus::{detect_clusters, ClusterPartition, SpectralModel, SymmetricFunctionSpec};
use crate::sym3::Sym3;
use serde::{Deserialize, Serialize};
use std::io::Write;

/// Relative margin kept inside the spectral box so that recomputed nodal
/// eigenvalues never cross a bound through roundoff.
const BOX_MARGIN: f64 = 1e-12;
/// Relative distance to a bound under which a nodal eigenvalue counts as active.
const ACTIVE_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Minimize,
    Maximize,
}

impl Mode {
    fn sign(self) -> f64 {
        match self {
            Mode::Minimize => -1.0,
            Mode::Maximize => 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum TauPolicy {
    Fixed(f64),
    /// `τ = 2 Λ_max / ρ₁` with `Λ_max = 2 λ_{max F}` at the start, then fixed.
    SelectOnce,
    /// The same rule at every iterate.
    SelectEach,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Converged,
    BoundaryActive,
    IterationCap,
    ClusterError,
}

impl std::fmt::Display for Status {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Status::Converged => "converged",
            Status::BoundaryActive => "boundary_active",
            Status::IterationCap => "iteration_cap",
            Status::ClusterError => "cluster_error",
        })
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub mode: Mode,
    pub spec: SymmetricFunctionSpec,
    pub bounds: AdmissibilityBounds,
    /// Target mass; the mass of the start field when absent.
    #[serde(default)]
    pub mass: Option<f64>,
    /// Initial step, as the largest nodal Frobenius change.
    #[serde(default = "defaults::step0")]
    pub step0: f64,
    #[serde(default = "defaults::max_iters")]
    pub max_iters: usize,
    #[serde(default = "defaults::step_shrink")]
    pub step_shrink: f64,
    #[serde(default = "defaults::max_backtracks")]
    pub max_backtracks: usize,
    /// Relative objective change and tangent-gradient size under which the
    /// run stops.
    #[serde(default = "defaults::stop_tol")]
    pub stop_tol: f64,
    #[serde(default = "defaults::armijo")]
    pub armijo: f64,
    #[serde(default = "defaults::tau_policy")]
    pub tau_policy: TauPolicy,
    /// Relative gap under which an index at the edge of `F` and its outside
    /// neighbour count as crossing; the step then follows the min-norm
    /// combination of both branch gradients. Zero disables this.
    #[serde(default = "defaults::crossing_gap")]
    pub crossing_gap: f64,
    #[serde(default = "defaults::model")]
    pub model: SpectralModel,
}

mod defaults {
    use super::*;
    pub fn step0() -> f64 {
        0.25
    }
    pub fn max_iters() -> usize {
        40
    }
    pub fn step_shrink() -> f64 {
        0.5
    }
    pub fn max_backtracks() -> usize {
        12
    }
    pub fn stop_tol() -> f64 {
        1e-6
    }
    pub fn armijo() -> f64 {
        1e-4
    }
    pub fn crossing_gap() -> f64 {
        0.02
    }
    pub fn tau_policy() -> TauPolicy {
        TauPolicy::SelectOnce
    }
    pub fn model() -> SpectralModel {
        SpectralModel::for_variable_permittivity()
    }
}

impl OptimizerConfig {
    pub fn new(mode: Mode, spec: SymmetricFunctionSpec, bounds: AdmissibilityBounds) -> Self {
        Self {
            mode,
            spec,
            bounds,
            mass: None,
            step0: defaults::step0(),
            max_iters: defaults::max_iters(),
            step_shrink: defaults::step_shrink(),
            max_backtracks: defaults::max_backtracks(),
            stop_tol: defaults::stop_tol(),
            armijo: defaults::armijo(),
            tau_policy: defaults::tau_policy(),
            crossing_gap: defaults::crossing_gap(),
            model: defaults::model(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        self.bounds.validate()?;
        if !self.bounds.beta.is_finite() {
            return Err(Error::Config("the optimizer needs a finite upper bound beta".into()));
        }
        if !(self.step0 > 0.0 && self.step0.is_finite()) {
            return Err(Error::Config(format!("step0 must be positive, got {}", self.step0)));
        }
        if !(self.stop_tol > 0.0) {
            return Err(Error::Config(format!("stop_tol must be positive, got {}", self.stop_tol)));
        }
        if !(self.step_shrink > 0.0 && self.step_shrink < 1.0) {
            return Err(Error::Config(format!("step_shrink must lie in (0, 1), got {}", self.step_shrink)));
        }
        if !(self.armijo > 0.0 && self.armijo < 1.0) {
            return Err(Error::Config(format!("armijo must lie in (0, 1), got {}", self.armijo)));
        }
        if !(self.crossing_gap >= 0.0) {
            return Err(Error::Config(format!("crossing_gap must be non-negative, got {}", self.crossing_gap)));
        }
        if let Some(m) = self.mass {
            if !(m > 0.0 && m.is_finite()) {
                return Err(Error::Config(format!("mass must be positive, got {m}")));
            }
        }
        if let TauPolicy::Fixed(t) = self.tau_policy {
            if !(t > 0.0 && t.is_finite()) {
                return Err(Error::Config(format!("fixed tau must be positive, got {t}")));
            }
        }
        self.model.solver.validate()
    }
}

/// Constraint normal `N = n / w` with `n` the nodal mass-differential load and
/// `w` the lumped node weights, so that `⟨G, N⟩_w = dV[G]`.
pub fn constraint_normal(eps: &SymMatrixField) -> Result<SymMatrixField> {
    let load = eps.mass_differential_load()?;
    let w = SymMatrixField::node_weights(eps.grid());
    SymMatrixField::from_values(eps.grid(), load.into_iter().zip(&w).map(|(l, wn)| (1.0 / wn) * l).collect())
}

/// `G − (⟨G, N⟩ / ⟨N, N⟩) N` in the lumped pairing; the result has zero mass
/// differential.
pub fn tangent_project(gradient: &SymMatrixField, eps: &SymMatrixField) -> Result<SymMatrixField> {
    eps.check_same_grid(gradient)?;
    let n = constraint_normal(eps)?;
    let w = SymMatrixField::node_weights(eps.grid());
    let a = gradient.lumped_dot(&n, &w) / n.lumped_dot(&n, &w);
    Ok(gradient.axpy(-a, &n))
}

/// Least-squares Lagrange multiplier and scale-free stationarity residual.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct KktResidual {
    pub multiplier: f64,
    pub residual: f64,
}

/// `A* = ⟨G, N⟩ / ⟨N, N⟩` and `‖G − A* N‖ / ‖G‖` over the nodes selected by
/// `mask` (all nodes when `None`).
pub fn kkt_residual(gradient: &SymMatrixField, eps: &SymMatrixField, mask: Option<&[bool]>) -> Result<KktResidual> {
    eps.check_same_grid(gradient)?;
    let n = constraint_normal(eps)?;
    let w = SymMatrixField::node_weights(eps.grid());
    let keep = |i: usize| mask.map_or(true, |m| m[i]);
    let (mut gn, mut nn, mut gg) = (0.0, 0.0, 0.0);
    for (i, ((g, nv), wi)) in gradient.values().iter().zip(n.values()).zip(&w).enumerate() {
        if keep(i) {
            gn += wi * g.frobenius_dot(nv);
            nn += wi * nv.frobenius_dot(nv);
            gg += wi * g.frobenius_dot(g);
        }
    }
    if !(gg > 0.0) {
        return Ok(KktResidual { multiplier: 0.0, residual: 0.0 });
    }
    let a = if nn > 0.0 { gn / nn } else { 0.0 };
    let res2 = (gg - 2.0 * a * gn + a * a * nn).max(0.0);
    Ok(KktResidual { multiplier: a, residual: (res2 / gg).sqrt() })
}

/// Nodes whose spectrum touches `α` or `β`.
pub fn active_nodes(eps: &SymMatrixField, bounds: &AdmissibilityBounds) -> Vec<bool> {
    eps.values()
        .iter()
        .map(|v| {
            let e = v.eigenvalues();
            e[0] <= bounds.alpha * (1.0 + ACTIVE_TOL) || e[2] >= bounds.beta * (1.0 - ACTIVE_TOL)
        })
        .collect()
}

/// Map `x` into the spectral box and onto the mass level set: returns
/// `clamp(s·clamp(x))` with the scale `s` found by bisection on the
/// (monotone) mass. Fails when `m` is outside the masses the box allows.
pub fn retract(x: &SymMatrixField, bounds: &AdmissibilityBounds, m: f64) -> Result<(SymMatrixField, f64)> {
    let lo = bounds.alpha * (1.0 + BOX_MARGIN);
    let hi = bounds.beta * (1.0 - BOX_MARGIN);
    let base = x.project_spectral_box(lo, hi);
    let clamp_scaled = |s: f64| base.map(|v| (s * *v).clamp_spectrum(lo, hi));
    let vmin = SymMatrixField::constant(x.grid(), Sym3::scaled_identity(lo)).frobenius_mass();
    let vmax = SymMatrixField::constant(x.grid(), Sym3::scaled_identity(hi)).frobenius_mass();
    if !(m >= vmin && m <= vmax) {
        return Err(Error::Optimizer(format!("mass {m} is outside the range [{vmin}, {vmax}] allowed by the box")));
    }
    let v0 = base.frobenius_mass();
    if ((v0 - m) / m).abs() <= 1e-13 {
        return Ok((base, 1.0));
    }
    // bracket
    let (mut a, mut b) = (1.0_f64, 1.0_f64);
    if v0 < m {
        while clamp_scaled(b).frobenius_mass() < m {
            b *= 2.0;
            if b > 1e12 {
                return Err(Error::Optimizer("mass retraction failed to bracket".into()));
            }
        }
    } else {
        while clamp_scaled(a).frobenius_mass() > m {
            a *= 0.5;
            if a < 1e-12 {
                return Err(Error::Optimizer("mass retraction failed to bracket".into()));
            }
        }
    }
    for _ in 0..200 {
        let s = 0.5 * (a + b);
        let f = clamp_scaled(s);
        let v = f.frobenius_mass();
        if ((v - m) / m).abs() <= 1e-12 || (b - a) <= 1e-15 * b {
            return Ok((f, s));
        }
        if v < m {
            a = s;
        } else {
            b = s;
        }
    }
    Err(Error::Optimizer("mass retraction did not converge".into()))
}

/// What one accepted (or rejected) step did.
#[derive(Clone, Debug, Serialize)]
pub struct StepDiagnostics {
    pub accepted: bool,
    pub step: f64,
    pub backtracks: usize,
    pub mass_scale: f64,
    /// Nodes whose spectrum was clamped at `α` or `β` by the retraction.
    pub clamped_nodes: Vec<usize>,
    pub objective_before: f64,
    pub objective_after: f64,
}

/// Objective `Λ_{F,s}` of the raw Maxwell values.
pub fn objective(model: &SpectralModel, eps: &SymMatrixField, spec: &SymmetricFunctionSpec) -> Result<f64> {
    model.evaluate(eps, spec.max_index())?.sym_func_raw(spec)
}

/// One backtracking step along `direction` (already signed for the mode).
pub fn step(
    eps: &SymMatrixField,
    gradient: &SymMatrixField,
    direction: &SymMatrixField,
    f0: f64,
    t0: f64,
    m: f64,
    config: &OptimizerConfig,
    model: &SpectralModel,
) -> Result<(SymMatrixField, StepDiagnostics)> {
    let scale = direction.values().iter().map(|v| v.frobenius_norm()).fold(0.0, f64::max);
    let sign = config.mode.sign();
    let w = SymMatrixField::node_weights(eps.grid());
    let mut diag = StepDiagnostics {
        accepted: false,
        step: 0.0,
        backtracks: 0,
        mass_scale: 1.0,
        clamped_nodes: Vec::new(),
        objective_before: f0,
        objective_after: f0,
    };
    if !(scale > 0.0) {
        return Ok((eps.clone(), diag));
    }
    let unit = direction.scale(1.0 / scale);
    let mut t = t0;
    for bt in 0..=config.max_backtracks {
        let (trial, s) = retract(&eps.axpy(t, &unit), &config.bounds, m)?;
        let delta = trial.axpy(-1.0, eps);
        let predicted = gradient.lumped_dot(&delta, &w);
        let f = objective(model, &trial, &config.spec)?;
        let gain = sign * (f - f0);
        if gain > 0.0 && gain >= config.armijo * predicted.abs() {
            diag.accepted = true;
            diag.step = t;
            diag.backtracks = bt;
            diag.mass_scale = s;
            diag.clamped_nodes =
                active_nodes(&trial, &config.bounds).iter().enumerate().filter(|(_, &a)| a).map(|(i, _)| i).collect();
            diag.objective_after = f;
            return Ok((trial, diag));
        }
        t *= config.step_shrink;
    }
    diag.backtracks = config.max_backtracks + 1;
    Ok((eps.clone(), diag))
}

/// One row of the trajectory.
#[derive(Clone, Debug, Serialize)]
pub struct Iterate {
    pub iter: usize,
    pub fingerprint: String,
    pub objective: f64,
    pub kkt_residual: f64,
    /// Residual over the nodes not at a bound.
    pub kkt_free: f64,
    pub multiplier: f64,
    pub active_fraction: f64,
    pub gamma_violated: bool,
    pub tau: f64,
    pub groups: usize,
    pub step: f64,
    pub backtracks: usize,
}

#[derive(Clone, Debug)]
pub struct OptimizerTrajectory {
    pub iterates: Vec<Iterate>,
    pub status: Status,
    pub final_eps: SymMatrixField,
    pub mass: f64,
    pub message: String,
}

impl OptimizerTrajectory {
    pub fn last(&self) -> &Iterate {
        self.iterates.last().expect("at least one iterate")
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(
            w,
            "iter,fingerprint,objective,kkt_residual,kkt_free,multiplier,active_fraction,gamma_violated,tau,groups,step,backtracks"
        )?;
        for it in &self.iterates {
            writeln!(
                w,
                "{},{},{:.15e},{:.6e},{:.6e},{:.6e},{:.6},{},{:.6e},{},{:.6e},{}",
                it.iter,
                it.fingerprint,
                it.objective,
                it.kkt_residual,
                it.kkt_free,
                it.multiplier,
                it.active_fraction,
                it.gamma_violated,
                it.tau,
                it.groups,
                it.step,
                it.backtracks
            )?;
        }
        Ok(())
    }
}

fn choose_tau(model: &SpectralModel, eps: &SymMatrixField, spec: &SymmetricFunctionSpec) -> Result<f64> {
    let eval = model.evaluate(eps, spec.max_index())?;
    let top = eval.maxwell_values()[spec.max_index() - 1];
    let rho = solve_dirichlet(eps.grid(), eps, 1, &model.solver)?;
    select_tau(2.0 * top, rho[0].value)
}

struct Linearization {
    part: ClusterPartition,
    gradient: SymMatrixField,
    objective: f64,
    /// Gradient of the competing branch at a near crossing.
    branch: Option<SymMatrixField>,
}

/// The index set obtained by swapping the edge of `F` that limits progress in
/// `mode` with its outside neighbour, when the two values are within `gap`.
pub fn crossing_branch(values: &[f64], spec: &SymmetricFunctionSpec, mode: Mode, gap: f64) -> Option<SymmetricFunctionSpec> {
    if gap <= 0.0 {
        return None;
    }
    let (inside, outside) = match mode {
        Mode::Maximize => {
            let p = *spec.f.iter().max()?;
            (p, p + 1)
        }
        Mode::Minimize => {
            let q = *spec.f.iter().min()?;
            if q == 1 {
                return None;
            }
            (q, q - 1)
        }
    };
    if spec.f.contains(&outside) || outside > values.len() {
        return None;
    }
    let (a, b) = (values[inside - 1], values[outside - 1]);
    if (a - b).abs() > gap * a.abs() {
        return None;
    }
    let f = spec.f.iter().map(|&i| if i == inside { outside } else { i }).collect();
    SymmetricFunctionSpec::new(f, spec.s).ok()
}

fn linearize(
    model: &SpectralModel,
    eps: &SymMatrixField,
    spec: &SymmetricFunctionSpec,
    mode: Mode,
    gap: f64,
) -> Result<Linearization> {
    let eval = model.evaluate(eps, spec.max_index() + 2)?;
    let part = detect_clusters(&eval.maxwell, &eval.system.space, spec, model.cluster_tol)?;
    let gradient = model.gradient(&part, eps, spec.s);
    let objective = eval.sym_func_raw(spec)?;
    let branch = crossing_branch(&eval.maxwell_values(), spec, mode, gap).and_then(|alt| {
        detect_clusters(&eval.maxwell, &eval.system.space, &alt, model.cluster_tol)
            .ok()
            .map(|p| model.gradient(&p, eps, alt.s))
    });
    Ok(Linearization { part, gradient, objective, branch })
}

/// Smallest element of the segment between `a` and `b` in the lumped norm.
pub fn min_norm_combination(a: &SymMatrixField, b: &SymMatrixField) -> SymMatrixField {
    let w = SymMatrixField::node_weights(a.grid());
    let d = b.axpy(-1.0, a);
    let dd = d.lumped_dot(&d, &w);
    if !(dd > 0.0) {
        return a.clone();
    }
    let theta = (-a.lumped_dot(&d, &w) / dd).clamp(0.0, 1.0);
    a.axpy(theta, &d)
}

fn record(iter: usize, eps: &SymMatrixField, lin: &Linearization, tau: f64, bounds: &AdmissibilityBounds, step: (f64, usize)) -> Result<(Iterate, usize)> {
    let active = active_nodes(eps, bounds);
    let free: Vec<bool> = active.iter().map(|a| !a).collect();
    let kkt = kkt_residual(&lin.gradient, eps, None)?;
    let kkt_free = kkt_residual(&lin.gradient, eps, Some(&free))?;
    let n_active = active.iter().filter(|&&a| a).count();
    let it = Iterate {
        iter,
        fingerprint: eps.fingerprint(),
        objective: lin.objective,
        kkt_residual: kkt.residual,
        kkt_free: kkt_free.residual,
        multiplier: kkt.multiplier,
        active_fraction: n_active as f64 / active.len() as f64,
        gamma_violated: eps.check_admissibility(bounds).gamma_violated,
        tau,
        groups: lin.part.groups.len(),
        step: step.0,
        backtracks: step.1,
    };
    Ok((it, n_active))
}

/// Run the projected-gradient method from `eps0`. A stationary or stalled run
/// ends as `boundary_active` when some node sits on a bound and as
/// `converged` otherwise.
pub fn optimize(eps0: &SymMatrixField, config: &OptimizerConfig) -> Result<OptimizerTrajectory> {
    config.validate()?;
    if !eps0.check_admissibility(&config.bounds).spectral_pass() {
        return Err(Error::Optimizer("start field is outside the spectral box".into()));
    }
    let mass = config.mass.unwrap_or_else(|| eps0.frobenius_mass());
    let (mut eps, _) = retract(eps0, &config.bounds, mass)?;
    let mut model = config.model.clone();
    model.tau = match config.tau_policy {
        TauPolicy::Fixed(t) => t,
        _ => choose_tau(&model, &eps, &config.spec)?,
    };
    let mut iterates = Vec::new();
    let mut t = config.step0;
    let mut last_step = (0.0, 0);
    let mut pending: Option<String> = None;
    for iter in 0..=config.max_iters {
        if iter > 0 && config.tau_policy == TauPolicy::SelectEach {
            model.tau = choose_tau(&model, &eps, &config.spec)?;
        }
        let lin = match linearize(&model, &eps, &config.spec, config.mode, config.crossing_gap) {
            Ok(l) => l,
            Err(e @ (Error::Spectral(_) | Error::Classification(_))) if iter > 0 => {
                return Ok(OptimizerTrajectory {
                    iterates,
                    status: Status::ClusterError,
                    final_eps: eps,
                    mass,
                    message: e.to_string(),
                });
            }
            Err(e) => return Err(e),
        };
        let (it, n_active) = record(iter, &eps, &lin, model.tau, &config.bounds, last_step)?;
        let kkt = it.kkt_residual;
        iterates.push(it);
        let stationary = if kkt <= config.stop_tol {
            Some("gradient parallel to the constraint normal".to_string())
        } else {
            pending.take()
        };
        if let Some(message) = stationary {
            let status = if n_active > 0 { Status::BoundaryActive } else { Status::Converged };
            return Ok(OptimizerTrajectory { iterates, status, final_eps: eps, mass, message });
        }
        if iter == config.max_iters {
            break;
        }
        let mut tangent = tangent_project(&lin.gradient, &eps)?;
        if let Some(b) = &lin.branch {
            tangent = min_norm_combination(&tangent, &tangent_project(b, &eps)?);
        }
        let direction = tangent.scale(config.mode.sign());
        let (next, diag) = step(&eps, &lin.gradient, &direction, lin.objective, t, mass, config, &model)?;
        if !diag.accepted {
            let status = if n_active > 0 { Status::BoundaryActive } else { Status::Converged };
            let message = "line search found no improving step".to_string();
            return Ok(OptimizerTrajectory { iterates, status, final_eps: eps, mass, message });
        }
        let rel = (diag.objective_after - diag.objective_before).abs() / diag.objective_before.abs().max(f64::MIN_POSITIVE);
        if rel <= config.stop_tol {
            pending = Some("objective change below stop_tol".into());
        }
        eps = next;
        last_step = (diag.step, diag.backtracks);
        t = if diag.backtracks == 0 { (2.0 * diag.step).min(config.step0) } else { diag.step };
    }
    Ok(OptimizerTrajectory {
        iterates,
        status: Status::IterationCap,
        final_eps: eps,
        mass,
        message: format!("stopped after {} iterations", config.max_iters),
    })
}
