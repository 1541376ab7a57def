//! Command-line front end. Every command reads one JSON config (defaults
//! apply when `--config` is absent) and writes its tables into `--out`.

use crate::assembly::{AssembledSystem, PenaltyQuadrature};
use crate::auchmuty::{AuchmutyOptions, AuchmutyReport, AuchmutyState};
use crate::classification::{classify, solve_dirichlet, ClassifyOptions};
use crate::config::{self, pi_cube, FieldSource};
use crate::eigensolver::{solve_penalized_with, SolverOptions};
use crate::error::{Error, Result};
use crate::experiments::{
    bound_experiment, continuity_experiment, splitting_refinement_study, BoundConfig, ContinuityConfig,
    ExperimentOutput, SplittingConfig,
};
use crate::grid::{DofKind, DofSpace, Grid, GridSpec};
use crate::optimizer::{optimize, Mode, OptimizerConfig};
use crate::par;
use crate::permittivity::{smooth_random_field, AdmissibilityBounds, SmoothRandomSpec, SymMatrixField};
use crate::spectral_calculus::{fd_check, FdReport, SpectralModel, SymmetricFunctionSpec};
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;
use std::fs;
use std::path::{Path, PathBuf};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_NUMERICAL: i32 = 2;
pub const EXIT_ASSERTION: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "permopt", version, about = "Penalized Maxwell eigenvalues and permittivity optimization")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct Common {
    /// JSON config for the command; built-in defaults when absent.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    #[arg(long, global = true, default_value_t = 1)]
    pub seed: u64,
    /// Validate the config and print the resolved plan.
    #[arg(long, global = true)]
    pub dry_run: bool,
    /// Worker threads; all cores by default.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Lowest penalized eigenvalues.
    Solve,
    /// Eigenvalues tagged Maxwell or gradient.
    Classify,
    /// Finite differences against the analytic differential.
    GradCheck,
    /// Mass-constrained optimization of a symmetric function.
    Optimize,
    /// Variational recovery of σ_{M+1}.
    Auchmuty,
    /// Experiment drivers.
    Experiment { name: ExperimentName },
    /// Print the JSON schema of every config and of the field file.
    Schema,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentName {
    Continuity,
    Bound,
    Splitting,
}

#[derive(Clone, Debug, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct SolveConfig {
    pub grid: GridSpec,
    pub eps: FieldSource,
    pub tau: f64,
    pub count: usize,
    pub penalty_quadrature: PenaltyQuadrature,
    pub solver: SolverOptions,
}

impl Default for SolveConfig {
    fn default() -> Self {
        Self {
            grid: pi_cube(8),
            eps: FieldSource::default(),
            tau: 10.0,
            count: 20,
            penalty_quadrature: PenaltyQuadrature::Reduced,
            solver: SolverOptions::default(),
        }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifyConfig {
    #[serde(flatten)]
    pub solve: SolveConfig,
    pub classify: ClassifyOptions,
    /// Dirichlet eigenvalues computed for the `τρ` match; none skips it.
    pub dirichlet_count: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct GradCheckConfig {
    pub grid: GridSpec,
    pub eps: FieldSource,
    pub spec: SymmetricFunctionSpec,
    pub model: SpectralModel,
    /// Random smooth directions (level 0).
    pub directions: usize,
    pub direction: SmoothRandomSpec,
    pub steps: Vec<f64>,
    pub bounds: Option<AdmissibilityBounds>,
    /// Largest accepted best relative error.
    pub tolerance: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            grid: pi_cube(8),
            eps: FieldSource::default(),
            spec: SymmetricFunctionSpec { f: vec![1, 2, 3], s: 1 },
            model: SpectralModel::default(),
            directions: 1,
            direction: SmoothRandomSpec { level: 0.0, amplitude: 0.2, modes: 3, max_frequency: 2 },
            steps: vec![1e-2, 5e-3, 2.5e-3, 1.25e-3],
            bounds: None,
            tolerance: 1e-4,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizeConfig {
    pub grid: GridSpec,
    pub eps: FieldSource,
    pub optimizer: OptimizerConfig,
}

impl Default for OptimizeConfig {
    fn default() -> Self {
        let bounds = AdmissibilityBounds { alpha: 0.5, beta: 2.0, gamma: 5.0 };
        Self {
            grid: pi_cube(8),
            eps: FieldSource::SmoothRandom {
                spec: SmoothRandomSpec { level: 1.2, amplitude: 0.3, modes: 3, max_frequency: 2 },
                alpha: 0.6,
                beta: 1.8,
                seed: None,
            },
            optimizer: OptimizerConfig::new(Mode::Maximize, SymmetricFunctionSpec { f: vec![1], s: 1 }, bounds),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct AuchmutyConfig {
    pub grid: GridSpec,
    pub eps: FieldSource,
    pub tau: f64,
    pub m_values: Vec<usize>,
    pub options: AuchmutyOptions,
    pub solver: SolverOptions,
    /// Largest accepted relative error of `f*` and of `‖u*‖`.
    pub tolerance: f64,
    pub orthogonality_tol: f64,
}

impl Default for AuchmutyConfig {
    fn default() -> Self {
        Self {
            grid: pi_cube(8),
            eps: FieldSource::default(),
            tau: 10.0,
            m_values: vec![0, 1, 2, 3],
            options: AuchmutyOptions::default(),
            solver: SolverOptions::default(),
            tolerance: 1e-6,
            orthogonality_tol: 1e-8,
        }
    }
}

/// Outcome of a command: files written and whether its checks held.
#[derive(Debug)]
pub struct Outcome {
    pub files: Vec<PathBuf>,
    pub checks_passed: bool,
    pub message: String,
}

pub fn exit_code(result: &Result<Outcome>) -> i32 {
    match result {
        Ok(o) if o.checks_passed => EXIT_OK,
        Ok(_) => EXIT_ASSERTION,
        Err(e) if e.is_config_error() => EXIT_CONFIG,
        Err(_) => EXIT_NUMERICAL,
    }
}

/// Parse arguments, run, report, and return the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let result = run(&cli);
    match &result {
        Ok(o) => {
            for f in &o.files {
                println!("wrote {}", f.display());
            }
            if !o.message.is_empty() {
                println!("{}", o.message);
            }
            if !o.checks_passed {
                eprintln!("check failed");
            }
        }
        Err(e) => eprintln!("error: {e}"),
    }
    exit_code(&result)
}

fn load<T: Default + for<'de> Deserialize<'de>>(path: Option<&Path>) -> Result<(T, PathBuf)> {
    match path {
        None => Ok((T::default(), PathBuf::from("."))),
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::Config(format!("cannot read {}: {e}", p.display())))?;
            let cfg = config::parse(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
            let dir = p.parent().map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("."));
            Ok((cfg, dir))
        }
    }
}

fn plan<T: Serialize>(command: &str, cfg: &T, c: &Common) -> Result<Outcome> {
    let plan = json!({
        "command": command,
        "seed": c.seed,
        "out": c.out,
        "config_fingerprint": config::fingerprint(cfg)?,
        "config": cfg,
    });
    Ok(Outcome { files: vec![], checks_passed: true, message: serde_json::to_string_pretty(&plan)? })
}

struct Writer {
    dir: PathBuf,
    files: Vec<PathBuf>,
}

impl Writer {
    fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Self { dir: dir.to_path_buf(), files: vec![] })
    }

    fn put(&mut self, name: &str, bytes: impl AsRef<[u8]>) -> Result<()> {
        let p = self.dir.join(name);
        fs::write(&p, bytes)?;
        self.files.push(p);
        Ok(())
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut s = serde_json::to_string_pretty(value)?;
        s.push('\n');
        self.put(name, s)
    }

    fn done(self, checks_passed: bool, message: String) -> Outcome {
        Outcome { files: self.files, checks_passed, message }
    }
}

pub fn run(cli: &Cli) -> Result<Outcome> {
    par::init_threads(cli.common.threads);
    let c = &cli.common;
    let cfg_path = c.config.as_deref();
    match &cli.command {
        Command::Solve => {
            let (cfg, dir) = load::<SolveConfig>(cfg_path)?;
            if c.dry_run {
                return plan("solve", &cfg, c);
            }
            run_solve(&cfg, c, &dir)
        }
        Command::Classify => {
            let (cfg, dir) = load::<ClassifyConfig>(cfg_path)?;
            if c.dry_run {
                return plan("classify", &cfg, c);
            }
            run_classify(&cfg, c, &dir)
        }
        Command::GradCheck => {
            let (cfg, dir) = load::<GradCheckConfig>(cfg_path)?;
            cfg.spec.validate().map_err(|e| Error::Config(e.to_string()))?;
            if c.dry_run {
                return plan("grad-check", &cfg, c);
            }
            run_grad_check(&cfg, c, &dir)
        }
        Command::Optimize => {
            let (cfg, dir) = load::<OptimizeConfig>(cfg_path)?;
            cfg.optimizer.validate().map_err(|e| Error::Config(e.to_string()))?;
            if c.dry_run {
                return plan("optimize", &cfg, c);
            }
            run_optimize(&cfg, c, &dir)
        }
        Command::Auchmuty => {
            let (cfg, dir) = load::<AuchmutyConfig>(cfg_path)?;
            cfg.options.validate()?;
            if c.dry_run {
                return plan("auchmuty", &cfg, c);
            }
            run_auchmuty(&cfg, c, &dir)
        }
        Command::Experiment { name } => run_experiment(*name, c, cfg_path),
        Command::Schema => {
            Ok(Outcome { files: vec![], checks_passed: true, message: serde_json::to_string_pretty(&config_schema())? })
        }
    }
}

/// Schemas keyed by command, plus `field_file` for `{"kind": "file"}` sources.
pub fn config_schema() -> serde_json::Value {
    use schemars::schema_for;
    json!({
        "solve": schema_for!(SolveConfig),
        "classify": schema_for!(ClassifyConfig),
        "grad-check": schema_for!(GradCheckConfig),
        "optimize": schema_for!(OptimizeConfig),
        "auchmuty": schema_for!(AuchmutyConfig),
        "experiment continuity": schema_for!(ContinuityConfig),
        "experiment bound": schema_for!(BoundConfig),
        "experiment splitting": schema_for!(SplittingConfig),
        "field_file": crate::permittivity::field_file_schema(),
    })
}

fn field(grid: &GridSpec, source: &FieldSource, seed: u64, dir: &Path) -> Result<(Grid, SymMatrixField)> {
    let grid = Grid::from_spec(grid)?;
    let eps = source.build(&grid, seed, dir)?;
    Ok((grid, eps))
}

fn assemble(cfg: &SolveConfig, c: &Common, dir: &Path) -> Result<AssembledSystem> {
    if cfg.count == 0 {
        return Err(Error::Config("count must be positive".into()));
    }
    cfg.solver.validate()?;
    let (grid, eps) = field(&cfg.grid, &cfg.eps, c.seed, dir)?;
    let space = DofSpace::new(&grid, DofKind::VectorTangentialZero);
    AssembledSystem::assemble(&space, &eps, cfg.tau, cfg.penalty_quadrature)
}

fn run_solve(cfg: &SolveConfig, c: &Common, dir: &Path) -> Result<Outcome> {
    let system = assemble(cfg, c, dir)?;
    let spectrum = solve_penalized_with(&system, cfg.count, &cfg.solver)?;
    let mut buf = Vec::new();
    spectrum.write_csv(&mut buf)?;
    let mut w = Writer::new(&c.out)?;
    w.put("spectrum.csv", buf)?;
    Ok(w.done(true, String::new()))
}

fn run_classify(cfg: &ClassifyConfig, c: &Common, dir: &Path) -> Result<Outcome> {
    let system = assemble(&cfg.solve, c, dir)?;
    let spectrum = solve_penalized_with(&system, cfg.solve.count, &cfg.solve.solver)?;
    let rho: Vec<f64> = if cfg.dirichlet_count > 0 {
        let (grid, eps) = field(&cfg.solve.grid, &cfg.solve.eps, c.seed, dir)?;
        solve_dirichlet(&grid, &eps, cfg.dirichlet_count, &cfg.solve.solver)?.iter().map(|p| p.value).collect()
    } else {
        vec![]
    };
    let tagged = classify(&spectrum, &system, &rho, &cfg.classify)?;
    let mut buf = Vec::new();
    tagged.write_csv(&mut buf)?;
    let mut w = Writer::new(&c.out)?;
    w.put("tagged.csv", buf)?;
    Ok(w.done(true, String::new()))
}

/// Random smooth directions with zero mean level, reproducible from `seed`.
pub fn random_directions(grid: &Grid, spec: &SmoothRandomSpec, count: usize, seed: u64) -> Vec<SymMatrixField> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| smooth_random_field(grid, spec, f64::NEG_INFINITY, f64::INFINITY, &mut rng))
        .collect()
}

fn run_grad_check(cfg: &GradCheckConfig, c: &Common, dir: &Path) -> Result<Outcome> {
    if cfg.directions == 0 || cfg.steps.is_empty() || cfg.steps.iter().any(|&t| !(t > 0.0)) {
        return Err(Error::Config("grad-check needs at least one direction and positive steps".into()));
    }
    let (grid, eps) = field(&cfg.grid, &cfg.eps, c.seed, dir)?;
    let dirs = random_directions(&grid, &cfg.direction, cfg.directions, c.seed);
    let reports = dirs
        .iter()
        .map(|d| fd_check(&cfg.model, &eps, &cfg.spec, d, &cfg.steps, cfg.bounds.as_ref()))
        .collect::<Result<Vec<FdReport>>>()?;
    let mut csv = String::from("direction,step,finite_difference,analytic,relative_error,corrected,corrected_relative_error\n");
    for (i, r) in reports.iter().enumerate() {
        for row in &r.rows {
            csv.push_str(&format!(
                "{},{:.6e},{:.15e},{:.15e},{:.6e},{:.15e},{:.6e}\n",
                i + 1,
                row.step,
                row.finite_difference,
                row.analytic,
                row.relative_error,
                row.corrected,
                row.corrected_relative_error
            ));
        }
    }
    let worst_best = reports.iter().map(|r| r.best_relative_error).fold(0.0, f64::max);
    let passed = worst_best <= cfg.tolerance;
    let mut w = Writer::new(&c.out)?;
    w.put("fd.csv", csv)?;
    w.json(
        "fd_report.json",
        &json!({
            "config_fingerprint": config::fingerprint(cfg)?,
            "seed": c.seed,
            "spec": cfg.spec,
            "reports": reports,
            "min_relative_error": reports.iter().map(|r| r.best_relative_error).fold(f64::INFINITY, f64::min),
            "max_best_relative_error": worst_best,
            "tolerance": cfg.tolerance,
            "pass": passed,
        }),
    )?;
    Ok(w.done(passed, format!("best relative error {worst_best:.3e} (tolerance {:.1e})", cfg.tolerance)))
}

/// KKT residual under which an iterate with an empty active set would count
/// as an interior critical point.
pub const INTERIOR_KKT_TOL: f64 = 0.05;

fn run_optimize(cfg: &OptimizeConfig, c: &Common, dir: &Path) -> Result<Outcome> {
    let (_, eps) = field(&cfg.grid, &cfg.eps, c.seed, dir)?;
    let traj = optimize(&eps, &cfg.optimizer)?;
    let last = traj.last();
    let interior = last.active_fraction == 0.0 && last.kkt_residual < INTERIOR_KKT_TOL;
    let passed = last.active_fraction > 0.0 && !interior;
    let mut buf = Vec::new();
    traj.write_csv(&mut buf)?;
    let mut w = Writer::new(&c.out)?;
    w.put("trajectory.csv", buf)?;
    w.put("final_eps.json", traj.final_eps.to_json()?)?;
    w.json(
        "optimize_summary.json",
        &json!({
            "config_fingerprint": config::fingerprint(cfg)?,
            "seed": c.seed,
            "status": traj.status,
            "message": traj.message,
            "iterations": last.iter,
            "objective": last.objective,
            "kkt_residual": last.kkt_residual,
            "active_fraction": last.active_fraction,
            "mass": traj.mass,
            "final_mass": traj.final_eps.frobenius_mass(),
            "interior_kkt_certified": interior,
        }),
    )?;
    Ok(w.done(passed, format!("{}: objective {:.9}, active fraction {:.3}", traj.status, last.objective, last.active_fraction)))
}

/// Reports for every `M` in `m_values` on one system.
pub fn auchmuty_reports(
    system: &AssembledSystem,
    m_values: &[usize],
    options: &AuchmutyOptions,
    solver: &SolverOptions,
) -> Result<Vec<AuchmutyReport>> {
    let top = m_values.iter().copied().max().unwrap_or(0) + 1;
    let spectrum = solve_penalized_with(system, top, solver)?;
    m_values
        .iter()
        .map(|&m| {
            let state = AuchmutyState::from_system(system, m, &spectrum.pairs)?;
            let min = state.minimize_f(options)?;
            Ok(state.report(&min, spectrum.pairs[m].value))
        })
        .collect()
}

fn run_auchmuty(cfg: &AuchmutyConfig, c: &Common, dir: &Path) -> Result<Outcome> {
    if cfg.m_values.is_empty() {
        return Err(Error::Config("m_values must not be empty".into()));
    }
    let (grid, eps) = field(&cfg.grid, &cfg.eps, c.seed, dir)?;
    let space = DofSpace::new(&grid, DofKind::VectorTangentialZero);
    let system = AssembledSystem::assemble(&space, &eps, cfg.tau, PenaltyQuadrature::Reduced)?;
    let mut options = cfg.options;
    options.seed = options.seed.wrapping_add(c.seed);
    let reports = auchmuty_reports(&system, &cfg.m_values, &options, &cfg.solver)?;
    let passed = reports.iter().all(|r| {
        r.f_error <= cfg.tolerance && r.norm_error.abs() <= cfg.tolerance && r.orthogonality <= cfg.orthogonality_tol
    });
    let mut w = Writer::new(&c.out)?;
    w.json(
        "auchmuty.json",
        &json!({
            "config_fingerprint": config::fingerprint(cfg)?,
            "seed": c.seed,
            "reports": reports,
            "pass": passed,
        }),
    )?;
    Ok(w.done(passed, String::new()))
}

/// Pass/fail verdict of an experiment summary; the splitting study is
/// judged on its finest mesh.
pub fn experiment_verdict(out: &ExperimentOutput) -> bool {
    let s = &out.summary;
    let flag = |k: &str| s[k].as_bool().unwrap_or(false);
    match out.name {
        "continuity" => flag("decreasing") && flag("within_tolerance") && !flag("gradients_converge"),
        "bound" => flag("finite") && flag("stable"),
        "splitting" => s["meshes"].as_array().and_then(|m| m.last()).is_some_and(|r| {
            r["tags_agree"].as_bool() == Some(true) && r["max_relative_distance"].as_f64() <= Some(0.02)
        }),
        _ => false,
    }
}

fn run_experiment(name: ExperimentName, c: &Common, cfg_path: Option<&Path>) -> Result<Outcome> {
    let out = match name {
        ExperimentName::Continuity => {
            let (cfg, dir) = load::<ContinuityConfig>(cfg_path)?;
            if c.dry_run {
                return plan("experiment continuity", &cfg, c);
            }
            continuity_experiment(&cfg, c.seed, &dir)?
        }
        ExperimentName::Bound => {
            let (cfg, _) = load::<BoundConfig>(cfg_path)?;
            if c.dry_run {
                return plan("experiment bound", &cfg, c);
            }
            bound_experiment(&cfg, c.seed)?
        }
        ExperimentName::Splitting => {
            let (cfg, _) = load::<SplittingConfig>(cfg_path)?;
            if c.dry_run {
                return plan("experiment splitting", &cfg, c);
            }
            splitting_refinement_study(&cfg)?
        }
    };
    let passed = experiment_verdict(&out);
    let mut w = Writer::new(&c.out)?;
    w.put(&format!("{}.csv", out.name), &out.csv)?;
    w.json(&format!("{}_summary.json", out.name), &out.summary)?;
    Ok(w.done(passed, String::new()))
}
