//! Acceptance suite. Each criterion prints one PASS/FAIL line; the test fails
//! when any criterion fails.

use nalgebra::DMatrix;
use permopt::assembly::AssembledSystem;
use permopt::cli::{auchmuty_reports, main_with_args, random_directions, INTERIOR_KKT_TOL};
use permopt::classification::Tag;
use permopt::config::pi_cube;
use permopt::eigensolver::{solve_penalized_with, SolverOptions, SolverPath};
use permopt::experiments::{
    bound_experiment, continuity_experiment, splitting_meshes, BoundConfig, ContinuityConfig, Family, MeshResult,
    SplittingConfig,
};
use permopt::optimizer::{optimize, Mode, OptimizerConfig};
use permopt::permittivity::{smooth_random_field, SmoothRandomSpec};
use permopt::spectral_calculus::{fd_check, normalization_target, SpectralModel, SymmetricFunctionSpec};
use permopt::{AdmissibilityBounds, DofKind, DofSpace, Grid, Sym3, SymMatrixField};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::path::Path;

type Verdict = Result<(bool, String), String>;

fn grid(n: usize) -> Grid {
    Grid::from_spec(&pi_cube(n)).unwrap()
}

fn identity(n: usize) -> SymMatrixField {
    SymMatrixField::constant(&grid(n), Sym3::IDENTITY)
}

fn lower_max(values: &[f64]) -> f64 {
    values.iter().copied().fold(0.0, f64::max)
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

// 1: closed-form cavity values at 16³, second-order decay of λ₁, dense path
fn criterion_1(meshes: &[MeshResult]) -> Verdict {
    let m16 = meshes.iter().find(|m| m.cells == 16).ok_or("16³ mesh missing")?;
    let maxwell: Vec<_> = m16.pairs.iter().filter(|p| p.family == Family::Maxwell).take(20).collect();
    let worst = maxwell.iter().map(|p| p.relative_distance).fold(0.0, f64::max);
    let tags = maxwell.iter().all(|p| p.tag == Tag::Maxwell);
    let ratios: Vec<f64> = meshes.windows(2).map(|w| w[0].lambda1_error / w[1].lambda1_error).collect();
    let ratios_ok = ratios.len() == 2 && ratios.iter().all(|r| (3.0..=5.0).contains(r));

    let eps = identity(8);
    let space = DofSpace::new(eps.grid(), DofKind::VectorTangentialZero);
    let sys = AssembledSystem::assemble(&space, &eps, 10.0, Default::default()).map_err(err)?;
    let solve = |path| {
        let opts = SolverOptions { path, ..Default::default() };
        solve_penalized_with(&sys, 20, &opts).map(|s| s.values())
    };
    let dense = solve(SolverPath::Dense).map_err(err)?;
    let lanczos = solve(SolverPath::Lanczos).map_err(err)?;
    let cross = dense.iter().zip(&lanczos).map(|(a, b)| (a - b).abs() / a).fold(0.0, f64::max);
    let pass = maxwell.len() == 20 && worst <= 0.02 && tags && ratios_ok && cross <= 1e-8;
    Ok((
        pass,
        format!(
            "16³ first 20 Maxwell max rel err {worst:.3e} (≤ 2e-2), λ₁ error ratios {ratios:.3?} (in [3,5]), \
             dense vs Lanczos at 8³ {cross:.1e}"
        ),
    ))
}

// 2: splitting below 25 at τ=10
fn criterion_2(meshes: &[MeshResult]) -> Verdict {
    let fine = meshes.last().ok_or("no mesh")?;
    let grads = fine.pairs.iter().filter(|p| p.family == Family::Gradient).count();
    let mut pass = fine.tags_agree && fine.max_relative_distance <= 0.02 && fine.max_maxwell_div <= 1e-3;
    let grad_note = match fine.min_gradient_div {
        Some(d) => {
            pass &= d >= 0.1;
            format!("min gradient div {d:.3e}")
        }
        None => "no gradient value below 25 (first is 30)".to_string(),
    };
    // gradient modes do enter the window at τ=1.1; the weaker penalty leaves
    // Maxwell divergences above 1e-3 there, so only the gradient family is judged
    let cfg = SplittingConfig { meshes: vec![16], tau: 1.1, window: 9.5, ..Default::default() };
    let (_, low_tau) = splitting_meshes(&cfg).map_err(err)?;
    let m = &low_tau[0];
    let gmin = m.min_gradient_div.unwrap_or(0.0);
    let low: Vec<_> = m.pairs.iter().filter(|p| p.family == Family::Gradient).collect();
    let grad_tagged = !low.is_empty() && low.iter().all(|p| p.tag == Tag::Gradient);
    pass &= gmin >= 0.1 && grad_tagged;
    Ok((
        pass,
        format!(
            "{}³: {} pairs ({grads} gradient), max rel dist {:.3e}, tags agree {}, max Maxwell div {:.2e}, {grad_note}; \
             τ=1.1 at 16³: {} gradient modes, all tagged gradient {grad_tagged}, min gradient div {gmin:.3e}",
            fine.cells, fine.matched, fine.max_relative_distance, fine.tags_agree, fine.max_maxwell_div, low.len()
        ),
    ))
}

fn random_orthogonal(n: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let a = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
    let q = a.qr().q();
    (0..n).map(|i| (0..n).map(|j| q[(i, j)]).collect()).collect()
}

// 3: finite differences, rotation invariance, normalization identity
fn criterion_3() -> Verdict {
    let eps = identity(8);
    let model = SpectralModel::default();
    let spec = SymmetricFunctionSpec::new(vec![1, 2, 3], 1).map_err(err)?;
    let dirs = random_directions(
        eps.grid(),
        &SmoothRandomSpec { level: 0.0, amplitude: 0.2, modes: 3, max_frequency: 2 },
        5,
        11,
    );
    let steps = [1e-2, 5e-3, 2.5e-3, 1.25e-3];
    let mut worst_best = 0.0_f64;
    let mut quadratic = true;
    for d in &dirs {
        let r = fd_check(&model, &eps, &spec, d, &steps, None).map_err(err)?;
        worst_best = worst_best.max(r.best_relative_error);
        quadratic &= r.quadratic;
    }
    let (_, part) = model.partition(&eps, &spec).map_err(err)?;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let rotations: Vec<_> = part.sizes().iter().map(|&n| random_orthogonal(n, &mut rng)).collect();
    let rotated = part.rotated(&rotations).map_err(err)?;
    let rot_err = dirs
        .iter()
        .map(|d| {
            let a = part.differential(1, d);
            (a - rotated.differential(1, d)).abs() / a.abs().max(1e-300)
        })
        .fold(0.0, f64::max);
    let along = part.differential(1, &eps);
    let target = normalization_target(&part, 1);
    let norm_err = (along - target).abs() / target.abs();
    let pass = worst_best <= 1e-4 && quadratic && rot_err <= 1e-10 && norm_err <= 1e-8;
    Ok((
        pass,
        format!(
            "worst best FD rel err {worst_best:.2e} (≤ 1e-4), quadratic {quadratic}, rotation {rot_err:.1e} (≤ 1e-10), \
             normalization {norm_err:.1e}"
        ),
    ))
}

// 4: λ_j[tε] = λ_j[ε]/t with τ co-scaled as τ/t²
fn criterion_4() -> Verdict {
    let g = grid(8);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let eps = smooth_random_field(&g, &SmoothRandomSpec::default(), 0.6, 1.8, &mut rng);
    let base_model = SpectralModel::for_variable_permittivity();
    let base = base_model.evaluate(&eps, 10).map_err(err)?.maxwell_values();
    let mut worst = 0.0_f64;
    for t in [0.5, 2.0, 4.0] {
        let model = SpectralModel { tau: base_model.tau / (t * t), ..base_model.clone() };
        let scaled = model.evaluate(&eps.scale(t), 10).map_err(err)?.maxwell_values();
        for (a, b) in scaled.iter().zip(&base) {
            worst = worst.max((a * t - b).abs() / b);
        }
    }
    Ok((worst <= 1e-8, format!("max rel deviation of t·λ_j[tε] from λ_j[ε], j ≤ 10: {worst:.2e} (≤ 1e-8)")))
}

// 5: variational recovery of σ_{M+1}
fn criterion_5() -> Verdict {
    let eps = identity(8);
    let space = DofSpace::new(eps.grid(), DofKind::VectorTangentialZero);
    let sys = AssembledSystem::assemble(&space, &eps, 10.0, Default::default()).map_err(err)?;
    let reports = auchmuty_reports(&sys, &[0, 1, 2, 3], &Default::default(), &Default::default()).map_err(err)?;
    let f = lower_max(&reports.iter().map(|r| r.f_error).collect::<Vec<_>>());
    let n = lower_max(&reports.iter().map(|r| r.norm_error.abs()).collect::<Vec<_>>());
    let o = lower_max(&reports.iter().map(|r| r.orthogonality).collect::<Vec<_>>());
    Ok((f <= 1e-6 && n <= 1e-6 && o <= 1e-8, format!("M=0..3: f* err {f:.1e}, norm err {n:.1e}, orthogonality {o:.1e}")))
}

// 6: optimizers end on the box, never at an interior KKT point
fn criterion_6() -> Verdict {
    let g = grid(8);
    let bounds = AdmissibilityBounds { alpha: 0.5, beta: 2.0, gamma: 5.0 };
    let lam1 = SymmetricFunctionSpec::new(vec![1], 1).map_err(err)?;
    let lam123 = SymmetricFunctionSpec::new(vec![1, 2, 3], 1).map_err(err)?;
    let runs = [
        (Mode::Maximize, &lam1),
        (Mode::Maximize, &lam123),
        (Mode::Maximize, &lam1),
        (Mode::Maximize, &lam123),
        (Mode::Maximize, &lam1),
        (Mode::Minimize, &lam1),
        (Mode::Minimize, &lam123),
        (Mode::Minimize, &lam1),
        (Mode::Minimize, &lam123),
        (Mode::Minimize, &lam123),
    ];
    let start_spec = SmoothRandomSpec { level: 1.2, amplitude: 0.3, modes: 3, max_frequency: 2 };
    let mut lines = Vec::new();
    let mut pass = true;
    for (i, (mode, spec)) in runs.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + i as u64);
        let eps0 = smooth_random_field(&g, &start_spec, 0.6, 1.8, &mut rng);
        let cfg = OptimizerConfig::new(*mode, (*spec).clone(), bounds);
        let traj = optimize(&eps0, &cfg).map_err(err)?;
        let last = traj.last();
        let interior = last.active_fraction == 0.0 && last.kkt_residual < INTERIOR_KKT_TOL;
        pass &= last.active_fraction > 0.0 && !interior;
        lines.push(format!("{:.2}", last.active_fraction));
    }
    Ok((pass, format!("10 runs at 8³, final active fractions [{}]", lines.join(", "))))
}

// 7: oscillatory sequence
fn criterion_7() -> Verdict {
    let out = continuity_experiment(&ContinuityConfig::default(), 1, Path::new(".")).map_err(err)?;
    let s = &out.summary;
    let flag = |k: &str| s[k].as_bool().unwrap_or(false);
    let pass = flag("decreasing") && flag("within_tolerance") && !flag("gradients_converge");
    Ok((
        pass,
        format!(
            "decreasing {}, deviation at k=16 {:.2e} (≤ 1e-2), gradient sup at k=16 {:.3} vs limit {:.3}",
            flag("decreasing"),
            s["final_deviation"].as_f64().unwrap_or(f64::NAN),
            s["gradient_sup_last"].as_f64().unwrap_or(f64::NAN),
            s["base_gradient_sup"].as_f64().unwrap_or(f64::NAN)
        ),
    ))
}

// 8: uniform bound over random admissible fields
fn criterion_8() -> Verdict {
    let out = bound_experiment(&BoundConfig::default(), 1).map_err(err)?;
    let s = &out.summary;
    let pass = s["finite"].as_bool() == Some(true) && s["stable"].as_bool() == Some(true);
    Ok((
        pass,
        format!(
            "C(10) {:.4}, C(20) {:.4}, change {:.2e} (< 0.1)",
            s["c_half"].as_f64().unwrap_or(f64::NAN),
            s["c_all"].as_f64().unwrap_or(f64::NAN),
            s["relative_change"].as_f64().unwrap_or(f64::NAN)
        ),
    ))
}

// 9: byte-identical CLI outputs
fn criterion_9() -> Verdict {
    let dir = tempfile::tempdir().map_err(err)?;
    let cfg = dir.path().join("opt.json");
    std::fs::write(
        &cfg,
        r#"{"eps": {"kind": "smooth_random", "alpha": 0.6, "beta": 1.8},
            "optimizer": {"mode": "maximize", "spec": {"F": [1], "s": 1},
                          "bounds": {"alpha": 0.5, "beta": 2.0, "gamma": 5.0}, "max_iters": 3}}"#,
    )
    .map_err(err)?;
    let mut checked = 0;
    for (cmd, config, files) in [
        ("solve", None, vec!["spectrum.csv"]),
        ("classify", None, vec!["tagged.csv"]),
        ("optimize", Some(&cfg), vec!["trajectory.csv", "final_eps.json"]),
    ] {
        let mut outputs = Vec::new();
        for run in 0..2 {
            let out = dir.path().join(format!("{cmd}{run}"));
            let mut args = vec!["permopt".to_string(), cmd.to_string(), "--seed".into(), "7".into()];
            args.extend(["--out".to_string(), out.display().to_string()]);
            if let Some(c) = config {
                args.extend(["--config".to_string(), c.display().to_string()]);
            }
            let code = main_with_args(args);
            if code != 0 && code != 3 {
                return Err(format!("{cmd} exited with {code}"));
            }
            outputs.push(files.iter().map(|f| std::fs::read(out.join(f)).map_err(err)).collect::<Result<Vec<_>, _>>()?);
        }
        if outputs[0] != outputs[1] {
            return Ok((false, format!("{cmd} outputs differ between runs")));
        }
        checked += files.len();
    }
    Ok((true, format!("{checked} files identical across repeated runs")))
}

// runs without the libtest harness so the verdict lines are never captured
fn main() {
    let meshes = splitting_meshes(&SplittingConfig::default()).map(|(_, m)| m).map_err(err);
    let criteria: Vec<(&str, Box<dyn Fn() -> Verdict + '_>)> = vec![
        ("1 analytic cavity spectrum", Box::new(|| criterion_1(meshes.as_ref().map_err(Clone::clone)?))),
        ("2 penalized spectrum splitting", Box::new(|| criterion_2(meshes.as_ref().map_err(Clone::clone)?))),
        ("3 differential formula", Box::new(criterion_3)),
        ("4 scaling law", Box::new(criterion_4)),
        ("5 variational principle", Box::new(criterion_5)),
        ("6 optimizers reach the box", Box::new(criterion_6)),
        ("7 oscillatory continuity", Box::new(criterion_7)),
        ("8 uniform bound", Box::new(criterion_8)),
        ("9 determinism", Box::new(criterion_9)),
    ];
    let mut failed = Vec::new();
    for (name, run) in &criteria {
        match run() {
            Ok((true, detail)) => println!("PASS criterion {name}: {detail}"),
            Ok((false, detail)) => {
                println!("FAIL criterion {name}: {detail}");
                failed.push(*name);
            }
            Err(e) => {
                println!("FAIL criterion {name}: error {e}");
                failed.push(*name);
            }
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
