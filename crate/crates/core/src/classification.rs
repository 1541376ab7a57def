//! Splitting of the penalized spectrum into Maxwell eigenvalues and gradient
//! eigenvalues `τρ`, where `ρ` runs over the Dirichlet spectrum of
//! `-div(ε∇·)`.

use crate::assembly::{assemble_scalar, AssembledSystem};
use crate::eigensolver::{solve_scalar, EigenPair, SolverOptions, Spectrum};
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::permittivity::SymMatrixField;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::io::Write;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum Tag {
    Maxwell,
    Gradient,
    Ambiguous,
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Tag::Maxwell => "maxwell",
            Tag::Gradient => "gradient",
            Tag::Ambiguous => "ambiguous",
        })
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifyOptions {
    pub div_tol: f64,
    pub match_tol: f64,
    /// When set, the divergence test becomes `τ uᵀDu / σ ≤ tol`: the share of
    /// the penalized energy carried by the penalty term. This share is near 0
    /// for Maxwell modes and near 1 for gradient modes on any mesh, whereas
    /// the absolute residual of Maxwell modes grows with the roughness of ε.
    pub penalty_share_tol: Option<f64>,
}

impl Default for ClassifyOptions {
    fn default() -> Self {
        Self { div_tol: 1e-3, match_tol: 1e-2, penalty_share_tol: None }
    }
}

/// Closest `τρᵢ` to an eigenvalue.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MatchInfo {
    pub rho_index: usize,
    pub rho: f64,
    /// `|σ − τρ| / (1 + τρ)`.
    pub distance: f64,
    pub within_tol: bool,
    /// The value also passes the divergence test: a Maxwell value sits on
    /// top of a gradient value.
    pub collision: bool,
}

#[derive(Clone, Debug)]
pub struct TaggedPair {
    pub pair: EigenPair,
    pub tag: Tag,
    pub div_residual: f64,
    pub matched: Option<MatchInfo>,
}

#[derive(Clone, Debug)]
pub struct TaggedSpectrum {
    pub pairs: Vec<TaggedPair>,
    pub tau: f64,
    pub eps_fingerprint: String,
}

/// Lowest `count` eigenpairs of `-div(ε∇f) = ρ f`, `f = 0` on the boundary.
pub fn solve_dirichlet(grid: &Grid, eps: &SymMatrixField, count: usize, opts: &SolverOptions) -> Result<Vec<EigenPair>> {
    let sys = assemble_scalar(grid, eps)?;
    let mut opts = opts.clone();
    if opts.seed.is_none() {
        opts.seed = Some(eps.fingerprint_seed());
    }
    let count = count.min(sys.space.num_free());
    solve_scalar(&sys, count, &opts)
}

/// `√(uᵀDu) / √(uᵀMu)`, the relative discrete L² norm of `div(εu)`.
pub fn div_residual(u: &[f64], system: &AssembledSystem) -> Result<f64> {
    let n = system.space.num_free();
    if u.len() != n {
        return Err(Error::Dimension { expected: n, got: u.len() });
    }
    let mass = system.m.bilinear(u, u);
    if !(mass > 0.0) {
        return Err(Error::Classification("divergence residual of a zero vector".into()));
    }
    Ok((system.d.bilinear(u, u).max(0.0) / mass).sqrt())
}

/// Tag every pair. The divergence test (or the penalty-share test when
/// configured) decides; the `τρ` match corroborates
/// and is recorded. A value that fails the divergence test and matches no
/// `τρ` is ambiguous. With an empty Dirichlet list the divergence test alone
/// decides.
pub fn classify(
    spectrum: &Spectrum,
    system: &AssembledSystem,
    dirichlet: &[f64],
    opts: &ClassifyOptions,
) -> Result<TaggedSpectrum> {
    let tau = spectrum.tau;
    let pairs = spectrum
        .pairs
        .iter()
        .map(|p| {
            let div = div_residual(&p.vector, system)?;
            let divergence_free = match opts.penalty_share_tol {
                Some(tol) => penalty_share(tau, div, p.value) <= tol,
                None => div <= opts.div_tol,
            };
            let matched = nearest_match(p.value, dirichlet, tau, opts.match_tol, divergence_free);
            let tag = match (divergence_free, matched.map(|m| m.within_tol)) {
                (true, _) => Tag::Maxwell,
                (false, Some(true)) => Tag::Gradient,
                (false, None) => Tag::Gradient,
                (false, Some(false)) => Tag::Ambiguous,
            };
            Ok(TaggedPair { pair: p.clone(), tag, div_residual: div, matched })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TaggedSpectrum { pairs, tau, eps_fingerprint: spectrum.eps_fingerprint.clone() })
}

/// `τ uᵀDu / σ` for an M-normalized eigenvector with residual `div`.
pub fn penalty_share(tau: f64, div: f64, sigma: f64) -> f64 {
    if sigma > 0.0 {
        tau * div * div / sigma
    } else {
        0.0
    }
}

fn nearest_match(sigma: f64, dirichlet: &[f64], tau: f64, match_tol: f64, divergence_free: bool) -> Option<MatchInfo> {
    dirichlet
        .iter()
        .enumerate()
        .map(|(i, &rho)| {
            let target = tau * rho;
            let distance = (sigma - target).abs() / (1.0 + target);
            let within_tol = distance <= match_tol;
            MatchInfo { rho_index: i, rho, distance, within_tol, collision: within_tol && divergence_free }
        })
        .min_by(|a, b| a.distance.total_cmp(&b.distance))
}

/// `τ = 2 Λ_max / ρ₁`, so that `τρ₁ = 2 Λ_max` keeps every gradient value out
/// of `(0, Λ_max]`.
pub fn select_tau(lambda_max: f64, rho1: f64) -> Result<f64> {
    if !(rho1 > 0.0) {
        return Err(Error::Classification(format!("lowest Dirichlet eigenvalue must be positive, got {rho1}")));
    }
    if !(lambda_max > 0.0) {
        return Err(Error::Classification(format!("window bound must be positive, got {lambda_max}")));
    }
    Ok(2.0 * lambda_max / rho1)
}

impl TaggedSpectrum {
    pub fn maxwell(&self) -> impl Iterator<Item = &TaggedPair> {
        self.pairs.iter().filter(|p| p.tag == Tag::Maxwell)
    }

    pub fn maxwell_values(&self) -> Vec<f64> {
        self.maxwell().map(|p| p.pair.value).collect()
    }

    pub fn count(&self, tag: Tag) -> usize {
        self.pairs.iter().filter(|p| p.tag == tag).count()
    }

    /// CSV with columns `index,sigma,tag,div_residual,matched_rho,residual`;
    /// `matched_rho` is empty when no `τρ` lies within tolerance.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "index,sigma,tag,div_residual,matched_rho,residual")?;
        for (i, p) in self.pairs.iter().enumerate() {
            let rho = match p.matched {
                Some(m) if m.within_tol => format!("{:.15e}", m.rho),
                _ => String::new(),
            };
            writeln!(
                w,
                "{},{:.15e},{},{:.6e},{},{:.3e}",
                i + 1,
                p.pair.value,
                p.tag,
                p.div_residual,
                rho,
                p.pair.residual
            )?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tau_formula() {
        assert!((select_tau(10.0, 3.0).unwrap() - 20.0 / 3.0).abs() < 1e-15);
        let tau = select_tau(2.0, 3.0).unwrap();
        assert!((tau - 4.0 / 3.0).abs() < 1e-15);
        assert!(tau * 3.0 > 2.0);
        assert!(select_tau(2.0, 0.0).is_err());
    }

    #[test]
    fn matching_picks_nearest() {
        let m = nearest_match(30.1, &[3.0, 6.0], 10.0, 1e-2, false).unwrap();
        assert_eq!(m.rho_index, 0);
        assert!(m.within_tol);
        assert!(nearest_match(1.0, &[], 10.0, 1e-2, false).is_none());
    }
}
