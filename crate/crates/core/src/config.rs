//! JSON run configurations shared by the CLI and the experiment drivers.

use crate::error::{Error, Result};
use crate::grid::{Grid, GridSpec};
use crate::permittivity::{smooth_random_field, SmoothRandomSpec, SymMatrixField};
use crate::sym3::Sym3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};

/// Where a permittivity comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FieldSource {
    /// `value · I`.
    Scalar { value: f64 },
    /// One symmetric matrix everywhere, upper-triangle order
    /// `(11, 12, 13, 22, 23, 33)`.
    Constant { upper6: [f64; 6] },
    /// A field file; relative paths resolve against the config file.
    File { path: PathBuf },
    /// Smooth random field clamped into `[alpha, beta]`.
    SmoothRandom {
        #[serde(default)]
        spec: SmoothRandomSpec,
        alpha: f64,
        beta: f64,
        /// Falls back to the run seed.
        #[serde(default)]
        seed: Option<u64>,
    },
}

impl Default for FieldSource {
    fn default() -> Self {
        FieldSource::Scalar { value: 1.0 }
    }
}

impl FieldSource {
    pub fn build(&self, grid: &Grid, run_seed: u64, base_dir: &Path) -> Result<SymMatrixField> {
        match self {
            FieldSource::Scalar { value } => Ok(SymMatrixField::constant(grid, Sym3::scaled_identity(*value))),
            FieldSource::Constant { upper6 } => Ok(SymMatrixField::constant(grid, Sym3(*upper6))),
            FieldSource::File { path } => {
                let path = if path.is_relative() { base_dir.join(path) } else { path.clone() };
                let text = std::fs::read_to_string(&path)
                    .map_err(|e| Error::Config(format!("cannot read field file {}: {e}", path.display())))?;
                let field = SymMatrixField::from_json(&text)?;
                if field.grid() != grid {
                    return Err(Error::Config(format!("field file {} lives on a different grid", path.display())));
                }
                Ok(field)
            }
            FieldSource::SmoothRandom { spec, alpha, beta, seed } => {
                if !(*alpha > 0.0 && alpha < beta) {
                    return Err(Error::Config(format!("smooth random field needs 0 < alpha < beta, got {alpha}, {beta}")));
                }
                let mut rng = ChaCha8Rng::seed_from_u64(seed.unwrap_or(run_seed));
                Ok(smooth_random_field(grid, spec, *alpha, *beta, &mut rng))
            }
        }
    }
}

/// Cube `(0, π)³` with `n` cells per axis.
pub fn pi_cube(n: usize) -> GridSpec {
    GridSpec { origin: [0.0; 3], lengths: [std::f64::consts::PI; 3], cells: [n; 3] }
}

/// First 16 hex digits of the SHA-256 of the canonical JSON of `value`.
pub fn fingerprint<T: Serialize>(value: &T) -> Result<String> {
    let text = serde_json::to_string(value)?;
    let digest = Sha256::digest(text.as_bytes());
    Ok(digest.iter().take(8).map(|b| format!("{b:02x}")).collect())
}

/// Parse a config, reporting the line and column of syntax errors.
pub fn parse<T: for<'de> Deserialize<'de>>(text: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| Error::Config(format!("line {}, column {}: {e}", e.line(), e.column())))
}
