//! Command-line options and the optional config file (TOML or bare `key = value`).

use std::path::{Path, PathBuf};

use clap::Args;
use serde::Deserialize;
use sha2::{Digest, Sha256};

use crate::Failure;

/// Options shared by all subcommands. Each may also come from the config file;
/// flags take precedence.
#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct Opts {
    /// Tetrahedral mesh file (MEDIT .mesh, or TetGen .node/.ele).
    #[arg(long, global = true)]
    pub mesh: Option<PathBuf>,
    /// Mesh format: medit or tetgen (default: from the extension).
    #[arg(long, global = true)]
    pub format: Option<String>,
    /// Use the unit cube with N cells per side instead of a mesh file.
    #[arg(long, global = true, value_name = "N")]
    pub cube: Option<usize>,
    /// Use the unit cube with a cylindrical through-hole (3N cells per side).
    #[arg(long, global = true, value_name = "N")]
    pub holed_cube: Option<usize>,
    /// Frame representation: octa or odeco.
    #[arg(long, global = true)]
    pub rep: Option<String>,
    /// Solver: rtr, mbo, mmbo or mbo-then-rtr.
    #[arg(long, global = true)]
    pub solver: Option<String>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Base diffusion time (default: inverse of the smallest nonzero stiffness eigenvalue).
    #[arg(long, global = true)]
    pub tau0: Option<f64>,
    /// Diffusion schedule: constant or powerlaw.
    #[arg(long, global = true)]
    pub schedule: Option<String>,
    /// MBO relative stopping tolerance.
    #[arg(long, global = true)]
    pub delta: Option<f64>,
    /// Trust-region gradient tolerance (default 1e-6·√n).
    #[arg(long, global = true)]
    pub grad_tol: Option<f64>,
    /// Dihedral angle (degrees) above which a boundary vertex is a crease.
    #[arg(long, global = true)]
    pub crease_deg: Option<f64>,
    /// Quadric data file replacing the built-in one.
    #[arg(long, global = true)]
    pub quadrics: Option<PathBuf>,
    /// Output path (a prefix for `solve`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Trace CSV path.
    #[arg(long, global = true)]
    pub trace: Option<PathBuf>,
    /// Worker threads (default: available parallelism); never changes results.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Number of trials for `exactness-test`.
    #[arg(long, global = true)]
    pub trials: Option<usize>,
    /// Query distribution for `exactness-test`: octa, odeco or odeco-positive.
    #[arg(long, global = true)]
    pub variety: Option<String>,
    /// Sample count for `derive-quadrics`.
    #[arg(long, global = true)]
    pub samples: Option<usize>,
    /// Outer iteration cap for the solvers.
    #[arg(long, global = true)]
    pub max_outer: Option<usize>,
    /// Align boundary frames with the surface normal (default true).
    #[arg(long, global = true)]
    pub align: Option<bool>,
    /// Field checkpoint for `export-vtk`.
    #[arg(long, global = true)]
    pub field: Option<PathBuf>,
    /// Comma-separated query vector for `project`.
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub point: Option<String>,
    /// Geodesic start: `q0`, nine comma-separated coefficients, or `rot:x,y,z`.
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub start: Option<String>,
    /// Geodesic velocity in generator coefficients, `x,y,z`.
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub velocity: Option<String>,
    /// Number of geodesic segments.
    #[arg(long, global = true)]
    pub steps: Option<usize>,
}

macro_rules! fill_missing {
    ($dst:expr, $src:expr; $($f:ident),* $(,)?) => {
        $( if $dst.$f.is_none() { $dst.$f = $src.$f; } )*
    };
}

impl Opts {
    /// Fills unset options from `file`.
    pub fn merge(mut self, file: Opts) -> Opts {
        fill_missing!(self, file; mesh, format, cube, holed_cube, rep, solver, seed, tau0, schedule, delta,
            grad_tol, crease_deg, quadrics, out, trace, workers, trials, variety, samples, max_outer, align,
            field, point, start, velocity, steps);
        self
    }

    /// Hash of the options that influence results (outputs and worker count excluded).
    pub fn config_hash(&self, command: &str) -> String {
        let canonical = format!(
            "{command}|{:?}|{:?}|{:?}|{:?}|{:?}|{:?}|{:?}|{:?}|{:?}|{:?}|{:?}|{:?}|{:?}|{:?}|{:?}|{:?}|{:?}|{:?}|{:?}|{:?}|{:?}|{:?}",
            self.mesh, self.format, self.cube, self.holed_cube, self.rep, self.solver, self.seed, self.tau0,
            self.schedule, self.delta, self.grad_tol, self.crease_deg, self.quadrics, self.trials, self.variety,
            self.samples, self.max_outer, self.align, self.point, self.start, self.velocity, self.steps
        );
        let digest = Sha256::digest(canonical.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Parses a config file: TOML, or one `key = value` per line with `#` comments.
pub fn load_config(path: &Path) -> Result<Opts, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::input(format!("cannot read config file {}: {e}", path.display())))?;
    let table = match text.parse::<toml::Table>() {
        Ok(t) => t,
        Err(_) => bare_key_values(&text).map_err(|m| Failure::input(format!("{}: {m}", path.display())))?,
    };
    let table: toml::Table = table.into_iter().map(|(k, v)| (k.replace('_', "-"), v)).collect();
    Opts::deserialize(toml::Value::Table(table))
        .map_err(|e| Failure::input(format!("invalid config file {}: {e}", path.display())))
}

fn bare_key_values(text: &str) -> Result<toml::Table, String> {
    let mut t = toml::Table::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| format!("line {}: expected key = value", n + 1))?;
        let v = v.trim().trim_matches('"');
        let value = if let Ok(i) = v.parse::<i64>() {
            toml::Value::Integer(i)
        } else if let Ok(f) = v.parse::<f64>() {
            toml::Value::Float(f)
        } else if let Ok(b) = v.parse::<bool>() {
            toml::Value::Boolean(b)
        } else {
            toml::Value::String(v.to_string())
        };
        t.insert(k.trim().to_string(), value);
    }
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bare_format_and_precedence() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.cfg");
        std::fs::write(&p, "# comment\nrep = odeco\nseed = 4\ngrad_tol = 1e-7\n").unwrap();
        let file = load_config(&p).unwrap();
        assert_eq!(file.rep.as_deref(), Some("odeco"));
        assert_eq!(file.grad_tol, Some(1e-7));
        let flags = Opts { seed: Some(9), ..Opts::default() };
        let merged = flags.merge(file);
        assert_eq!(merged.seed, Some(9));
        assert_eq!(merged.rep.as_deref(), Some("odeco"));
    }

    #[test]
    fn toml_format_and_unknown_keys() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.toml");
        std::fs::write(&p, "rep = \"octa\"\ncube = 3\ntau0 = 1\n").unwrap();
        let o = load_config(&p).unwrap();
        assert_eq!(o.cube, Some(3));
        assert_eq!(o.tau0, Some(1.0));
        std::fs::write(&p, "bogus = 1\n").unwrap();
        assert!(load_config(&p).is_err());
    }

    #[test]
    fn hash_ignores_outputs_and_workers() {
        let a = Opts { seed: Some(1), ..Opts::default() };
        let b = Opts { workers: Some(4), out: Some("x".into()), ..a.clone() };
        assert_eq!(a.config_hash("solve"), b.config_hash("solve"));
        let c = Opts { seed: Some(2), ..a.clone() };
        assert_ne!(a.config_hash("solve"), c.config_hash("solve"));
    }
}
