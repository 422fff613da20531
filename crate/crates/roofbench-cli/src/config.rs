//! Problem configuration schema and construction.

use std::fs;
use std::path::Path;

use nalgebra::DVector;
use serde::Deserialize;

use roofbench::poly::Polynomial;
use roofbench::roof::{OracleOptions, RoofProblem, RoofSense};
use roofbench::tangency::CertificateOptions;
use roofbench::variety::Variety;

use crate::CliError;

/// What the configured problem is for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    Roof,
    Certify,
    Quantum,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VarietySpec {
    pub ambient_dim: usize,
    pub generators: Vec<String>,
    #[serde(default)]
    pub expected_dim: Option<usize>,
}

/// Solver knobs; the seed is mandatory so no run is unseeded.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSpec {
    pub seed: u64,
    #[serde(default)]
    pub restarts: Option<usize>,
    #[serde(default)]
    pub m_max: Option<usize>,
    #[serde(default)]
    pub tol: Option<f64>,
    #[serde(default)]
    pub max_outer: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    /// Per-axis [low, high] bounds.
    pub bounds: Vec<[f64; 2]>,
    /// Points per axis.
    pub resolution: usize,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
pub enum TargetSpec {
    Points { points: Vec<Vec<f64>> },
    Grid { grid: GridSpec },
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    #[serde(default)]
    pub csv: Option<String>,
    #[serde(default)]
    pub json: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub kind: Kind,
    pub variety: VarietySpec,
    pub objective: String,
    pub sense: RoofSense,
    #[serde(default)]
    pub targets: Option<TargetSpec>,
    pub solver: SolverSpec,
    #[serde(default)]
    pub output: OutputSpec,
    /// Also emit tangency certificates for the targets during `run`.
    #[serde(default)]
    pub certify: bool,
    /// Sample count for `graph`.
    #[serde(default = "default_samples")]
    pub samples: usize,
}

fn default_samples() -> usize {
    360
}

impl ProblemConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|source| CliError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let cfg: ProblemConfig =
            serde_json::from_str(&text).map_err(|source| CliError::Json {
                path: path.display().to_string(),
                source,
            })?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), CliError> {
        if self.variety.generators.is_empty() {
            return Err(CliError::Config("variety needs at least one generator".into()));
        }
        if let Some(TargetSpec::Grid { grid }) = &self.targets {
            if grid.resolution < 1 {
                return Err(CliError::Config("grid resolution must be at least 1".into()));
            }
            if grid.bounds.len() != self.variety.ambient_dim {
                return Err(CliError::Config(format!(
                    "grid bounds cover {} axes but the ambient dimension is {}",
                    grid.bounds.len(),
                    self.variety.ambient_dim
                )));
            }
        }
        if self.samples == 0 {
            return Err(CliError::Config("sample count must be at least 1".into()));
        }
        Ok(())
    }

    pub fn problem(&self) -> Result<RoofProblem, CliError> {
        let n = self.variety.ambient_dim;
        let mut generators = Vec::with_capacity(self.variety.generators.len());
        for text in &self.variety.generators {
            generators.push(Polynomial::parse(text, n)?);
        }
        let variety = Variety::new(n, generators, self.variety.expected_dim)?;
        let objective = Polynomial::parse(&self.objective, n)?;
        Ok(RoofProblem::new(variety, objective, self.sense)?)
    }

    /// All configured targets, expanding a grid spec in row-major order.
    pub fn targets(&self) -> Result<Vec<DVector<f64>>, CliError> {
        let n = self.variety.ambient_dim;
        match &self.targets {
            None => Err(CliError::Config("config declares no targets".into())),
            Some(TargetSpec::Points { points }) => {
                let mut out = Vec::with_capacity(points.len());
                for (i, p) in points.iter().enumerate() {
                    if p.len() != n {
                        return Err(CliError::Config(format!(
                            "target {i} has {} coordinates, expected {n}",
                            p.len()
                        )));
                    }
                    out.push(DVector::from_column_slice(p));
                }
                Ok(out)
            }
            Some(TargetSpec::Grid { grid }) => {
                let r = grid.resolution;
                let mut out = Vec::with_capacity(r.pow(n as u32));
                let mut index = vec![0usize; n];
                loop {
                    let point = DVector::from_fn(n, |axis, _| {
                        let [lo, hi] = grid.bounds[axis];
                        if r == 1 {
                            0.5 * (lo + hi)
                        } else {
                            lo + (hi - lo) * index[axis] as f64 / (r - 1) as f64
                        }
                    });
                    out.push(point);
                    // Row-major order: the last axis advances fastest.
                    let mut axis = n;
                    loop {
                        if axis == 0 {
                            return Ok(out);
                        }
                        axis -= 1;
                        index[axis] += 1;
                        if index[axis] < r {
                            break;
                        }
                        index[axis] = 0;
                    }
                }
            }
        }
    }

    pub fn oracle_options(&self) -> OracleOptions {
        let defaults = OracleOptions::default();
        OracleOptions {
            m_max: self.solver.m_max,
            restarts: self.solver.restarts.unwrap_or(defaults.restarts),
            seed: self.solver.seed,
            tol: self.solver.tol.unwrap_or(defaults.tol),
            warm_starts: Vec::new(),
            max_outer: self.solver.max_outer.unwrap_or(defaults.max_outer),
        }
    }

    pub fn certificate_options(&self) -> CertificateOptions {
        let defaults = CertificateOptions::default();
        CertificateOptions {
            m_max: self.solver.m_max,
            restarts: self.solver.restarts.unwrap_or(defaults.restarts),
            seed: self.solver.seed,
            tol: self.solver.tol.unwrap_or(defaults.tol),
            ..defaults
        }
    }
}
