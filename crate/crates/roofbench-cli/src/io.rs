//! File input and deterministic output helpers.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use roofbench::quantum::{DensityMatrix, Ensemble};

use crate::CliError;

/// On-disk density operator: row-major [re, im] pairs.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DensityFile {
    pub dim: usize,
    pub entries: Vec<[f64; 2]>,
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.display().to_string(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| CliError::Json {
        path: path.display().to_string(),
        source,
    })
}

/// Reads a density matrix from JSON ({dim, entries}) or CSV (one matrix row
/// per line, cells alternating re, im).
pub fn read_density(path: &Path) -> Result<DensityMatrix, CliError> {
    let is_csv = path.extension().map(|e| e == "csv").unwrap_or(false);
    let (dim, entries) = if is_csv {
        let text = fs::read_to_string(path).map_err(|source| CliError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut entries = Vec::new();
        let mut dim = 0;
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let cells: Vec<f64> = line
                .split(',')
                .map(|c| c.trim().parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|e| {
                    CliError::Config(format!("bad number in {}: {e}", path.display()))
                })?;
            if cells.len() % 2 != 0 {
                return Err(CliError::Config(format!(
                    "{}: rows need an even cell count (re, im pairs)",
                    path.display()
                )));
            }
            dim += 1;
            for pair in cells.chunks(2) {
                entries.push([pair[0], pair[1]]);
            }
        }
        (dim, entries)
    } else {
        let file: DensityFile = read_json(path)?;
        (file.dim, file.entries)
    };
    if entries.len() != dim * dim {
        return Err(CliError::Config(format!(
            "{}: {} entries do not fill a {dim} x {dim} matrix",
            path.display(),
            entries.len()
        )));
    }
    let m = DMatrix::from_fn(dim, dim, |i, j| {
        let [re, im] = entries[i * dim + j];
        Complex64::new(re, im)
    });
    Ok(DensityMatrix::new(m)?)
}

/// Serializes with stable field order and a trailing newline, so identical
/// inputs give byte-identical files.
pub fn to_json_text<T: Serialize>(value: &T) -> Result<String, CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|source| CliError::Json {
        path: "<output>".to_string(),
        source,
    })?;
    text.push('\n');
    Ok(text)
}

pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|source| CliError::Io {
                path: parent.display().to_string(),
                source,
            })?;
        }
    }
    fs::write(path, text).map_err(|source| CliError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Writes to the path when given, otherwise prints to stdout.
pub fn write_or_print(path: Option<&Path>, text: &str) -> Result<(), CliError> {
    match path {
        Some(path) => write_text(path, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

/// Moves a configured output file into the override directory, keeping its
/// file name.
pub fn reroot(configured: &str, out_dir: Option<&Path>) -> PathBuf {
    let path = PathBuf::from(configured);
    match (out_dir, path.file_name()) {
        (Some(dir), Some(name)) => dir.join(name),
        _ => path,
    }
}

/// JSON image of an ensemble: weights plus amplitude pair lists.
#[derive(Debug, Serialize)]
pub struct EnsembleOutput {
    pub weights: Vec<f64>,
    pub states: Vec<Vec<[f64; 2]>>,
}

impl EnsembleOutput {
    pub fn from_ensemble(ensemble: &Ensemble) -> Self {
        let states = ensemble
            .states
            .iter()
            .map(|psi| amplitude_pairs(psi))
            .collect();
        Self { weights: ensemble.weights.clone(), states }
    }
}

pub fn amplitude_pairs(state: &DVector<Complex64>) -> Vec<[f64; 2]> {
    state.iter().map(|z| [z.re, z.im]).collect()
}
