//! Batch front end: roof grids, tangency certificates, and state geometry.

mod config;
mod io;

use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use thiserror::Error;

use roofbench::poly::PolyError;
use roofbench::quantum::{
    entanglement_of_formation, gellmann, measure_f_a, purity_conditions, CoefficientVector,
    Convention, EofOptions, EofStrategy, QuantumError, Subsystem,
};
use roofbench::roof::{fmt_float, grid_to_csv, GridEntry, RoofError};
use roofbench::tangency::{
    certify_target, verify_certificate, TangencyCertificate, TangencyError,
};
use roofbench::variety::{VarietyError, DEFAULT_RANK_TOL};

use config::{Kind, ProblemConfig};

/// Residual level at which emitted certificates are re-checked.
const VERIFY_TOL: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Poly(#[from] PolyError),
    #[error(transparent)]
    Variety(#[from] VarietyError),
    #[error(transparent)]
    Roof(#[from] RoofError),
    #[error(transparent)]
    Tangency(#[from] TangencyError),
    #[error(transparent)]
    Quantum(#[from] QuantumError),
    #[error("cannot access {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("invalid JSON in {path}: {source}")]
    Json { path: String, source: serde_json::Error },
}

#[derive(Parser)]
#[command(
    name = "roofbench",
    version,
    about = "Roof values, tangency certificates, and entanglement measures \
             over polynomial varieties"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Override the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override the configured restart count.
    #[arg(long, global = true)]
    restarts: Option<usize>,
    /// Override the configured solver tolerance.
    #[arg(long, global = true)]
    tol: Option<f64>,
    /// Redirect output files into this directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate roof values over the configured targets.
    Run { config: PathBuf },
    /// Solve tangency certificates for the configured targets, or check a
    /// saved certificate against the configured problem.
    Certify { config: PathBuf, certificate: Option<PathBuf> },
    /// Sample the graph of the objective over a curve or surface variety.
    Graph { config: PathBuf },
    /// Operator-basis embeddings and entanglement measures.
    Quantum {
        #[command(subcommand)]
        command: QuantumCommand,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ConventionArg {
    Scaled,
    Plain,
}

impl From<ConventionArg> for Convention {
    fn from(arg: ConventionArg) -> Self {
        match arg {
            ConventionArg::Scaled => Convention::Scaled,
            ConventionArg::Plain => Convention::Plain,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum StrategyArg {
    UnitarySearch,
    PoincareRoof,
}

impl StrategyArg {
    fn name(self) -> &'static str {
        match self {
            StrategyArg::UnitarySearch => "unitary_search",
            StrategyArg::PoincareRoof => "poincare_roof",
        }
    }
}

impl From<StrategyArg> for EofStrategy {
    fn from(arg: StrategyArg) -> Self {
        match arg {
            StrategyArg::UnitarySearch => EofStrategy::UnitarySearch,
            StrategyArg::PoincareRoof => EofStrategy::PoincareRoof,
        }
    }
}

#[derive(Subcommand)]
enum QuantumCommand {
    /// Embed a density matrix as a real coefficient vector.
    Embed {
        state: PathBuf,
        #[arg(long, default_value = "gellmann")]
        basis: String,
        #[arg(long, value_enum, default_value_t = ConventionArg::Scaled)]
        convention: ConventionArg,
    },
    /// Check the pure-state coefficient conditions of a density matrix.
    Purity {
        state: PathBuf,
        #[arg(long, default_value = "gellmann")]
        basis: String,
    },
    /// Trace measure f_a, reducing over the second factor when --dim is set.
    Measure {
        state: PathBuf,
        /// Bipartite split as MxN, e.g. 2x2.
        #[arg(long)]
        dim: Option<String>,
        #[arg(long, default_value_t = 2)]
        order: u32,
    },
    /// Entanglement of formation of a bipartite density matrix.
    Eof {
        state: PathBuf,
        /// Bipartite split as MxN, e.g. 2x2.
        #[arg(long)]
        dim: String,
        #[arg(long, value_enum, default_value_t = StrategyArg::UnitarySearch)]
        strategy: StrategyArg,
        #[arg(long, default_value_t = 2)]
        order: u32,
        /// Largest ensemble size tried by the unitary search.
        #[arg(long)]
        s_max: Option<usize>,
    },
}

#[derive(Serialize)]
struct RunOutput<'a> {
    entries: &'a [GridEntry],
    certificates: Vec<TangencyCertificate>,
}

#[derive(Serialize)]
struct CertifyOutput {
    certificates: Vec<TangencyCertificate>,
}

#[derive(Serialize)]
struct EmbedOutput {
    dim: usize,
    convention: &'static str,
    values: Vec<f64>,
}

#[derive(Serialize)]
struct PurityOutput {
    is_pure: bool,
    norm_residual: f64,
    product_residual: f64,
    tol: f64,
}

#[derive(Serialize)]
struct MeasureOutput {
    order: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    dims: Option<[usize; 2]>,
    value: f64,
}

#[derive(Serialize)]
struct EofOutput {
    order: u32,
    strategy: &'static str,
    dims: [usize; 2],
    value: f64,
    ensemble: io::EnsembleOutput,
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err)
            if matches!(err.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) =>
        {
            print!("{err}");
            std::process::exit(0);
        }
        Err(err) => {
            eprint!("{err}");
            std::process::exit(3);
        }
    };
    let code = match dispatch(&cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            3
        }
    };
    std::process::exit(code);
}

fn dispatch(cli: &Cli) -> Result<i32, CliError> {
    match &cli.command {
        Command::Run { config } => run_command(cli, config),
        Command::Certify { config, certificate } => {
            certify_command(cli, config, certificate.as_deref())
        }
        Command::Graph { config } => graph_command(cli, config),
        Command::Quantum { command } => quantum_command(cli, command),
    }
}

fn load_config(cli: &Cli, path: &Path) -> Result<ProblemConfig, CliError> {
    let mut cfg = ProblemConfig::load(path)?;
    if let Some(seed) = cli.seed {
        cfg.solver.seed = seed;
    }
    if let Some(restarts) = cli.restarts {
        cfg.solver.restarts = Some(restarts);
    }
    if let Some(tol) = cli.tol {
        cfg.solver.tol = Some(tol);
    }
    Ok(cfg)
}

fn run_command(cli: &Cli, path: &Path) -> Result<i32, CliError> {
    let cfg = load_config(cli, path)?;
    if cfg.kind != Kind::Roof {
        return Err(CliError::Config("run needs a config with kind \"roof\"".into()));
    }
    let problem = cfg.problem()?;
    let targets = cfg.targets()?;
    let opts = cfg.oracle_options();
    let entries = problem.grid(&targets, &opts);

    let mut certificates = Vec::new();
    let mut any_cert_fail = false;
    let mut any_infeasible = entries.iter().any(|e| !e.feasible);
    if cfg.certify {
        let copts = cfg.certificate_options();
        for target in &targets {
            match certify_target(&problem, target, &copts) {
                Ok(report) => {
                    let passed =
                        verify_certificate(&problem, &report.best, VERIFY_TOL)?.passed;
                    if !passed {
                        any_cert_fail = true;
                    }
                    certificates.push(report.best);
                }
                Err(TangencyError::NoSolution { .. }) => {
                    any_infeasible = true;
                }
                Err(err) => return Err(err.into()),
            }
        }
    }

    if let Some(csv_path) = &cfg.output.csv {
        let m_max = opts.m_max.unwrap_or_else(|| problem.default_m_max());
        let csv = grid_to_csv(&entries, problem.variety().ambient_dim(), m_max);
        io::write_text(&io::reroot(csv_path, cli.out.as_deref()), &csv)?;
    }
    let text = io::to_json_text(&RunOutput { entries: &entries, certificates })?;
    let json_path = cfg.output.json.as_ref().map(|p| io::reroot(p, cli.out.as_deref()));
    io::write_or_print(json_path.as_deref(), &text)?;

    Ok(if any_cert_fail {
        1
    } else if any_infeasible {
        2
    } else {
        0
    })
}

fn certify_command(
    cli: &Cli,
    path: &Path,
    certificate: Option<&Path>,
) -> Result<i32, CliError> {
    let cfg = load_config(cli, path)?;
    if cfg.kind == Kind::Quantum {
        return Err(CliError::Config(
            "certify needs a config with kind \"roof\" or \"certify\"".into(),
        ));
    }
    let problem = cfg.problem()?;
    let json_path = cfg.output.json.as_ref().map(|p| io::reroot(p, cli.out.as_deref()));

    if let Some(cert_path) = certificate {
        let cert: TangencyCertificate = io::read_json(cert_path)?;
        return match verify_certificate(&problem, &cert, VERIFY_TOL) {
            Ok(report) => {
                let text = io::to_json_text(&report)?;
                io::write_or_print(json_path.as_deref(), &text)?;
                Ok(if report.passed { 0 } else { 1 })
            }
            Err(err) => {
                eprintln!("verification failed: {err}");
                Ok(1)
            }
        };
    }

    let targets = cfg.targets()?;
    let copts = cfg.certificate_options();
    let mut certificates = Vec::new();
    let mut any_fail = false;
    let mut any_unsolved = false;
    for target in &targets {
        match certify_target(&problem, target, &copts) {
            Ok(report) => {
                let passed = verify_certificate(&problem, &report.best, VERIFY_TOL)?.passed;
                if !passed {
                    any_fail = true;
                }
                certificates.push(report.best);
            }
            Err(TangencyError::NoSolution { .. }) => {
                any_unsolved = true;
            }
            Err(err) => return Err(err.into()),
        }
    }
    let text = io::to_json_text(&CertifyOutput { certificates })?;
    io::write_or_print(json_path.as_deref(), &text)?;
    Ok(if any_fail {
        1
    } else if any_unsolved {
        2
    } else {
        0
    })
}

fn graph_command(cli: &Cli, path: &Path) -> Result<i32, CliError> {
    let cfg = load_config(cli, path)?;
    if cfg.kind != Kind::Roof {
        return Err(CliError::Config("graph needs a config with kind \"roof\"".into()));
    }
    let problem = cfg.problem()?;
    let variety = problem.variety();
    let probe = variety.sample(2, cfg.solver.seed)?;
    let dim = variety.dimension_estimate(&probe, DEFAULT_RANK_TOL)?;
    if dim > 2 {
        return Err(CliError::Config(format!(
            "graph sampling needs a curve or surface, got a {dim}-dimensional variety"
        )));
    }
    let mut points = variety.sample(cfg.samples, cfg.solver.seed)?;
    if variety.ambient_dim() == 2 {
        // Order circle-like samples into a closed sweep.
        points.sort_by(|a, b| a[1].atan2(a[0]).total_cmp(&b[1].atan2(b[0])));
    }
    let mut csv = String::new();
    for i in 0..variety.ambient_dim() {
        csv.push_str(&format!("x_{},", i + 1));
    }
    csv.push_str("f\n");
    for point in &points {
        for v in point.iter() {
            csv.push_str(&format!("{},", fmt_float(*v)));
        }
        csv.push_str(&format!("{}\n", fmt_float(problem.objective().eval(point)?)));
    }
    let csv_path = cfg.output.csv.as_ref().map(|p| io::reroot(p, cli.out.as_deref()));
    io::write_or_print(csv_path.as_deref(), &csv)?;
    Ok(0)
}

fn parse_dims(text: &str) -> Result<(usize, usize), CliError> {
    let parts: Vec<&str> = text.split('x').collect();
    if parts.len() == 2 {
        if let (Ok(m), Ok(n)) = (parts[0].parse::<usize>(), parts[1].parse::<usize>()) {
            if m >= 1 && n >= 1 {
                return Ok((m, n));
            }
        }
    }
    Err(CliError::Config(format!("cannot parse dimension split `{text}`, expected MxN")))
}

fn check_basis(name: &str) -> Result<(), CliError> {
    if name == "gellmann" {
        Ok(())
    } else {
        Err(CliError::Config(format!("unknown basis `{name}`, only gellmann is bundled")))
    }
}

fn quantum_out(cli: &Cli, file: &str) -> Option<PathBuf> {
    cli.out.as_ref().map(|dir| dir.join(file))
}

fn quantum_command(cli: &Cli, command: &QuantumCommand) -> Result<i32, CliError> {
    match command {
        QuantumCommand::Embed { state, basis, convention } => {
            check_basis(basis)?;
            let rho = io::read_density(state)?;
            let (basis, _) = gellmann(rho.dim())?;
            let convention = Convention::from(*convention);
            let c = CoefficientVector::embed(&rho, &basis, convention)?;
            let output = EmbedOutput {
                dim: rho.dim(),
                convention: match convention {
                    Convention::Scaled => "scaled",
                    Convention::Plain => "plain",
                },
                values: c.values().iter().cloned().collect(),
            };
            let text = io::to_json_text(&output)?;
            io::write_or_print(quantum_out(cli, "embed.json").as_deref(), &text)?;
            Ok(0)
        }
        QuantumCommand::Purity { state, basis } => {
            check_basis(basis)?;
            let rho = io::read_density(state)?;
            let (basis, _) = gellmann(rho.dim())?;
            let c = CoefficientVector::embed(&rho, &basis, Convention::Scaled)?;
            let tol = cli.tol.unwrap_or(1e-9);
            let report = purity_conditions(&c, tol)?;
            let output = PurityOutput {
                is_pure: report.is_pure,
                norm_residual: report.norm_residual,
                product_residual: report.product_residual,
                tol,
            };
            let text = io::to_json_text(&output)?;
            io::write_or_print(quantum_out(cli, "purity.json").as_deref(), &text)?;
            Ok(0)
        }
        QuantumCommand::Measure { state, dim, order } => {
            let rho = io::read_density(state)?;
            let (dims, reduced) = match dim {
                Some(text) => {
                    let (m, n) = parse_dims(text)?;
                    (Some([m, n]), rho.partial_trace(m, n, Subsystem::B)?)
                }
                None => (None, rho),
            };
            let value = measure_f_a(&reduced, *order)?;
            let text = io::to_json_text(&MeasureOutput { order: *order, dims, value })?;
            io::write_or_print(quantum_out(cli, "measure.json").as_deref(), &text)?;
            Ok(0)
        }
        QuantumCommand::Eof { state, dim, strategy, order, s_max } => {
            let rho = io::read_density(state)?;
            let (m, n) = parse_dims(dim)?;
            let opts = EofOptions {
                a: *order,
                strategy: EofStrategy::from(*strategy),
                seed: cli.seed.unwrap_or(1),
                restarts: cli.restarts.unwrap_or(64),
                s_max: *s_max,
            };
            let result = entanglement_of_formation(&rho, m, n, &opts)?;
            let output = EofOutput {
                order: *order,
                strategy: strategy.name(),
                dims: [m, n],
                value: result.value,
                ensemble: io::EnsembleOutput::from_ensemble(&result.ensemble),
            };
            let text = io::to_json_text(&output)?;
            io::write_or_print(quantum_out(cli, "eof.json").as_deref(), &text)?;
            Ok(0)
        }
    }
}
