//! Command-line front end of the `pnph` binary.
//!
//! Numeric results go to files, progress goes to standard error. Every file
//! is written to a temporary sibling first and renamed into place, so an
//! error never leaves a partial output behind.

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Parser, Subcommand};
use serde::Serialize;
use serde_json::json;
use thiserror::Error;

use crate::broken_mesh::{build_box_mesh, build_domain_mesh, BrokenField};
use crate::cell_problems::compute_cell_correctors;
use crate::config::{parse_config, ConfigErrors, ToolkitConfig};
use crate::geometry::{build_paving, measures};
use crate::pb_solver::{energy_diagnostic, recover_concentrations, solve_micro_pb, PbSolution};
use crate::study::{config_hash, run_convergence_study, run_lemma_sweep, solve_macro, StudyError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_SOLVER: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "pnph", version, about = "Periodic homogenization of the Poisson–Boltzmann equation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Toolkit configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output file or directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads.
    #[arg(long, global = true, default_value_t = 1)]
    pub threads: usize,
    /// Log progress at info level.
    #[arg(long, global = true)]
    pub verbose: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve the L and N cell problems and dump the correctors.
    SolveCell,
    /// Compute and certify the effective tensor.
    ComputeA0,
    /// Solve the heterogeneous problem at one ε.
    SolveMicro {
        /// Cell size; defaults to the first configured value.
        #[arg(long)]
        epsilon: Option<f64>,
    },
    /// Solve the homogenized problem.
    SolveMacro,
    /// Run the ε-sweep and write the convergence report.
    Converge,
    /// Residual tables of the traction and volume expansion experiments.
    VerifyLemmas,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(#[from] ConfigErrors),
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Study(#[from] StudyError),
    #[error("convergence sweep stopped at epsilon = {epsilon}: {message}")]
    PartialSweep { epsilon: f64, message: String },
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Usage(_) => EXIT_CONFIG,
            _ => EXIT_SOLVER,
        }
    }
}

impl<E: Into<StudyError>> From<E> for Box<CliError> {
    fn from(e: E) -> Self {
        Box::new(CliError::Study(e.into()))
    }
}

/// Parses `argv` (program name first), runs the subcommand and returns the
/// process exit code.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    let level = if cli.verbose { "info" } else { "warn" };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .target(env_logger::Target::Stderr)
        .try_init();
    match run(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: &Cli) -> Result<(), Box<CliError>> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::Usage("--config PATH is required".into()))?;
    let config = parse_config(path).map_err(CliError::Config)?;
    if cli.threads == 0 {
        return Err(Box::new(CliError::Usage("--threads must be at least 1".into())));
    }
    let out_dir = || cli.out.clone().unwrap_or_else(|| PathBuf::from(&config.study.output));
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build()
        .map_err(|e| CliError::Usage(e.to_string()))?;
    pool.install(|| match &cli.command {
        Command::SolveCell => solve_cell(&config, &out_dir()),
        Command::ComputeA0 => compute_a0(&config, &cli.out.clone().unwrap_or_else(|| "a0.json".into())),
        Command::SolveMicro { epsilon } => solve_micro(&config, *epsilon, &out_dir()),
        Command::SolveMacro => solve_macro_cmd(&config, &out_dir()),
        Command::Converge => converge(&config, cli.threads, &out_dir()),
        Command::VerifyLemmas => verify_lemmas(&config, cli.threads, &out_dir()),
    })
}

/// Writes `contents` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), Box<CliError>> {
    let io = |source| {
        Box::new(CliError::Io {
            path: path.to_path_buf(),
            source,
        })
    };
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    std::fs::create_dir_all(&dir).map_err(io)?;
    let mut tmp = tempfile::NamedTempFile::new_in(&dir).map_err(io)?;
    tmp.write_all(contents).map_err(io)?;
    tmp.as_file().sync_all().map_err(io)?;
    tmp.persist(path).map_err(|e| io(e.error))?;
    log::info!("wrote {}", path.display());
    Ok(())
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), Box<CliError>> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable output");
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

/// `dof_id,x[,y],<columns>,region` table of nodal fields on one mesh.
pub fn field_csv(fields: &[(&str, &BrokenField)]) -> String {
    let mesh = &fields[0].1.mesh;
    let mut wtr = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["dof_id".to_string(), "x".to_string()];
    if mesh.dim() == 2 {
        header.push("y".into());
    }
    header.extend(fields.iter().map(|(name, _)| name.to_string()));
    header.push("region".into());
    wtr.write_record(&header).expect("in-memory write");
    for d in 0..mesh.dof_count() {
        let x = mesh.coords()[d];
        let mut rec = vec![d.to_string(), format!("{:?}", x[0])];
        if mesh.dim() == 2 {
            rec.push(format!("{:?}", x[1]));
        }
        rec.extend(fields.iter().map(|(_, f)| format!("{:?}", f.values[d])));
        rec.push(mesh.dof_region()[d].as_str().into());
        wtr.write_record(&rec).expect("in-memory write");
    }
    String::from_utf8(wtr.into_inner().expect("in-memory write")).expect("utf-8 output")
}

fn certification(config: &ToolkitConfig) -> Result<serde_json::Value, Box<CliError>> {
    let cell = compute_cell_correctors(
        &config.cell(),
        &config.material(),
        config.study.h_cell,
        config.solver.linear_tol,
    )
    .map_err(StudyError::from)?;
    let a0 = &cell.a0;
    Ok(json!({
        "dim": config.geometry.dim,
        "cell": {
            "inclusion_lower": config.geometry.inclusion_lower,
            "inclusion_upper": config.geometry.inclusion_upper,
            "clearance": config.geometry.clearance,
            "h": config.study.h_cell,
        },
        "material": config.material(),
        "A0": a0.row_major(),
        "certification": {
            "formula_agreement": a0.agreement,
            "mean_B": cell.diagnostics.b.mean_b,
            "interface_residual": cell.diagnostics.b.interface_residual,
            "min_eigenvalue": a0.min_eigenvalue,
        },
        "volume_average": a0.volume_average,
        "energy_form": a0.energy_form,
        "mean_L": cell.diagnostics.mean_l,
        "mean_L_expected": cell.diagnostics.mean_l_expected,
    }))
}

fn compute_a0(config: &ToolkitConfig, out: &Path) -> Result<(), Box<CliError>> {
    write_json(out, &certification(config)?)
}

fn solve_cell(config: &ToolkitConfig, out: &Path) -> Result<(), Box<CliError>> {
    let cell = compute_cell_correctors(
        &config.cell(),
        &config.material(),
        config.study.h_cell,
        config.solver.linear_tol,
    )
    .map_err(StudyError::from)?;
    write_atomic(&out.join("cell_L.csv"), field_csv(&[("value", &cell.l)]).as_bytes())?;
    for (i, n) in cell.n.iter().enumerate() {
        write_atomic(
            &out.join(format!("cell_N{}.csv", i + 1)),
            field_csv(&[("value", n)]).as_bytes(),
        )?;
    }
    write_json(
        &out.join("cell.json"),
        &json!({
            "A0": cell.a0.row_major(),
            "mean_L": cell.diagnostics.mean_l,
            "mean_L_expected": cell.diagnostics.mean_l_expected,
            "mean_N": cell.diagnostics.mean_n,
            "B": cell.diagnostics.b,
            "natural_dofs": cell.natural_mesh.dof_count(),
            "periodic_dofs": cell.periodic_mesh.dof_count(),
        }),
    )
}

fn write_solution(
    config: &ToolkitConfig,
    sol: &PbSolution,
    epsilon: Option<f64>,
    out: &Path,
) -> Result<(), Box<CliError>> {
    write_atomic(&out.join("potential.csv"), field_csv(&[("value", &sol.field)]).as_bytes())?;
    let conc = recover_concentrations(&sol.field, &config.ions());
    let names: Vec<String> = (0..conc.len()).map(|s| format!("c{s}")).collect();
    let cols: Vec<(&str, &BrokenField)> = names.iter().map(String::as_str).zip(conc.iter()).collect();
    write_atomic(&out.join("concentrations.csv"), field_csv(&cols).as_bytes())?;
    write_json(
        &out.join("summary.json"),
        &json!({
            "epsilon": epsilon,
            "dofs": sol.field.mesh.dof_count(),
            "newton_iterations": sol.iterations,
            "residual_history": sol.residual_history,
            "clamp_active": sol.clamp_active,
            "energy": energy_diagnostic(&sol.field, epsilon.unwrap_or(1.0)),
            "config_hash": config_hash(config),
        }),
    )
}

fn solve_micro(config: &ToolkitConfig, epsilon: Option<f64>, out: &Path) -> Result<(), Box<CliError>> {
    let eps = epsilon.unwrap_or(config.study.epsilons[0]);
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Box::new(CliError::Usage(format!("--epsilon must be positive, got {eps}"))));
    }
    let paved = build_paving(config.domain(), eps, config.cell(), config.geometry.gap)?;
    if !paved.is_whole_cell_union() {
        return Err(Box::new(CliError::Usage(format!(
            "domain is not a union of whole cells at epsilon = {eps}"
        ))));
    }
    let mesh = Arc::new(build_domain_mesh(&paved, config.study.h_cell)?);
    let sol = solve_micro_pb(mesh, &config.material(), &config.ions(), eps, &config.newton())?;
    log::info!("micro solve: {} Newton iterations", sol.iterations);
    write_solution(config, &sol, Some(eps), out)
}

fn solve_macro_cmd(config: &ToolkitConfig, out: &Path) -> Result<(), Box<CliError>> {
    let domain = config.domain();
    build_box_mesh(config.geometry.dim, domain.lower, domain.upper, config.study.macro_h)?;
    let cell = compute_cell_correctors(
        &config.cell(),
        &config.material(),
        config.study.h_cell,
        config.solver.linear_tol,
    )
    .map_err(StudyError::from)?;
    let sol = solve_macro(config, &cell, config.study.macro_h)?;
    log::info!(
        "macro solve: {} Newton iterations, porosity {}",
        sol.iterations,
        measures(&cell.cell).porosity()
    );
    write_solution(config, &sol, None, out)
}

fn converge(config: &ToolkitConfig, threads: usize, out: &Path) -> Result<(), Box<CliError>> {
    let report = run_convergence_study(config, threads)?;
    write_atomic(&out.join("report.csv"), report.to_csv().as_bytes())?;
    write_json(&out.join("report.json"), &report.to_json())?;
    eprintln!("fitted rate {}", report.fitted_rate);
    match report.failure {
        Some(f) => Err(Box::new(CliError::PartialSweep {
            epsilon: f.epsilon,
            message: f.message,
        })),
        None => Ok(()),
    }
}

fn verify_lemmas(config: &ToolkitConfig, threads: usize, out: &Path) -> Result<(), Box<CliError>> {
    let report = run_lemma_sweep(config, threads)?;
    write_atomic(&out.join("lemmas.csv"), report.to_csv().as_bytes())?;
    write_json(&out.join("lemmas.json"), &report)?;
    eprint!("{}", report.to_csv());
    Ok(())
}
