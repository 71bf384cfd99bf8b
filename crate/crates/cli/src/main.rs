//! `bandtree`: generate problems, run the simulated solve, verify results
//! and collect scaling reports.
//!
//! Failures print one line, `error: <category>: <message>`, and exit with
//! 2 (numerical), 3 (deadlock) or 4 (usage, I/O, format).

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use bandtree::analysis::{predicted_time, scaling_rows, write_scaling_csv, ScalingSample};
use bandtree::format::{self, Encoding, FormatError};
use bandtree::netsim::SimSetupError;
use bandtree::reference::{assemble_global, banded_solve};
use bandtree::{
    solve_distributed, CostModel, DriverError, GeneratorKind, Problem, ProblemShape, SimError,
    SimReport, SolverOptions,
};
use clap::{Parser, Subcommand};
use thiserror::Error;

#[derive(Parser)]
#[command(name = "bandtree", version, about = "Tree-parallel block-tridiagonal solver on a simulated network")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a generated problem file.
    Generate {
        #[arg(long, default_value = "tridiag-dd")]
        generator: GeneratorKind,
        #[arg(long)]
        leaves: usize,
        #[arg(long)]
        block_size: usize,
        #[arg(long, default_value_t = 1)]
        rhs: usize,
        /// Defaults to the block size.
        #[arg(long)]
        bandwidth: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Write the text form instead of the binary container.
        #[arg(long)]
        text: bool,
    },
    /// Solve a problem file on the simulated tree.
    Solve {
        problem: PathBuf,
        #[command(flatten)]
        cost: CostArgs,
        /// Solution output file.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Simulation report (JSON) output file.
        #[arg(long)]
        metrics: Option<PathBuf>,
        #[arg(long)]
        text: bool,
    },
    /// Check a solution against the problem and the dense reference solve.
    Verify {
        problem: PathBuf,
        solution: PathBuf,
        #[arg(long, default_value_t = 1e-10)]
        tolerance: f64,
    },
    /// Turn simulation reports into a scaling CSV.
    Report {
        #[arg(required = true)]
        reports: Vec<PathBuf>,
        /// CSV output file; stdout if omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print a problem or solution file in text form.
    Dump { file: PathBuf },
}

#[derive(clap::Args)]
struct CostArgs {
    #[arg(long, default_value_t = 0.0)]
    latency: f64,
    #[arg(long, default_value_t = 1.0)]
    per_element: f64,
    #[arg(long, default_value_t = 1.0)]
    flop: f64,
}

#[derive(Debug, Error)]
enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("io: {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("format: {path}: {source}")]
    Format { path: PathBuf, source: FormatError },
    #[error("shape: {0}")]
    Shape(String),
    #[error("schema: {0}")]
    Schema(String),
    #[error("numerical: {0}")]
    Numerical(String),
    #[error("deadlock: {0}")]
    Deadlock(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Numerical(_) => 2,
            CliError::Deadlock(_) => 3,
            _ => 4,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_owned(),
        source,
    }
}

fn fmt_err(path: &Path) -> impl FnOnce(FormatError) -> CliError + '_ {
    move |source| match source {
        FormatError::Io(source) => CliError::Io {
            path: path.to_owned(),
            source,
        },
        source => CliError::Format {
            path: path.to_owned(),
            source,
        },
    }
}

fn read_problem(path: &Path) -> Result<Problem, CliError> {
    let f = File::open(path).map_err(io_err(path))?;
    format::read_problem(io::BufReader::new(f)).map_err(fmt_err(path))
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    Ok(BufWriter::new(File::create(path).map_err(io_err(path))?))
}

fn encoding(text: bool) -> Encoding {
    if text {
        Encoding::Text
    } else {
        Encoding::Binary
    }
}

fn generate(
    kind: GeneratorKind,
    shape: (usize, usize, usize, Option<usize>),
    seed: u64,
    out: &Path,
    text: bool,
) -> Result<(), CliError> {
    let (n, m, k, b) = shape;
    let shape = ProblemShape::new(n, m, k, b.unwrap_or(m)).map_err(|e| CliError::Usage(e.to_string()))?;
    let p = Problem::generate(kind, shape, seed).map_err(|e| CliError::Usage(e.to_string()))?;
    let mut w = create(out)?;
    format::write_problem(&mut w, &p, encoding(text)).map_err(fmt_err(out))?;
    w.flush().map_err(io_err(out))
}

fn driver_error(e: DriverError) -> CliError {
    match e {
        DriverError::Problem(e) => CliError::Shape(e.to_string()),
        DriverError::Sim(SimError::Deadlock { .. }) => CliError::Deadlock(e.to_string()),
        DriverError::Sim(SimError::Program { .. }) => CliError::Numerical(e.to_string()),
        DriverError::Sim(e) => CliError::Shape(e.to_string()),
    }
}

fn solve(path: &Path, cost: &CostArgs, out: Option<&Path>, metrics: Option<&Path>, text: bool) -> Result<(), CliError> {
    let p = read_problem(path)?;
    let cost = CostModel::new(cost.latency, cost.per_element, cost.flop)
        .map_err(|e: SimSetupError| CliError::Usage(e.to_string()))?;
    let sol = solve_distributed(&p.shape, p.rows.clone(), cost, SolverOptions::default())
        .map_err(driver_error)?;
    let x = sol.gather();
    if let Some(out) = out {
        let mut w = create(out)?;
        format::write_solution(&mut w, &x, encoding(text)).map_err(fmt_err(out))?;
        w.flush().map_err(io_err(out))?;
    }
    if let Some(metrics) = metrics {
        fs::write(metrics, sol.report.to_json() + "\n").map_err(io_err(metrics))?;
    }
    // residual is a post-hoc check; the solve itself only saw leaf records
    let g = assemble_global(&p.rows).map_err(|e| CliError::Shape(e.to_string()))?;
    let residual = g
        .relative_residual(&x)
        .map_err(|e| CliError::Shape(e.to_string()))?;
    println!(
        "leaves {} block {} rhs {} rounds {} makespan {} messages {} residual {:e}",
        p.shape.leaves(),
        p.shape.block_size(),
        p.shape.rhs_cols(),
        p.shape.depth(),
        sol.report.makespan,
        sol.report.messages.len(),
        residual
    );
    Ok(())
}

fn verify(problem: &Path, solution: &Path, tolerance: f64) -> Result<(), CliError> {
    let p = read_problem(problem)?;
    let f = File::open(solution).map_err(io_err(solution))?;
    let x = format::read_solution(io::BufReader::new(f)).map_err(fmt_err(solution))?;
    let g = assemble_global(&p.rows).map_err(|e| CliError::Shape(e.to_string()))?;
    if x.shape() != g.rhs.shape() {
        return Err(CliError::Shape(format!(
            "solution is {:?}, problem needs {:?}",
            x.shape(),
            g.rhs.shape()
        )));
    }
    let residual = g.relative_residual(&x).expect("shapes checked");
    let reference = banded_solve(&g).map_err(|e| CliError::Numerical(format!("reference solve: {e}")))?;
    let diff = x.max_abs_diff(&reference) / reference.max_abs().max(f64::MIN_POSITIVE);
    println!("residual {residual:e} oracle_diff {diff:e} tolerance {tolerance:e}");
    if residual > tolerance || diff > tolerance {
        return Err(CliError::Numerical(format!(
            "residual {residual:e} / oracle difference {diff:e} above tolerance {tolerance:e}"
        )));
    }
    Ok(())
}

fn report(paths: &[PathBuf], out: Option<&Path>) -> Result<(), CliError> {
    let mut shape = None;
    let mut samples = Vec::new();
    for path in paths {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let r = SimReport::from_json(&text).map_err(|e| CliError::Schema(format!("{}: {e}", path.display())))?;
        let info = r
            .problem
            .ok_or_else(|| CliError::Schema(format!("{}: report has no problem section", path.display())))?;
        let key = (info.block_size, info.rhs_cols, r.cost);
        match &shape {
            None => shape = Some(key),
            Some(first) if *first != key => {
                return Err(CliError::Schema(format!(
                    "{}: block size, rhs count and costs must match the first report",
                    path.display()
                )))
            }
            _ => {}
        }
        samples.push(ScalingSample {
            leaves: info.leaves,
            makespan: r.makespan,
        });
    }
    let (m, k, cost) = shape.expect("at least one report");
    let rows = scaling_rows(&samples, |n| predicted_time(n, m, k, &cost))
        .map_err(|e| CliError::Schema(e.to_string()))?;
    let result = match out {
        Some(path) => write_scaling_csv(&rows, create(path)?),
        None => write_scaling_csv(&rows, io::stdout().lock()),
    };
    result.map_err(|e| CliError::Io {
        path: out.map_or_else(|| PathBuf::from("<stdout>"), Path::to_owned),
        source: io::Error::other(e),
    })
}

fn dump(path: &Path) -> Result<(), CliError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let text = if bytes.starts_with(format::SOLUTION_MAGIC) || bytes.starts_with(b"bandtree-solution") {
        format::solution_to_text(&format::read_solution(&bytes[..]).map_err(fmt_err(path))?)
    } else {
        format::problem_to_text(&format::read_problem(&bytes[..]).map_err(fmt_err(path))?)
    };
    io::stdout()
        .lock()
        .write_all(text.as_bytes())
        .map_err(io_err(Path::new("<stdout>")))
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Generate {
            generator,
            leaves,
            block_size,
            rhs,
            bandwidth,
            seed,
            out,
            text,
        } => generate(generator, (leaves, block_size, rhs, bandwidth), seed, &out, text),
        Command::Solve {
            problem,
            cost,
            out,
            metrics,
            text,
        } => solve(&problem, &cost, out.as_deref(), metrics.as_deref(), text),
        Command::Verify {
            problem,
            solution,
            tolerance,
        } => verify(&problem, &solution, tolerance),
        Command::Report { reports, out } => report(&reports, out.as_deref()),
        Command::Dump { file } => dump(&file),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg
                .lines()
                .next()
                .unwrap_or("invalid arguments")
                .trim_start_matches("error: ");
            eprintln!("error: {}", CliError::Usage(first.to_string()));
            return ExitCode::from(4);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.to_string().replace('\n', " "));
            ExitCode::from(e.exit_code())
        }
    }
}
