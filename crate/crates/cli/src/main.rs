use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::builder::PossibleValuesParser;
use clap::{Args, Parser, Subcommand};
use paracube::exec::WORKERS_ENV;
use paracube::integrands::REGISTRY;
use paracube::{Exec, ExecConfig, DEFAULT_REGION_CAP};
use paracube_cli::commands::{self, BenchInvokeArgs, IntegrateArgs};
use paracube_cli::scenario::{builtin_8d, parse_scenarios, ExecSpec, Integrator, DEFAULT_REPETITIONS};
use paracube_cli::{CliError, Format};

/// Parallel cubature and Monte Carlo integration benchmarks.
#[derive(Parser, Debug)]
#[command(name = "paracube", version)]
struct Cli {
    /// Worker threads (default: all available cores).
    #[arg(long, global = true, env = WORKERS_ENV, value_parser = clap::value_parser!(u64).range(1..))]
    workers: Option<u64>,

    /// Fixed-order reductions, bit-identical for any worker count (default).
    #[arg(long, global = true, conflicts_with = "unordered")]
    deterministic: bool,

    /// Reductions in completion order.
    #[arg(long, global = true)]
    unordered: bool,

    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    format: Format,

    /// Write the report here instead of standard output.
    #[arg(long, global = true, value_name = "FILE")]
    out: Option<PathBuf>,

    /// Per-iteration progress on standard error.
    #[arg(long, short, global = true)]
    verbose: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Integrate one registry integrand and compare with its reference value.
    Integrate(IntegrateCmd),
    /// Time serial integrand invocations on host-generated points.
    BenchInvoke(BenchInvokeCmd),
    /// Time scenarios under two execution configurations.
    Compare(CompareCmd),
}

#[derive(Args, Debug)]
struct IntegrateCmd {
    #[arg(value_enum)]
    integrator: Integrator,

    #[arg(value_parser = PossibleValuesParser::new(REGISTRY))]
    integrand: String,

    #[arg(long, short)]
    dim: usize,

    /// Relative tolerance (PAGANI default 1e-3; optional for m-Cubes).
    #[arg(long)]
    rel_tol: Option<f64>,

    /// PAGANI iteration budget.
    #[arg(long)]
    max_iterations: Option<usize>,

    /// PAGANI region cap.
    #[arg(long, default_value_t = DEFAULT_REGION_CAP)]
    region_cap: usize,

    /// m-Cubes samples per iteration.
    #[arg(long, short = 'n', default_value_t = 1_000_000)]
    samples: u64,

    /// m-Cubes iterations.
    #[arg(long, default_value_t = 10)]
    iterations: usize,

    /// m-Cubes leading iterations that only train the grid.
    #[arg(long, default_value_t = 0)]
    warmup: usize,

    /// Keep the m-Cubes grid uniform.
    #[arg(long)]
    frozen_grid: bool,
}

#[derive(Args, Debug)]
struct BenchInvokeCmd {
    #[arg(value_parser = PossibleValuesParser::new(REGISTRY))]
    integrand: String,

    #[arg(long, short)]
    dim: usize,

    #[arg(long, default_value_t = 1_000_000)]
    points: usize,

    #[arg(long, default_value_t = 10)]
    repetitions: usize,
}

#[derive(Args, Debug)]
struct CompareCmd {
    /// TOML scenario file.
    #[arg(
        long,
        value_name = "FILE",
        required_unless_present = "builtin_8d",
        conflicts_with = "builtin_8d"
    )]
    scenarios: Option<PathBuf>,

    /// The six benchmark integrands at d = 8 under the PAGANI kernel.
    #[arg(long)]
    builtin_8d: bool,

    /// Regions per axis for the built-in scenarios.
    #[arg(long, default_value_t = 3)]
    g: usize,

    /// Override every scenario's repetition count.
    #[arg(long)]
    repetitions: Option<usize>,

    /// Configuration A, e.g. `workers=1`.
    #[arg(long, default_value = "workers=1")]
    a: String,

    /// Configuration B, e.g. `workers=8,unordered`.
    #[arg(long, default_value = "workers=8")]
    b: String,
}

fn exec_config(cli: &Cli) -> ExecConfig {
    ExecConfig {
        workers: cli.workers.map_or(0, |w| w as usize),
        deterministic: !cli.unordered,
        ..Default::default()
    }
}

fn run(cli: &Cli, out: &mut dyn Write) -> Result<(), CliError> {
    let mut stderr = io::stderr();
    let progress: Option<&mut dyn Write> = if cli.verbose { Some(&mut stderr) } else { None };
    match &cli.command {
        Command::Integrate(c) => {
            let args = IntegrateArgs {
                integrator: c.integrator,
                integrand: c.integrand.clone(),
                dim: c.dim,
                rel_tol: c.rel_tol,
                max_iterations: c.max_iterations,
                region_cap: c.region_cap,
                samples: c.samples,
                iterations: c.iterations,
                warmup: c.warmup,
                adapt: !c.frozen_grid,
            };
            let exec = Exec::new(exec_config(cli));
            let report = commands::integrate(&args, &exec, cli.seed, progress)?;
            commands::render_integrate(&report, cli.format, &mut *out)?;
            if !report.converged {
                return Err(CliError::NotConverged);
            }
        }
        Command::BenchInvoke(c) => {
            let args = BenchInvokeArgs {
                integrand: c.integrand.clone(),
                dim: c.dim,
                points: c.points,
                repetitions: c.repetitions,
            };
            let report = commands::bench_invoke(&args, exec_config(cli), cli.seed)?;
            commands::render_invoke(&report, cli.format, &mut *out)?;
        }
        Command::Compare(c) => {
            let a: ExecSpec = c.a.parse().map_err(|e| CliError::Usage(format!("--a: {e}")))?;
            let b: ExecSpec = c.b.parse().map_err(|e| CliError::Usage(format!("--b: {e}")))?;
            let mut scenarios = match &c.scenarios {
                Some(path) => {
                    let text = std::fs::read_to_string(path)
                        .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
                    parse_scenarios(&text)?
                }
                None => builtin_8d(c.g, DEFAULT_REPETITIONS),
            };
            if let Some(r) = c.repetitions {
                if r == 0 {
                    return Err(CliError::Usage("repetitions must be at least 1".into()));
                }
                scenarios.iter_mut().for_each(|s| s.repetitions = r);
            }
            let rows = commands::compare(&scenarios, a.0, b.0, cli.seed, progress)?;
            commands::render_compare(&rows, (&c.a, &c.b), cli.format, &mut *out)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut out: Box<dyn Write> = match &cli.out {
        Some(path) => match File::create(path) {
            Ok(f) => Box::new(BufWriter::new(f)),
            Err(e) => {
                eprintln!("error: cannot create {}: {e}", path.display());
                return ExitCode::from(2);
            }
        },
        None => Box::new(io::stdout().lock()),
    };
    let result = run(&cli, &mut out);
    if let Err(e) = out.flush() {
        eprintln!("error: {e}");
        return ExitCode::from(1);
    }
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if let CliError::Usage(_) = e {
                eprintln!("run `paracube --help` for usage");
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
