//! The three subcommands, independent of argument parsing.

use std::io::Write;
use std::time::Instant;

use paracube::integrands::{lookup, Named};
use paracube::mcubes::{self, make_plan, mcubes_kernel, McubesConfig};
use paracube::pagani::{self, pagani_kernel, PaganiConfig};
use paracube::quadrature::build_rule;
use paracube::rng::SplitMix64;
use paracube::vegas::{init_grid, DEFAULT_BINS};
use paracube::{uniform_split, Error, Exec, ExecConfig, Integrand, DEFAULT_REGION_CAP};
use serde::Serialize;

use crate::scenario::{Integrator, Scenario, Workload};
use crate::timing::{mean_std, write_csv, TimingRow, FOOTER};
use crate::{CliError, Format};

/// m-Cubes runs whose chi²/dof exceeds this are reported as not converged.
pub const MAX_CHI2_PER_DOF: f64 = 5.0;

fn lib_error(e: Error) -> CliError {
    match e.root() {
        Error::InvalidArgument(_) | Error::UnsupportedDimension(_) | Error::UnknownIntegrand(_) => {
            CliError::Usage(e.to_string())
        }
        _ => CliError::Failed(e.to_string()),
    }
}

fn integrand(name: &str, dim: usize) -> Result<Named, CliError> {
    lookup(name, dim).map_err(lib_error)
}

#[derive(Debug, Clone)]
pub struct IntegrateArgs {
    pub integrator: Integrator,
    pub integrand: String,
    pub dim: usize,
    /// Relative tolerance. Required by PAGANI (default 1e-3); optional for
    /// m-Cubes, where it adds a convergence condition.
    pub rel_tol: Option<f64>,
    pub max_iterations: Option<usize>,
    pub region_cap: usize,
    pub samples: u64,
    pub iterations: usize,
    pub warmup: usize,
    pub adapt: bool,
}

impl Default for IntegrateArgs {
    fn default() -> Self {
        IntegrateArgs {
            integrator: Integrator::Pagani,
            integrand: "f1".into(),
            dim: 2,
            rel_tol: None,
            max_iterations: None,
            region_cap: DEFAULT_REGION_CAP,
            samples: 1_000_000,
            iterations: 10,
            warmup: 0,
            adapt: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IntegrateReport {
    pub integrator: String,
    pub integrand: String,
    pub dim: usize,
    pub estimate: f64,
    pub errorest: f64,
    pub reference: f64,
    pub abs_error: f64,
    pub converged: bool,
    pub iterations: usize,
    /// m-Cubes only.
    pub chi2_per_dof: Option<f64>,
    /// PAGANI only: region evaluations over the run.
    pub regions: Option<usize>,
}

/// Runs one integrator. Per-iteration records go to `progress` when given.
pub fn integrate(
    args: &IntegrateArgs,
    exec: &Exec,
    seed: u64,
    mut progress: Option<&mut dyn Write>,
) -> Result<IntegrateReport, CliError> {
    let f = integrand(&args.integrand, args.dim)?;
    let mut report = match args.integrator {
        Integrator::Pagani => {
            let mut cfg = PaganiConfig {
                rel_tol: args.rel_tol.unwrap_or(1e-3),
                region_cap: args.region_cap,
                ..Default::default()
            };
            cfg.initial_regions = cfg.initial_regions.min(cfg.region_cap);
            if let Some(m) = args.max_iterations {
                cfg.max_iterations = m;
            }
            let r = pagani::refine_with(&f, &cfg, exec, |rec| {
                if let Some(out) = progress.as_mut() {
                    let _ = writeln!(
                        out,
                        "iteration={} n_regions={} estimate={:.17e} errorest={:.17e}",
                        rec.iteration, rec.n_regions, rec.estimate, rec.errorest
                    );
                }
            })
            .map_err(lib_error)?;
            IntegrateReport {
                integrator: args.integrator.to_string(),
                integrand: args.integrand.clone(),
                dim: args.dim,
                estimate: r.estimate,
                errorest: r.errorest,
                reference: f64::NAN,
                abs_error: f64::NAN,
                converged: r.converged,
                iterations: r.iterations,
                chi2_per_dof: None,
                regions: Some(r.regions_processed),
            }
        }
        Integrator::Mcubes => {
            if let Some(t) = args.rel_tol {
                if !(t > 0.0) {
                    return Err(CliError::Usage(format!("rel-tol must be positive, got {t}")));
                }
            }
            let cfg = McubesConfig {
                n: args.samples,
                iterations: args.iterations,
                seed,
                adapt: args.adapt,
                warmup: args.warmup,
                ..Default::default()
            };
            if cfg.iterations == 0 {
                return Err(CliError::Usage("iterations must be at least 1".into()));
            }
            let r = mcubes::run_with(&f, &cfg, exec, |it| {
                if let Some(out) = progress.as_mut() {
                    let _ = it.write_record(out);
                }
            })
            .map_err(lib_error)?;
            let within_tol = args.rel_tol.is_none_or(|t| r.errorest <= t * r.estimate.abs());
            IntegrateReport {
                integrator: args.integrator.to_string(),
                integrand: args.integrand.clone(),
                dim: args.dim,
                estimate: r.estimate,
                errorest: r.errorest,
                reference: f64::NAN,
                abs_error: f64::NAN,
                converged: within_tol && r.chi2_per_dof <= MAX_CHI2_PER_DOF,
                iterations: r.iterations.len(),
                chi2_per_dof: Some(r.chi2_per_dof),
                regions: None,
            }
        }
    };
    report.reference = f.reference().map_err(lib_error)?.value;
    report.abs_error = (report.estimate - report.reference).abs();
    Ok(report)
}

pub fn render_integrate<W: Write>(r: &IntegrateReport, format: Format, mut out: W) -> Result<(), CliError> {
    match format {
        Format::Text => {
            writeln!(out, "integrator    {}", r.integrator)?;
            writeln!(out, "integrand     {} (d={})", r.integrand, r.dim)?;
            writeln!(out, "estimate      {:.12e}", r.estimate)?;
            writeln!(out, "errorest      {:.3e}", r.errorest)?;
            writeln!(out, "reference     {:.12e}", r.reference)?;
            writeln!(out, "abs_error     {:.3e}", r.abs_error)?;
            writeln!(out, "converged     {}", r.converged)?;
            writeln!(out, "iterations    {}", r.iterations)?;
            if let Some(c) = r.chi2_per_dof {
                writeln!(out, "chi2_per_dof  {c:.4}")?;
            }
            if let Some(n) = r.regions {
                writeln!(out, "regions       {n}")?;
            }
        }
        Format::Json => {
            serde_json::to_writer_pretty(&mut out, r).map_err(|e| CliError::Failed(e.to_string()))?;
            writeln!(out)?;
        }
        Format::Csv => {
            let mut w = csv::Writer::from_writer(out);
            w.serialize(r).map_err(|e| CliError::Failed(e.to_string()))?;
            w.flush()?;
        }
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct BenchInvokeArgs {
    pub integrand: String,
    pub dim: usize,
    pub points: usize,
    pub repetitions: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InvokeReport {
    pub integrand: String,
    pub dim: usize,
    pub points: usize,
    pub workers: usize,
    pub samples_ms: Vec<f64>,
    pub mean_ms: f64,
    pub std_ms: f64,
    /// Sum of every integrand value, as seen by each worker.
    pub accumulator: f64,
}

/// Host-generated random points, then every worker invokes the integrand on
/// all of them serially. The accumulated sum is reported so the calls cannot
/// be optimised away.
pub fn bench_invoke(args: &BenchInvokeArgs, exec_cfg: ExecConfig, seed: u64) -> Result<InvokeReport, CliError> {
    if args.points == 0 {
        return Err(CliError::Usage("points must be at least 1".into()));
    }
    if args.repetitions == 0 {
        return Err(CliError::Usage("repetitions must be at least 1".into()));
    }
    let f = integrand(&args.integrand, args.dim)?;
    let d = args.dim;
    let mut rng = SplitMix64::new(seed);
    let points: Vec<f64> = (0..args.points * d).map(|_| rng.next_f64()).collect();

    // One scheduling unit per worker so each worker gets exactly one pass.
    let exec = Exec::new(ExecConfig { chunk: 1, ..exec_cfg });
    let workers = exec.workers();
    let mut samples_ms = Vec::with_capacity(args.repetitions);
    let mut accumulator = 0.0;
    for _ in 0..args.repetitions {
        let t = Instant::now();
        let sums = exec
            .parallel_for_groups(workers, |_| {
                let mut acc = 0.0;
                for x in points.chunks_exact(d) {
                    acc += f.eval(std::hint::black_box(x));
                }
                Ok(acc)
            })
            .map_err(lib_error)?;
        samples_ms.push(t.elapsed().as_secs_f64() * 1e3);
        accumulator = std::hint::black_box(sums[0]);
    }
    let (mean_ms, std_ms) = mean_std(&samples_ms);
    Ok(InvokeReport {
        integrand: args.integrand.clone(),
        dim: d,
        points: args.points,
        workers,
        samples_ms,
        mean_ms,
        std_ms,
        accumulator,
    })
}

pub fn render_invoke<W: Write>(r: &InvokeReport, format: Format, mut out: W) -> Result<(), CliError> {
    match format {
        Format::Text => {
            writeln!(
                out,
                "{} d={} points={} workers={} repetitions={}",
                r.integrand,
                r.dim,
                r.points,
                r.workers,
                r.samples_ms.len()
            )?;
            for (i, s) in r.samples_ms.iter().enumerate() {
                writeln!(out, "sample {i:>3}  {s:.3} ms")?;
            }
            writeln!(out, "mean_ms       {:.3}", r.mean_ms)?;
            writeln!(out, "std_ms        {:.3}", r.std_ms)?;
            writeln!(out, "accumulator   {:.17e}", r.accumulator)?;
        }
        Format::Json => {
            serde_json::to_writer_pretty(&mut out, r).map_err(|e| CliError::Failed(e.to_string()))?;
            writeln!(out)?;
        }
        Format::Csv => {
            writeln!(out, "repetition,ms")?;
            for (i, s) in r.samples_ms.iter().enumerate() {
                writeln!(out, "{i},{s}")?;
            }
            writeln!(
                out,
                "# mean_ms={} std_ms={} accumulator={}",
                r.mean_ms, r.std_ms, r.accumulator
            )?;
        }
    }
    Ok(())
}

/// Times one scenario `repetitions` times under `exec`, in milliseconds.
fn time_scenario(s: &Scenario, exec: &Exec, seed: u64) -> paracube::Result<Vec<f64>> {
    let f = lookup(&s.integrand, s.dim)?;
    let mut samples = Vec::with_capacity(s.repetitions);
    match s.workload {
        Workload::Regions { g } => {
            let regions = uniform_split(s.dim, g, DEFAULT_REGION_CAP)?;
            let rule = build_rule(s.dim)?;
            let cfg = PaganiConfig::default();
            for _ in 0..s.repetitions {
                let t = Instant::now();
                std::hint::black_box(pagani_kernel(&f, &regions, &rule, exec, &cfg)?);
                samples.push(t.elapsed().as_secs_f64() * 1e3);
            }
        }
        Workload::Samples { n } => {
            let plan = make_plan(n, s.dim)?;
            let grid = init_grid(s.dim, DEFAULT_BINS)?;
            for _ in 0..s.repetitions {
                let t = Instant::now();
                std::hint::black_box(mcubes_kernel(&f, &plan, &grid, exec, seed)?);
                samples.push(t.elapsed().as_secs_f64() * 1e3);
            }
        }
    }
    Ok(samples)
}

/// Times every scenario under configurations `a` and `b`. Rows come back
/// sorted by id; the first failing scenario aborts the comparison.
pub fn compare(
    scenarios: &[Scenario],
    a: ExecConfig,
    b: ExecConfig,
    seed: u64,
    mut progress: Option<&mut dyn Write>,
) -> Result<Vec<TimingRow>, CliError> {
    let (ea, eb) = (Exec::new(a), Exec::new(b));
    let mut sorted: Vec<&Scenario> = scenarios.iter().collect();
    sorted.sort_by(|x, y| x.id.cmp(&y.id));
    let mut rows = Vec::with_capacity(sorted.len());
    for s in sorted {
        let fail = |e: Error| CliError::Failed(format!("scenario `{}` failed: {e}", s.id));
        let ta = time_scenario(s, &ea, seed).map_err(fail)?;
        let tb = time_scenario(s, &eb, seed).map_err(fail)?;
        let row = TimingRow::from_samples(s.id.clone(), &ta, &tb);
        if let Some(out) = progress.as_mut() {
            let _ = writeln!(out, "{}: {:.3} ms vs {:.3} ms", row.id, row.mean_a_ms, row.mean_b_ms);
        }
        rows.push(row);
    }
    Ok(rows)
}

pub fn render_compare<W: Write>(
    rows: &[TimingRow],
    labels: (&str, &str),
    format: Format,
    mut out: W,
) -> Result<(), CliError> {
    match format {
        Format::Csv => write_csv(rows, out).map_err(|e| CliError::Failed(e.to_string()))?,
        Format::Json => {
            #[derive(Serialize)]
            struct Table<'a> {
                config_a: &'a str,
                config_b: &'a str,
                rows: &'a [TimingRow],
                note: &'a str,
            }
            let table = Table {
                config_a: labels.0,
                config_b: labels.1,
                rows,
                note: FOOTER,
            };
            serde_json::to_writer_pretty(&mut out, &table).map_err(|e| CliError::Failed(e.to_string()))?;
            writeln!(out)?;
        }
        Format::Text => {
            writeln!(out, "A: {}", labels.0)?;
            writeln!(out, "B: {}", labels.1)?;
            writeln!(
                out,
                "{:<24} {:>12} {:>12} {:>10} {:>10} {:>8}",
                "id", "mean A (ms)", "mean B (ms)", "std A", "std B", "B/A"
            )?;
            for r in rows {
                writeln!(
                    out,
                    "{:<24} {:>12.3} {:>12.3} {:>10.3} {:>10.3} {:>8.3}",
                    r.id, r.mean_a_ms, r.mean_b_ms, r.std_a, r.std_b, r.ratio
                )?;
            }
            writeln!(out)?;
            writeln!(out, "{FOOTER}")?;
        }
    }
    Ok(())
}
