//! m-Cubes: stratified Monte Carlo through a VEGAS grid.
//!
//! The unit cube is cut into `m = g^d` sub-cubes and each receives `p`
//! uniform samples, which are then pushed through the importance grid.
//! Logical threads own `s` consecutive sub-cubes; `group_size` threads form
//! a work group whose partial sums are reduced before the global merge.

use std::io::{self, Write};
use std::sync::atomic::{AtomicU64, Ordering};

use crate::domain::{check_dim, Integrand};
use crate::error::{check_finite, Error, Result};
use crate::exec::{tree_sum, AtomicF64, Exec};
use crate::rng::{derive_seed, RngStream};
use crate::vegas::{init_grid, refine_grid, BinContributions, Contribution, GridRefineParams, VegasGrid, DEFAULT_BINS};

pub const DEFAULT_GROUP_SIZE: usize = 128;
pub const DEFAULT_TARGET_GROUPS: usize = 256;
/// Absolute variance floor used when combining iterations.
pub const VARIANCE_FLOOR: f64 = 1e-30;
/// The floor also covers this many ulps of each iteration's integral, so
/// iterations that differ only by rounding do not inflate chi².
pub const ROUNDING_ULPS: f64 = 16.0;

/// Variance used to weight one iteration.
pub fn floored_variance(integral: f64, variance: f64) -> f64 {
    let rounding = ROUNDING_ULPS * f64::EPSILON * integral.abs();
    variance.max(VARIANCE_FLOOR).max(rounding * rounding)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct McubesPlan {
    pub d: usize,
    /// Stratification intervals per axis.
    pub g: usize,
    /// Number of sub-cubes, `g^d`.
    pub m: u64,
    /// Samples per sub-cube.
    pub p: u64,
    /// Sub-cubes per logical thread.
    pub s: u64,
    pub group_size: usize,
    /// Samples actually drawn per iteration, `m · p`.
    pub samples: u64,
}

impl McubesPlan {
    pub fn n_threads(&self) -> u64 {
        self.m.div_ceil(self.s)
    }

    pub fn n_groups(&self) -> usize {
        self.n_threads().div_ceil(self.group_size as u64) as usize
    }
}

/// Plan for about `n` samples per iteration with the default group layout.
pub fn make_plan(n: u64, d: usize) -> Result<McubesPlan> {
    make_plan_with(n, d, DEFAULT_GROUP_SIZE, DEFAULT_TARGET_GROUPS)
}

pub fn make_plan_with(n: u64, d: usize, group_size: usize, target_groups: usize) -> Result<McubesPlan> {
    check_dim(d)?;
    if group_size == 0 || target_groups == 0 {
        return Err(Error::invalid("group_size and target_groups must be positive"));
    }
    let min = 1u64 << (d + 1);
    if n < min {
        return Err(Error::invalid(format!(
            "{n} samples cannot give each of the 2^{d} minimal sub-cubes 2 samples; need at least {min}"
        )));
    }
    // Largest g with 2·g^d ≤ n, found in integers to dodge root rounding.
    let fits = |g: u64| (g as u128).pow(d as u32) * 2 <= n as u128;
    let mut g = ((n as f64 / 2.0).powf(1.0 / d as f64).floor() as u64).max(1);
    while fits(g + 1) {
        g += 1;
    }
    while g > 1 && !fits(g) {
        g -= 1;
    }
    let m = g.pow(d as u32);
    let p = ((n as f64 / m as f64).round() as u64).max(2);
    let s = m.div_ceil(group_size as u64 * target_groups as u64).max(1);
    Ok(McubesPlan {
        d,
        g: g as usize,
        m,
        p,
        s,
        group_size,
        samples: m * p,
    })
}

/// Sums over the `p` samples of one sub-cube.
#[derive(Debug, Clone, PartialEq)]
pub struct CubeSample {
    pub s1: f64,
    pub s2: f64,
    /// `(bin_ids, contribution)` for every sample, in draw order.
    pub bin_hits: Vec<(Vec<usize>, f64)>,
}

/// Draws the `p` samples of sub-cube `cube_index` from `rng`.
pub fn sample_cube<F: Integrand + ?Sized>(
    f: &F,
    cube_index: u64,
    plan: &McubesPlan,
    grid: &VegasGrid,
    rng: &mut RngStream,
) -> Result<CubeSample> {
    check_plan(f, plan, grid)?;
    if cube_index >= plan.m {
        return Err(Error::IndexOutOfRange {
            index: cube_index as usize,
            len: plan.m as usize,
        });
    }
    let mut scratch = Scratch::new(plan.d);
    let mut bin_hits = Vec::with_capacity(plan.p as usize);
    let CubeMoments { s1, s2, .. } = sample_cube_into(
        f,
        cube_index,
        plan,
        grid,
        rng,
        Contribution::WeightedSquare,
        &mut scratch,
        |bins, c| bin_hits.push((bins.to_vec(), c)),
    )?;
    Ok(CubeSample { s1, s2, bin_hits })
}

struct Scratch {
    coords: Vec<u64>,
    y: Vec<f64>,
    x: Vec<f64>,
    bins: Vec<usize>,
}

impl Scratch {
    fn new(d: usize) -> Self {
        Scratch {
            coords: vec![0; d],
            y: vec![0.0; d],
            x: vec![0.0; d],
            bins: vec![0; d],
        }
    }
}

#[allow(clippy::too_many_arguments)]
#[inline]
fn sample_cube_into<F: Integrand + ?Sized>(
    f: &F,
    cube_index: u64,
    plan: &McubesPlan,
    grid: &VegasGrid,
    rng: &mut RngStream,
    contribution: Contribution,
    scratch: &mut Scratch,
    mut hit: impl FnMut(&[usize], f64),
) -> Result<CubeMoments> {
    let g = plan.g as u64;
    let mut rest = cube_index;
    for c in scratch.coords.iter_mut().rev() {
        *c = rest % g;
        rest /= g;
    }
    let inv_g = 1.0 / plan.g as f64;
    let mut m = CubeMoments::default();
    let (mut shift, mut d1, mut d2) = (0.0, 0.0, 0.0);
    for k in 0..plan.p {
        for (y, &c) in scratch.y.iter_mut().zip(&scratch.coords) {
            // Rounding can land exactly on the upper face; keep y below 1.
            *y = ((c as f64 + rng.next_f64()) * inv_g).min(1.0f64.next_down());
        }
        let jac = grid.map_into(&scratch.y, &mut scratch.x, &mut scratch.bins);
        let fx = check_finite(f.eval(&scratch.x), &scratch.x)?;
        let v = fx * jac;
        if k == 0 {
            shift = v;
        }
        m.s1 += v;
        m.s2 += v * v;
        d1 += v - shift;
        d2 += (v - shift) * (v - shift);
        hit(&scratch.bins, contribution.of(fx, jac));
    }
    m.spread = d2 - d1 * d1 / plan.p as f64;
    Ok(m)
}

/// Sample sums of one sub-cube. `spread` is `S2 − S1²/p` evaluated on
/// values shifted by the first sample, which avoids cancellation when the
/// samples are nearly equal.
#[derive(Debug, Clone, Copy, Default)]
struct CubeMoments {
    s1: f64,
    s2: f64,
    spread: f64,
}

/// Per-cube estimate and variance of that estimate from the sample sums.
pub fn update_variance(s1: f64, s2: f64, p: u64, m: u64) -> Result<(f64, f64)> {
    let (est, var, _) = update_variance_counted(s1, s2, p, m)?;
    Ok((est, var))
}

/// As [`update_variance`], also reporting whether the variance was clamped.
pub fn update_variance_counted(s1: f64, s2: f64, p: u64, m: u64) -> Result<(f64, f64, bool)> {
    if p < 2 {
        return Err(Error::invalid(format!("need at least 2 samples per sub-cube, got {p}")));
    }
    Ok(moments_to_estimate(s1, s2 - s1 * s1 / p as f64, p, m))
}

#[inline]
fn moments_to_estimate(s1: f64, spread: f64, p: u64, m: u64) -> (f64, f64, bool) {
    let (pf, mf) = (p as f64, m as f64);
    let est = s1 / (pf * mf);
    let clamped = spread < 0.0;
    let var = spread.max(0.0) / (pf * (pf - 1.0) * mf * mf);
    (est, var, clamped)
}

#[derive(Debug, Clone, PartialEq)]
pub struct McubesIterationResult {
    pub integral: f64,
    pub variance: f64,
    pub contributions: BinContributions,
    /// Sub-cubes whose sample variance came out negative and was clamped.
    pub clamp_events: u64,
}

/// Knobs of one kernel launch that are not part of the plan.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct KernelOptions {
    pub contribution: Contribution,
}

pub fn mcubes_kernel<F: Integrand + ?Sized>(
    f: &F,
    plan: &McubesPlan,
    grid: &VegasGrid,
    exec: &Exec,
    seed: u64,
) -> Result<McubesIterationResult> {
    mcubes_kernel_with(f, plan, grid, exec, seed, KernelOptions::default())
}

pub fn mcubes_kernel_with<F: Integrand + ?Sized>(
    f: &F,
    plan: &McubesPlan,
    grid: &VegasGrid,
    exec: &Exec,
    seed: u64,
    opts: KernelOptions,
) -> Result<McubesIterationResult> {
    check_plan(f, plan, grid)?;
    if plan.p < 2 || plan.s == 0 || plan.group_size == 0 {
        return Err(Error::invalid("plan needs p >= 2, s >= 1 and a positive group size"));
    }
    let n_groups = plan.n_groups();
    let n_threads = plan.n_threads();
    let n_slots = grid.dim() * grid.n_bins();
    let bins = exec.accumulator(n_slots, n_groups);
    let shared_i = AtomicF64::new(0.0);
    let shared_e = AtomicF64::new(0.0);
    let clamps = AtomicU64::new(0);
    let nb = grid.n_bins();

    let partials = exec.parallel_for_groups(n_groups, |group| {
        let mut stream = bins.stream(group)?;
        let mut scratch = Scratch::new(plan.d);
        let first = group as u64 * plan.group_size as u64;
        let last = (first + plan.group_size as u64).min(n_threads);
        let mut thread_i = Vec::with_capacity(plan.group_size);
        let mut thread_e = Vec::with_capacity(plan.group_size);
        let mut group_clamps = 0;
        for t in first..last {
            let mut rng = RngStream::new(seed, t);
            let (mut i_t, mut e_t) = (0.0, 0.0);
            let lo = t * plan.s;
            let hi = (lo + plan.s).min(plan.m);
            for cube in lo..hi {
                let mut bad = Ok(());
                let moments = sample_cube_into(
                    f,
                    cube,
                    plan,
                    grid,
                    &mut rng,
                    opts.contribution,
                    &mut scratch,
                    |ids, c| {
                        for (j, &b) in ids.iter().enumerate() {
                            if let Err(e) = stream.add(j * nb + b, c) {
                                bad = Err(e);
                            }
                        }
                    },
                )?;
                bad?;
                let (est, var, clamped) = moments_to_estimate(moments.s1, moments.spread, plan.p, plan.m);
                i_t += est;
                e_t += var;
                group_clamps += clamped as u64;
            }
            thread_i.push(i_t);
            thread_e.push(e_t);
        }
        let (gi, ge) = (tree_sum(&thread_i), tree_sum(&thread_e));
        clamps.fetch_add(group_clamps, Ordering::Relaxed);
        if !exec.is_deterministic() {
            shared_i.add(gi);
            shared_e.add(ge);
        }
        Ok((gi, ge))
    })?;

    let (integral, variance) = if exec.is_deterministic() {
        let gi: Vec<f64> = partials.iter().map(|p| p.0).collect();
        let ge: Vec<f64> = partials.iter().map(|p| p.1).collect();
        (tree_sum(&gi), tree_sum(&ge))
    } else {
        (shared_i.load(), shared_e.load())
    };
    Ok(McubesIterationResult {
        integral,
        variance: variance.max(0.0),
        contributions: BinContributions::from_flat(grid.dim(), nb, bins.snapshot())?,
        clamp_events: clamps.load(Ordering::Relaxed),
    })
}

fn check_plan<F: Integrand + ?Sized>(f: &F, plan: &McubesPlan, grid: &VegasGrid) -> Result<()> {
    for actual in [f.dim(), grid.dim()] {
        if actual != plan.d {
            return Err(Error::DimensionMismatch {
                expected: plan.d,
                actual,
            });
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct McubesConfig {
    /// Requested samples per iteration.
    pub n: u64,
    pub iterations: usize,
    pub seed: u64,
    pub refine: GridRefineParams,
    /// Refit the grid between iterations. Off keeps the initial uniform grid.
    pub adapt: bool,
    /// Leading iterations that only train the grid and are left out of the
    /// combined estimate. Zero combines every iteration.
    pub warmup: usize,
    pub n_bins: usize,
    pub group_size: usize,
    pub target_groups: usize,
    pub contribution: Contribution,
}

impl Default for McubesConfig {
    fn default() -> Self {
        McubesConfig {
            n: 1_000_000,
            iterations: 10,
            seed: 0,
            refine: GridRefineParams::default(),
            adapt: true,
            warmup: 0,
            n_bins: DEFAULT_BINS,
            group_size: DEFAULT_GROUP_SIZE,
            target_groups: DEFAULT_TARGET_GROUPS,
            contribution: Contribution::WeightedSquare,
        }
    }
}

/// Summary of one iteration as kept by [`run`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationSummary {
    pub iteration: usize,
    pub integral: f64,
    pub variance: f64,
    /// Whether this iteration enters the combined estimate.
    pub combined: bool,
    /// Combined estimate, error and chi²/dof over the combined iterations
    /// so far; a warm-up iteration reports its own value and deviation.
    pub estimate: f64,
    pub errorest: f64,
    pub chi2_per_dof: f64,
    pub clamp_events: u64,
}

impl IterationSummary {
    /// One line of `key=value` pairs.
    pub fn write_record<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(
            out,
            "iteration={} estimate={:.17e} errorest={:.17e} chi2={:.17e}",
            self.iteration, self.estimate, self.errorest, self.chi2_per_dof
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonteCarloResult {
    pub estimate: f64,
    pub errorest: f64,
    pub chi2_per_dof: f64,
    pub plan: McubesPlan,
    pub iterations: Vec<IterationSummary>,
    pub grid: VegasGrid,
}

pub fn run<F: Integrand + ?Sized>(f: &F, cfg: &McubesConfig, exec: &Exec) -> Result<MonteCarloResult> {
    run_with(f, cfg, exec, |_| {})
}

/// [`run`] with a callback after every iteration.
pub fn run_with<F: Integrand + ?Sized>(
    f: &F,
    cfg: &McubesConfig,
    exec: &Exec,
    mut progress: impl FnMut(&IterationSummary),
) -> Result<MonteCarloResult> {
    if cfg.iterations <= cfg.warmup {
        return Err(Error::invalid(format!(
            "iterations ({}) must exceed warm-up iterations ({})",
            cfg.iterations, cfg.warmup
        )));
    }
    cfg.refine.validate()?;
    let d = f.dim();
    let plan = make_plan_with(cfg.n, d, cfg.group_size, cfg.target_groups)?;
    let mut grid = init_grid(d, cfg.n_bins)?;
    let opts = KernelOptions {
        contribution: cfg.contribution,
    };
    let mut integrals = Vec::with_capacity(cfg.iterations);
    let mut variances = Vec::with_capacity(cfg.iterations);
    let mut summaries = Vec::with_capacity(cfg.iterations);
    for it in 0..cfg.iterations {
        let seed = derive_seed(cfg.seed, it as u64);
        let r = mcubes_kernel_with(f, &plan, &grid, exec, seed, opts)?;
        let combined = it >= cfg.warmup;
        let (estimate, errorest, chi2_per_dof) = if combined {
            integrals.push(r.integral);
            variances.push(r.variance);
            combine(&integrals, &variances)
        } else {
            (r.integral, r.variance.sqrt(), 0.0)
        };
        let summary = IterationSummary {
            iteration: it,
            integral: r.integral,
            variance: r.variance,
            combined,
            estimate,
            errorest,
            chi2_per_dof,
            clamp_events: r.clamp_events,
        };
        progress(&summary);
        summaries.push(summary);
        if cfg.adapt && it + 1 < cfg.iterations {
            grid = refine_grid(&grid, &r.contributions, &cfg.refine)?;
        }
    }
    let last = summaries[summaries.len() - 1];
    Ok(MonteCarloResult {
        estimate: last.estimate,
        errorest: last.errorest,
        chi2_per_dof: last.chi2_per_dof,
        plan,
        iterations: summaries,
        grid,
    })
}

/// Inverse-variance weighted mean, its standard deviation and chi²/dof.
pub fn combine(integrals: &[f64], variances: &[f64]) -> (f64, f64, f64) {
    if let ([i], [v]) = (integrals, variances) {
        return (*i, floored_variance(*i, *v).sqrt(), 0.0);
    }
    let w: Vec<f64> = integrals
        .iter()
        .zip(variances)
        .map(|(&i, &v)| 1.0 / floored_variance(i, v))
        .collect();
    let wsum = tree_sum(&w);
    let weighted: Vec<f64> = integrals.iter().zip(&w).map(|(i, w)| i * w).collect();
    let estimate = tree_sum(&weighted) / wsum;
    let errorest = wsum.sqrt().recip();
    let chi2 = if integrals.len() < 2 {
        0.0
    } else {
        let terms: Vec<f64> = integrals
            .iter()
            .zip(&w)
            .map(|(i, w)| (i - estimate) * (i - estimate) * w)
            .collect();
        tree_sum(&terms) / (integrals.len() - 1) as f64
    };
    (estimate, errorest, chi2)
}
