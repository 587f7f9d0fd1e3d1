//! Deterministic adaptive cubature.
//!
//! [`pagani_kernel`] evaluates a list of regions, one work group per region,
//! producing an integral, an error estimate and a split axis for each.
//! [`refine`] drives it: start from a uniform split, bisect the regions that
//! have not met their share of the error budget, repeat until the summed
//! error meets the relative tolerance.
//!
//! The driver keeps every leaf in memory and has no region eviction; it is a
//! reduced form of the full algorithm, enough to run the kernel to a target
//! accuracy.

use std::cell::RefCell;

use crate::domain::{
    check_dim, region_volume, splits_for_count, uniform_split, Integrand, Region, RegionEstimates, RegionList,
    RegionRef, DEFAULT_REGION_CAP,
};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::quadrature::{apply_rules_strided, build_rule, RuleEstimates, RuleScratch, RuleTable};

/// How the four null-rule values are turned into an error estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ErrorMode {
    /// Largest null-rule magnitude.
    #[default]
    NullMagnitude,
    /// Largest difference between any two embedded-rule estimates.
    PairwiseDifference,
}

/// Which leaves the driver bisects each iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SplitPolicy {
    /// Leaves whose error exceeds their share of the tolerance.
    #[default]
    Active,
    /// Every leaf.
    All,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PaganiConfig {
    pub rel_tol: f64,
    pub max_iterations: usize,
    /// Lanes of the strided evaluation schedule inside one region.
    pub group_size: usize,
    pub region_cap: usize,
    /// Lower bound on the number of regions of the initial uniform split.
    pub initial_regions: usize,
    /// Error estimates are clamped from below to `rel_floor * |integral|`.
    pub rel_floor: f64,
    pub error_mode: ErrorMode,
    pub split_policy: SplitPolicy,
}

impl Default for PaganiConfig {
    fn default() -> Self {
        PaganiConfig {
            rel_tol: 1e-3,
            max_iterations: 60,
            group_size: 64,
            region_cap: DEFAULT_REGION_CAP,
            initial_regions: 1024,
            rel_floor: 1e-15,
            error_mode: ErrorMode::NullMagnitude,
            split_policy: SplitPolicy::Active,
        }
    }
}

impl PaganiConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rel_tol > 0.0) {
            return Err(Error::invalid(format!(
                "rel_tol must be positive, got {}",
                self.rel_tol
            )));
        }
        if self.group_size == 0 {
            return Err(Error::invalid("group_size must be at least 1"));
        }
        if self.max_iterations == 0 {
            return Err(Error::invalid("max_iterations must be at least 1"));
        }
        if self.initial_regions == 0 || self.initial_regions > self.region_cap {
            return Err(Error::invalid(format!(
                "initial_regions {} must lie in 1..={}",
                self.initial_regions, self.region_cap
            )));
        }
        if !(self.rel_floor >= 0.0) {
            return Err(Error::invalid("rel_floor must be nonnegative"));
        }
        Ok(())
    }
}

/// Everything the kernel learns about one region.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionRecord {
    pub region: Region,
    pub volume: f64,
    pub integral: f64,
    pub error: f64,
    pub split_axis: usize,
}

/// Largest null-rule magnitude, clamped below at `rel_floor * |values[0]|`.
pub fn find_max_err(est: &RuleEstimates, rel_floor: f64) -> Result<f64> {
    find_max_err_with(est, rel_floor, ErrorMode::NullMagnitude)
}

pub fn find_max_err_with(est: &RuleEstimates, rel_floor: f64, mode: ErrorMode) -> Result<f64> {
    if let Some(&bad) = est.values.iter().find(|v| !v.is_finite()) {
        return Err(Error::NonFiniteEvaluation {
            value: bad,
            point: Vec::new(),
            region: None,
        });
    }
    let nulls = &est.values[1..];
    let raw = match mode {
        ErrorMode::NullMagnitude => nulls.iter().fold(0.0f64, |m, v| m.max(v.abs())),
        ErrorMode::PairwiseDifference => {
            // Embedded estimate k is values[0] - values[k]; pairwise
            // differences of estimates are differences of null values.
            let mut m = 0.0f64;
            for (i, a) in nulls.iter().enumerate() {
                for b in &nulls[i + 1..] {
                    m = m.max((a - b).abs());
                }
            }
            m
        }
    };
    Ok(raw.max(rel_floor * est.values[0].abs()))
}

/// Axis with the largest fourth difference of the axial evaluations; ties
/// (within rounding) go to the lowest axis.
///
/// For axis `i` the indicator is
/// `|f(-λ2) + f(+λ2) - r·(f(-λ3) + f(+λ3)) - c·f(0)|` with `[r, c]` taken
/// from the rule's split weights. It vanishes for integrands that are at most
/// quadratic along the axis.
pub fn compute_split_axis(stored_evals: &[f64], rule: &RuleTable) -> Result<usize> {
    if stored_evals.len() != rule.f_eval() {
        return Err(Error::DimensionMismatch {
            expected: rule.f_eval(),
            actual: stored_evals.len(),
        });
    }
    if let Some(&bad) = stored_evals.iter().find(|v| !v.is_finite()) {
        return Err(Error::NonFiniteEvaluation {
            value: bad,
            point: Vec::new(),
            region: None,
        });
    }
    Ok(split_axis_signal(stored_evals, rule).unwrap_or(0))
}

/// Axis with the largest fourth difference, or `None` when every axis is
/// flat to within rounding.
fn split_axis_signal(evals: &[f64], rule: &RuleTable) -> Option<usize> {
    let [ratio, centre] = rule.split_weights();
    let f0 = evals[0];
    let mut best = 0;
    let mut best_diff = 0.0f64;
    let mut best_noise = 0.0f64;
    for axis in 0..rule.dim() {
        let [m2, p2, m3, p3] = rule.axial_points(axis).map(|i| evals[i]);
        let diff = (m2 + p2 - ratio * (m3 + p3) - centre * f0).abs();
        let scale = m2.abs() + p2.abs() + ratio * (m3.abs() + p3.abs()) + centre * f0.abs();
        let noise = 8.0 * f64::EPSILON * scale;
        let diff = if diff <= noise { 0.0 } else { diff };
        if diff > best_diff + best_noise.max(noise) {
            best = axis;
            best_diff = diff;
            best_noise = noise;
        }
    }
    (best_diff > 0.0).then_some(best)
}

/// Widest axis of `region`, lowest index on ties.
fn widest_axis(region: RegionRef<'_>) -> usize {
    let mut best = 0;
    for (j, &len) in region.length.iter().enumerate() {
        if len > region.length[best] {
            best = j;
        }
    }
    best
}

thread_local! {
    static SCRATCH: RefCell<RuleScratch> = RefCell::new(RuleScratch::default());
}

/// Integral, error and split axis of one region.
fn evaluate_region<F: Integrand + ?Sized>(
    f: &F,
    regions: &RegionList,
    index: usize,
    rule: &RuleTable,
    cfg: &PaganiConfig,
) -> Result<(f64, f64, usize)> {
    SCRATCH.with(|cell| {
        let mut scratch = cell.borrow_mut();
        let est =
            apply_rules_strided(f, regions.get(index), rule, cfg.group_size, &mut scratch).map_err(|e| match e {
                Error::NonFiniteEvaluation { value, point, .. } => Error::NonFiniteEvaluation {
                    value,
                    point,
                    region: Some(index),
                },
                other => other,
            })?;
        let err = find_max_err_with(&est, cfg.rel_floor, cfg.error_mode)?;
        // With no axial signal, e.g. when the centre sits in a zero region
        // of a discontinuous integrand, halve the widest edge instead.
        let axis = split_axis_signal(&scratch.evals, rule).unwrap_or_else(|| widest_axis(regions.get(index)));
        Ok((est.values[0], err, axis))
    })
}

/// Evaluates every region: one work group per region, strided evaluation
/// inside the group.
pub fn pagani_kernel<F: Integrand + ?Sized>(
    f: &F,
    regions: &RegionList,
    rule: &RuleTable,
    exec: &Exec,
    cfg: &PaganiConfig,
) -> Result<RegionEstimates> {
    if regions.is_empty() {
        return Err(Error::invalid("region list is empty"));
    }
    for actual in [regions.dim(), f.dim()] {
        if actual != rule.dim() {
            return Err(Error::DimensionMismatch {
                expected: rule.dim(),
                actual,
            });
        }
    }
    if cfg.group_size == 0 {
        return Err(Error::invalid("group_size must be at least 1"));
    }
    let per_region = exec.parallel_for_groups(regions.len(), |i| evaluate_region(f, regions, i, rule, cfg))?;
    let mut out = RegionEstimates::with_capacity(per_region.len());
    for (i, e, k) in per_region {
        out.push(i, e, k);
    }
    Ok(out)
}

/// Evaluates one region and returns the full record.
pub fn evaluate_record<F: Integrand + ?Sized>(
    f: &F,
    region: &Region,
    rule: &RuleTable,
    cfg: &PaganiConfig,
) -> Result<RegionRecord> {
    let list = RegionList::from_regions(region.dim(), [region])?;
    let (integral, error, split_axis) = evaluate_region(f, &list, 0, rule, cfg)?;
    Ok(RegionRecord {
        region: region.clone(),
        volume: region_volume(region.as_ref()),
        integral,
        error,
        split_axis,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub n_regions: usize,
    pub estimate: f64,
    pub errorest: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    Converged,
    MaxIterations,
    RegionCap,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntegralResult {
    pub estimate: f64,
    pub errorest: f64,
    pub iterations: usize,
    /// Region evaluations over the whole run.
    pub regions_processed: usize,
    pub converged: bool,
    pub termination: Termination,
    pub history: Vec<IterationRecord>,
}

/// Integrates `f` over the unit cube to `cfg.rel_tol`.
pub fn refine<F: Integrand + ?Sized>(f: &F, cfg: &PaganiConfig, exec: &Exec) -> Result<IntegralResult> {
    refine_with(f, cfg, exec, |_| {})
}

/// [`refine`] with a callback invoked after every iteration.
pub fn refine_with<F, P>(f: &F, cfg: &PaganiConfig, exec: &Exec, mut progress: P) -> Result<IntegralResult>
where
    F: Integrand + ?Sized,
    P: FnMut(&IterationRecord),
{
    cfg.validate()?;
    let d = f.dim();
    check_dim(d)?;
    let rule = build_rule(d)?;

    let mut g = splits_for_count(d, cfg.initial_regions);
    while g > 1 && (g as u128).pow(d as u32) > cfg.region_cap as u128 {
        g -= 1;
    }
    let mut leaves = uniform_split(d, g, cfg.region_cap)?;
    let mut est = pagani_kernel(f, &leaves, &rule, exec, cfg)?;
    let mut regions_processed = leaves.len();
    let mut history = Vec::new();

    let termination = loop {
        let estimate = exec.reduce(&est.integrals);
        let errorest = exec.reduce(&est.errors);
        let record = IterationRecord {
            iteration: history.len(),
            n_regions: leaves.len(),
            estimate,
            errorest,
        };
        progress(&record);
        history.push(record);

        if errorest <= cfg.rel_tol * estimate.abs() {
            break Termination::Converged;
        }
        if history.len() >= cfg.max_iterations {
            break Termination::MaxIterations;
        }

        let mut active = select_active(&leaves, &est, cfg, estimate);
        if !active.iter().any(|&a| a) {
            active.iter_mut().for_each(|a| *a = true);
        }
        let n_active = active.iter().filter(|&&a| a).count();
        if leaves.len() + n_active > cfg.region_cap {
            break Termination::RegionCap;
        }

        // Split active leaves, drop the parents in place and append the
        // children, so only one full copy of the leaf list is ever alive.
        let mut children = RegionList::with_capacity(d, 2 * n_active)?;
        for (i, _) in active.iter().enumerate().filter(|(_, &a)| a) {
            children.push_halves(&leaves, i, est.split_axes[i]);
        }
        let child_est = pagani_kernel(f, &children, &rule, exec, cfg)?;
        regions_processed += children.len();
        active.iter_mut().for_each(|a| *a = !*a);
        leaves.retain_mask(&active);
        est.retain_mask(&active);
        leaves.append(children);
        est.append(child_est);
    };

    let last = *history.last().expect("at least one iteration");
    Ok(IntegralResult {
        estimate: last.estimate,
        errorest: last.errorest,
        iterations: history.len(),
        regions_processed,
        converged: termination == Termination::Converged,
        termination,
        history,
    })
}

/// Marks leaves still above their share of the error budget.
///
/// A leaf is done when its error is within half the tolerance of either its
/// own integral or its volume share of the global estimate. For a
/// nonnegative integrand the done leaves then hold at most `rel_tol` of the
/// total.
fn select_active(leaves: &RegionList, est: &RegionEstimates, cfg: &PaganiConfig, estimate: f64) -> Vec<bool> {
    match cfg.split_policy {
        SplitPolicy::All => vec![true; leaves.len()],
        SplitPolicy::Active => {
            let half_tol = 0.5 * cfg.rel_tol;
            let global = estimate.abs();
            (0..leaves.len())
                .map(|i| {
                    let budget = half_tol * est.integrals[i].abs().max(global * leaves.volume(i));
                    est.errors[i] > budget
                })
                .collect()
        }
    }
}
