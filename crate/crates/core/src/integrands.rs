//! Benchmark integrand families, their reference integrals over the unit
//! cube, and a quasi-Monte Carlo oracle used to cross-check them.
//!
//! | id | integrand                                          |
//! |----|----------------------------------------------------|
//! | f1 | `cos(Σ i·x_i)`                                     |
//! | f2 | `Π (1/50² + (x_i − ½)²)^-1`                        |
//! | f3 | `(1 + Σ i·x_i)^-(d+1)`                             |
//! | f4 | `exp(−625 Σ (x_i − ½)²)`                           |
//! | f5 | `exp(−10 Σ |x_i − ½|)`                             |
//! | f6 | `exp(Σ (i+4)·x_i)` if every `x_i < (3+i)/10`, else 0 |
//!
//! Axis indices `i` run from 1.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;
use std::sync::{Mutex, OnceLock};

use num_complex::Complex64;
use statrs::function::erf::erf;

use crate::domain::{check_dim, Integrand, MAX_DIM};
use crate::error::{check_finite, Error, Result};
use crate::exec::{tree_sum, Exec};
use crate::sobol::Sobol;

/// Points used for the oracle reference of f3.
pub const F3_ORACLE_POINTS: u64 = 1 << 27;

/// Independent randomisations behind an oracle error bound.
pub const ORACLE_SHIFTS: usize = 16;

/// Two-sided 99.9% Student-t quantile with `ORACLE_SHIFTS - 1` degrees of
/// freedom.
const ORACLE_T_QUANTILE: f64 = 4.073;

const ORACLE_BLOCK: u64 = 1 << 16;

const ORACLE_SEED: u64 = 0x5eed_0f0c_ac1e_5eed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Family {
    F1 = 1,
    F2,
    F3,
    F4,
    F5,
    F6,
}

impl Family {
    pub const ALL: [Family; 6] = [Family::F1, Family::F2, Family::F3, Family::F4, Family::F5, Family::F6];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Result<Self> {
        Family::ALL
            .get(i.wrapping_sub(1))
            .copied()
            .ok_or_else(|| Error::UnknownIntegrand(format!("f{i}")))
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "f{}", self.index())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        s.strip_prefix('f')
            .and_then(|n| n.parse::<usize>().ok())
            .and_then(|n| Family::from_index(n).ok())
            .ok_or_else(|| Error::UnknownIntegrand(s.to_string()))
    }
}

/// One benchmark integrand at a fixed dimension.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BenchmarkId {
    pub family: Family,
    pub d: usize,
}

impl BenchmarkId {
    pub fn new(family: Family, d: usize) -> Result<Self> {
        check_dim(d)?;
        Ok(BenchmarkId { family, d })
    }
}

impl fmt::Display for BenchmarkId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-d{}", self.family, self.d)
    }
}

/// Evaluates benchmark `id` at `x`.
#[inline]
pub fn eval_benchmark(id: BenchmarkId, x: &[f64]) -> f64 {
    match id.family {
        Family::F1 => {
            let s: f64 = x.iter().enumerate().map(|(i, v)| (i + 1) as f64 * v).sum();
            s.cos()
        }
        Family::F2 => {
            const A2: f64 = 1.0 / 2500.0;
            x.iter().map(|v| 1.0 / (A2 + (v - 0.5) * (v - 0.5))).product()
        }
        Family::F3 => {
            let s: f64 = x.iter().enumerate().map(|(i, v)| (i + 1) as f64 * v).sum();
            (1.0 + s).powi(-(id.d as i32) - 1)
        }
        Family::F4 => {
            let s: f64 = x.iter().map(|v| (v - 0.5) * (v - 0.5)).sum();
            (-625.0 * s).exp()
        }
        Family::F5 => {
            let s: f64 = x.iter().map(|v| (v - 0.5).abs()).sum();
            (-10.0 * s).exp()
        }
        Family::F6 => {
            let mut s = 0.0;
            for (i, v) in x.iter().enumerate() {
                let axis = (i + 1) as f64;
                if *v >= (3.0 + axis) / 10.0 {
                    return 0.0;
                }
                s += (axis + 4.0) * v;
            }
            s.exp()
        }
    }
}

/// Benchmark integrand as an [`Integrand`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Benchmark(pub BenchmarkId);

impl Benchmark {
    pub fn new(family: Family, d: usize) -> Result<Self> {
        Ok(Benchmark(BenchmarkId::new(family, d)?))
    }
}

impl Integrand for Benchmark {
    fn dim(&self) -> usize {
        self.0.d
    }

    #[inline]
    fn eval(&self, x: &[f64]) -> f64 {
        eval_benchmark(self.0, x)
    }
}

/// `f(x) = Σ x_j`, integral `d/2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SumIntegrand {
    d: usize,
}

pub fn sum_integrand(d: usize) -> Result<SumIntegrand> {
    check_dim(d)?;
    Ok(SumIntegrand { d })
}

impl SumIntegrand {
    pub fn exact(&self) -> f64 {
        self.d as f64 / 2.0
    }
}

impl Integrand for SumIntegrand {
    fn dim(&self) -> usize {
        self.d
    }

    #[inline]
    fn eval(&self, x: &[f64]) -> f64 {
        x.iter().sum()
    }
}

/// A named integrand from the registry: `"f1"`..`"f6"` or `"sum"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Named {
    Benchmark(Benchmark),
    Sum(SumIntegrand),
}

impl Named {
    pub fn name(&self) -> String {
        match self {
            Named::Benchmark(b) => b.0.family.to_string(),
            Named::Sum(_) => "sum".to_string(),
        }
    }

    pub fn reference(&self) -> Result<ReferenceValue> {
        match self {
            Named::Benchmark(b) => reference_value(b.0),
            Named::Sum(s) => Ok(ReferenceValue {
                value: s.exact(),
                method: ReferenceMethod::ClosedForm,
                claimed_abs_error: 0.0,
            }),
        }
    }
}

impl Integrand for Named {
    fn dim(&self) -> usize {
        match self {
            Named::Benchmark(b) => b.dim(),
            Named::Sum(s) => s.dim(),
        }
    }

    #[inline]
    fn eval(&self, x: &[f64]) -> f64 {
        match self {
            Named::Benchmark(b) => b.eval(x),
            Named::Sum(s) => s.eval(x),
        }
    }
}

/// Looks up a registry id at dimension `d`.
pub fn lookup(name: &str, d: usize) -> Result<Named> {
    if name == "sum" {
        return Ok(Named::Sum(sum_integrand(d)?));
    }
    let family: Family = name.parse()?;
    Ok(Named::Benchmark(Benchmark::new(family, d)?))
}

/// Registry ids accepted by [`lookup`].
pub const REGISTRY: [&str; 7] = ["f1", "f2", "f3", "f4", "f5", "f6", "sum"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReferenceMethod {
    /// Product of one-dimensional closed forms.
    SeparableAnalytic,
    ClosedForm,
    /// Randomised Sobol' average with a replicate-based bound.
    LowDiscrepancyOracle,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceValue {
    pub value: f64,
    pub method: ReferenceMethod,
    pub claimed_abs_error: f64,
}

/// Upper limit of integration on axis `i` (1-based) for f6.
fn f6_cutoff(i: usize) -> f64 {
    ((3 + i) as f64 / 10.0).min(1.0)
}

/// Reference integral of benchmark `id` over the unit cube.
///
/// f2, f4, f5, f6 are separable; f1 is the real part of a product of complex
/// exponential integrals; f3 comes from the oracle with `2^27` points (cached
/// per dimension).
pub fn reference_value(id: BenchmarkId) -> Result<ReferenceValue> {
    check_dim(id.d)?;
    let d = id.d;
    let separable = |per_axis: &dyn Fn(usize) -> f64| {
        let value: f64 = (1..=d).map(per_axis).product();
        ReferenceValue {
            value,
            method: ReferenceMethod::SeparableAnalytic,
            claimed_abs_error: 4.0 * d as f64 * f64::EPSILON * value.abs(),
        }
    };
    Ok(match id.family {
        Family::F1 => {
            let (value, magnitude) = f1_closed_form(d);
            ReferenceValue {
                value,
                method: ReferenceMethod::ClosedForm,
                claimed_abs_error: 8.0 * d as f64 * f64::EPSILON * magnitude,
            }
        }
        // ∫ dx / (a² + (x - ½)²) = (2/a)·atan(1/(2a)), a = 1/50.
        Family::F2 => separable(&|_| 100.0 * 25.0f64.atan()),
        Family::F3 => f3_reference(d)?,
        // ∫ exp(-625 (x - ½)²) dx = √π·erf(12.5) / 25.
        Family::F4 => separable(&|_| PI.sqrt() * erf(12.5) / 25.0),
        // 2 ∫_0^½ exp(-10u) du = (1 - e^-5) / 5.
        Family::F5 => separable(&|_| (1.0 - (-5.0f64).exp()) / 5.0),
        // ∫_0^c exp(a x) dx = (e^{a c} - 1) / a, a = i + 4.
        Family::F6 => separable(&|i| {
            let a = (i + 4) as f64;
            (a * f6_cutoff(i)).exp_m1() / a
        }),
    })
}

/// `Re Π_k (e^{ik} - 1)/(ik)` and the magnitude of the product.
pub fn f1_closed_form(d: usize) -> (f64, f64) {
    let mut prod = Complex64::new(1.0, 0.0);
    for k in 1..=d {
        let k = k as f64;
        let num = Complex64::new(k.cos() - 1.0, k.sin());
        prod *= num / Complex64::new(0.0, k);
    }
    (prod.re, prod.norm())
}

/// Closed form of f3 by repeated integration:
/// `1/(d! Π a_i) · Σ_{S ⊆ axes} (-1)^{|S|} / (1 + Σ_{i∈S} a_i)` with `a_i = i`.
///
/// The alternating sum cancels heavily as `d` grows; it is used only as a
/// cross-check for small `d`.
pub fn f3_closed_form(d: usize) -> f64 {
    let mut terms = Vec::with_capacity(1 << d);
    for mask in 0u32..1 << d {
        let s: f64 = (0..d).filter(|j| mask >> j & 1 == 1).map(|j| (j + 1) as f64).sum();
        let sign = if mask.count_ones() % 2 == 0 { 1.0 } else { -1.0 };
        terms.push(sign / (1.0 + s));
    }
    let denom: f64 = (1..=d).map(|i| (i * i) as f64).product();
    tree_sum(&terms) / denom
}

fn f3_reference(d: usize) -> Result<ReferenceValue> {
    static CACHE: OnceLock<Mutex<HashMap<usize, ReferenceValue>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(v) = cache.lock().unwrap_or_else(|p| p.into_inner()).get(&d) {
        return Ok(*v);
    }
    let f = Benchmark::new(Family::F3, d)?;
    let est = oracle_integral(&f, F3_ORACLE_POINTS, &Exec::default())?;
    let v = ReferenceValue {
        value: est.value,
        method: ReferenceMethod::LowDiscrepancyOracle,
        claimed_abs_error: est.abs_error_bound,
    };
    cache.lock().unwrap_or_else(|p| p.into_inner()).insert(d, v);
    Ok(v)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleEstimate {
    pub value: f64,
    pub abs_error_bound: f64,
    /// Points actually evaluated (a multiple of the shift count).
    pub points: u64,
}

/// Randomised quasi-Monte Carlo integral of `f` over the unit cube.
///
/// `n_points` are spread over [`ORACLE_SHIFTS`] digital shifts of the same
/// Sobol' prefix. The value is the mean of the replicate averages and the
/// bound is a 99.9% Student-t half-width from their spread. Shifts come from a
/// fixed seed, so the result is reproducible.
pub fn oracle_integral<F: Integrand + ?Sized>(f: &F, n_points: u64, exec: &Exec) -> Result<OracleEstimate> {
    let d = f.dim();
    check_dim(d)?;
    if n_points < 1 << 16 {
        return Err(Error::invalid(format!(
            "oracle needs at least 2^16 points, got {n_points}"
        )));
    }
    let per_shift = n_points / ORACLE_SHIFTS as u64;
    let blocks = per_shift.div_ceil(ORACLE_BLOCK);
    let sobol = Sobol::new(d);

    let mut rng = crate::rng::SplitMix64::new(ORACLE_SEED);
    let shifts: Vec<[u32; MAX_DIM]> = (0..ORACLE_SHIFTS)
        .map(|_| std::array::from_fn(|_| (rng.next_u64() >> 32) as u32))
        .collect();

    let n_groups = ORACLE_SHIFTS * blocks as usize;
    let partial = exec.parallel_for_groups(n_groups, |g| {
        let shift = &shifts[g / blocks as usize];
        let block = (g % blocks as usize) as u64;
        let start = block * ORACLE_BLOCK;
        let end = (start + ORACLE_BLOCK).min(per_shift);
        let mut it = sobol.points_from(start);
        let mut x = [0.0; MAX_DIM];
        let mut vals = Vec::with_capacity((end - start) as usize);
        for _ in start..end {
            it.next_shifted(shift, &mut x[..d]);
            vals.push(check_finite(f.eval(&x[..d]), &x[..d])?);
        }
        Ok(tree_sum(&vals))
    })?;

    let means: Vec<f64> = partial
        .chunks(blocks as usize)
        .map(|c| tree_sum(c) / per_shift as f64)
        .collect();
    let r = ORACLE_SHIFTS as f64;
    let value = tree_sum(&means) / r;
    let var = means.iter().map(|m| (m - value).powi(2)).sum::<f64>() / (r - 1.0);
    Ok(OracleEstimate {
        value,
        abs_error_bound: ORACLE_T_QUANTILE * (var / r).sqrt(),
        points: per_shift * ORACLE_SHIFTS as u64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::FnIntegrand;

    fn id(family: Family, d: usize) -> BenchmarkId {
        BenchmarkId::new(family, d).unwrap()
    }

    #[test]
    fn eval_examples() {
        assert_eq!(eval_benchmark(id(Family::F4, 5), &[0.5; 5]), 1.0);
        assert_eq!(eval_benchmark(id(Family::F1, 3), &[0.0; 3]), 1.0);
        assert_eq!(eval_benchmark(id(Family::F6, 5), &[0.5, 0.5, 0.7, 0.5, 0.5]), 0.0);
        assert!((eval_benchmark(id(Family::F2, 1), &[0.5]) - 2500.0).abs() < 1e-9);
        assert_eq!(eval_benchmark(id(Family::F3, 2), &[0.0, 0.0]), 1.0);
        assert_eq!(eval_benchmark(id(Family::F5, 2), &[0.5, 0.5]), 1.0);
    }

    #[test]
    fn f6_support() {
        let f = id(Family::F6, 5);
        // Just below every cutoff: positive.
        assert!(eval_benchmark(f, &[0.39, 0.49, 0.59, 0.69, 0.79]) > 0.0);
        for axis in 0..5 {
            let mut x = [0.1; 5];
            x[axis] = (4 + axis) as f64 / 10.0;
            assert_eq!(eval_benchmark(f, &x), 0.0, "axis {axis}");
        }
        // Cutoffs at or above 1 never bind.
        assert!(eval_benchmark(id(Family::F6, 8), &[0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.999, 0.999]) > 0.0);
    }

    #[test]
    fn registry() {
        for name in REGISTRY {
            assert_eq!(lookup(name, 4).unwrap().name(), name);
        }
        assert!(matches!(lookup("f7", 3), Err(Error::UnknownIntegrand(_))));
        assert!(matches!(lookup("g1", 3), Err(Error::UnknownIntegrand(_))));
        assert!(matches!(lookup("f1", 13), Err(Error::UnsupportedDimension(13))));
    }

    #[test]
    fn sum_integrand_examples() {
        assert_eq!(sum_integrand(5).unwrap().exact(), 2.5);
        assert_eq!(sum_integrand(8).unwrap().exact(), 4.0);
        assert_eq!(sum_integrand(3).unwrap().eval(&[0.0; 3]), 0.0);
    }

    #[test]
    fn separable_reference_examples() {
        let r = reference_value(id(Family::F2, 1)).unwrap();
        // 100·atan(25), from (2/a)·atan(1/(2a)) with a = 1/50.
        assert!((r.value - 153.081_763_967).abs() < 1e-6);
        assert_eq!(r.method, ReferenceMethod::SeparableAnalytic);

        let r = reference_value(id(Family::F5, 5)).unwrap();
        assert!((r.value - 3.0936e-4).abs() < 1e-8);

        let r = reference_value(id(Family::F4, 5)).unwrap();
        assert!((r.value - 1.7915e-6).abs() < 1e-9);

        let r = reference_value(id(Family::F6, 5)).unwrap();
        let expected: f64 = (1..=5)
            .map(|i| {
                let a = (i + 4) as f64;
                ((a * (3 + i) as f64 / 10.0).exp() - 1.0) / a
            })
            .product();
        assert!((r.value - expected).abs() <= 1e-12 * expected);
    }

    /// Independent 1-D check of the separable factors with composite Simpson.
    #[test]
    fn one_dimensional_factors_by_quadrature() {
        fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
            let h = (b - a) / n as f64;
            let mut s = f(a) + f(b);
            for k in 1..n {
                s += f(a + k as f64 * h) * if k % 2 == 1 { 4.0 } else { 2.0 };
            }
            s * h / 3.0
        }
        let n = 200_000;
        for family in [Family::F2, Family::F4] {
            let q = simpson(|x| eval_benchmark(id(family, 1), &[x]), 0.0, 1.0, n);
            let r = reference_value(id(family, 1)).unwrap().value;
            assert!((q - r).abs() <= 1e-9 * r, "{family}: {q} vs {r}");
        }
        // f5 has a kink at ½; integrate the halves separately.
        let f5 = |x: f64| eval_benchmark(id(Family::F5, 1), &[x]);
        let q = simpson(f5, 0.0, 0.5, n) + simpson(f5, 0.5, 1.0, n);
        assert!((q - reference_value(id(Family::F5, 1)).unwrap().value).abs() <= 1e-12);
    }

    #[test]
    fn f1_closed_form_small_d() {
        // d = 1: sin(1); d = 2: ∫∫cos(x + 2y) = (2cos1 - cos2 - cos3 ... ) via direct formula.
        assert!((f1_closed_form(1).0 - 1.0f64.sin()).abs() < 1e-15);
        let direct = (-(3.0f64).cos() + (1.0f64).cos() + (2.0f64).cos() - 1.0) / 2.0;
        assert!((f1_closed_form(2).0 - direct).abs() < 1e-15);
    }

    #[test]
    fn f3_closed_form_small_d() {
        assert!((f3_closed_form(1) - 0.5).abs() < 1e-15);
        // d = 2: ∫∫ (1 + x + 2y)^-3 = 1/(2·1·2)·(1 - 1/2 - 1/3 + 1/4) = 5/48.
        assert!((f3_closed_form(2) - 5.0 / 48.0).abs() < 1e-15);
    }

    #[test]
    fn oracle_on_constant_and_sum() {
        let exec = Exec::default();
        let one = FnIntegrand::new(4, |_: &[f64]| 1.0);
        let est = oracle_integral(&one, 1 << 16, &exec).unwrap();
        assert!((est.value - 1.0).abs() < 1e-15);
        assert!(est.abs_error_bound < 1e-15);

        let s = sum_integrand(5).unwrap();
        let est = oracle_integral(&s, 1 << 20, &exec).unwrap();
        assert!((est.value - 2.5).abs() <= est.abs_error_bound, "{est:?}");
        assert!(oracle_integral(&s, 1000, &exec).is_err());
    }

    #[test]
    fn oracle_is_reproducible_across_workers() {
        let f = Benchmark::new(Family::F1, 3).unwrap();
        let a = oracle_integral(&f, 1 << 18, &Exec::serial()).unwrap();
        let b = oracle_integral(&f, 1 << 18, &Exec::new(crate::exec::ExecConfig::with_workers(4))).unwrap();
        assert_eq!(a.value.to_bits(), b.value.to_bits());
        assert_eq!(a.abs_error_bound.to_bits(), b.abs_error_bound.to_bits());
    }
}
