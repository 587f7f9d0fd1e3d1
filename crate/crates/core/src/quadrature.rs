//! Fully symmetric degree-7 cubature over a box with four embedded
//! lower-degree rules stored as null rules.
//!
//! The point set has five orbits on `[-1, 1]^d`:
//!
//! | orbit | points                                  | count        |
//! |-------|-----------------------------------------|--------------|
//! | 0     | centre                                  | 1            |
//! | 1     | `±λ2·e_i`                               | 2d           |
//! | 2     | `±λ3·e_i`                               | 2d           |
//! | 3     | `±λ4·e_i ± λ4·e_j`, `i < j`             | 2d(d-1)      |
//! | 4     | `(±λ5, …, ±λ5)`                         | 2^d          |
//!
//! with `λ2² = 9/70`, `λ3² = λ4² = 9/10`, `λ5² = 9/19`. Orbit weights are
//! obtained by solving the moment equations of each rule, so one code path
//! covers every supported dimension.
//!
//! Weights are normalised to the unit-volume measure: rule 0 weights sum to 1
//! and a rule value is `volume * Σ w_i f(x_i)`. Null rule `k` carries the
//! weights `w_0 - w_k` of rule 0 minus embedded rule `k`, so its value is
//! directly the disagreement between the two.

use std::io::{self, Write};

use nalgebra::{DMatrix, DVector};

use crate::domain::{check_dim, region_volume, Integrand, Point, RegionRef, MAX_DIM};
use crate::error::{check_finite, Error, Result};
use crate::exec::tree_sum;

pub const N_RULES: usize = 5;

const LAMBDA2_SQ: f64 = 9.0 / 70.0;
const LAMBDA3_SQ: f64 = 9.0 / 10.0;
const LAMBDA4_SQ: f64 = 9.0 / 10.0;
const LAMBDA5_SQ: f64 = 9.0 / 19.0;

/// Largest acceptable residual of a solved moment equation, relative to the
/// magnitude of its terms.
const MOMENT_RESIDUAL: f64 = 1e-13;

/// Polynomial degree of rule 0.
pub const RULE_DEGREE: usize = 7;

/// Embedded rule `k` (1..=4): exactness degree and the orbits it uses.
const EMBEDDED: [(usize, &[usize]); 4] = [
    (5, &[0, 1, 2, 3]),
    (5, &[0, 1, 2, 4]),
    (5, &[0, 1, 3, 4]),
    (5, &[1, 2, 3, 4]),
];

/// Even exponent patterns of the fully symmetric moment equations, up to
/// total degree 7. Odd moments vanish by symmetry.
const MOMENT_PATTERNS: [&[u32]; 7] = [&[], &[2], &[4], &[2, 2], &[6], &[4, 2], &[2, 2, 2]];

/// Generators, weights and split-axis coefficients for one dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct RuleTable {
    d: usize,
    f_eval: usize,
    /// `f_eval × d`, row-major, offsets in `[-1, 1]`.
    generators: Vec<f64>,
    /// Orbit of each point.
    orbit: Vec<u8>,
    /// Rule 0 followed by the four null rules, each of length `f_eval`.
    weights: [Vec<f64>; N_RULES],
    /// Polynomial degree annihilated by null rule `k + 1`.
    null_degrees: [usize; 4],
    /// Fourth-difference coefficients: `[ratio, centre]`.
    split_weights: [f64; 2],
    /// Per axis: indices of the points at `-λ2, +λ2, -λ3, +λ3`.
    axial: Vec<[usize; 4]>,
}

/// The five rule values of one region, already scaled by its volume.
/// `values[0]` is the integral estimate; `values[1..]` are null-rule values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RuleEstimates {
    pub values: [f64; N_RULES],
}

impl RuleEstimates {
    pub fn integral(&self) -> f64 {
        self.values[0]
    }
}

/// Number of evaluation points of the degree-7 rule in `d` dimensions.
pub fn f_eval_count(d: usize) -> usize {
    (1 << d) + 2 * d * d + 2 * d + 1
}

/// Builds the rule table for dimension `d`.
pub fn build_rule(d: usize) -> Result<RuleTable> {
    check_dim(d)?;
    let l2 = LAMBDA2_SQ.sqrt();
    let l3 = LAMBDA3_SQ.sqrt();
    let l4 = LAMBDA4_SQ.sqrt();
    let l5 = LAMBDA5_SQ.sqrt();

    let f_eval = f_eval_count(d);
    let mut generators = Vec::with_capacity(f_eval * d);
    let mut orbit = Vec::with_capacity(f_eval);
    let mut push = |point: &[f64], o: u8, generators: &mut Vec<f64>| {
        generators.extend_from_slice(point);
        orbit.push(o);
    };

    let mut p = vec![0.0; d];
    push(&p, 0, &mut generators);
    let mut axial = vec![[0usize; 4]; d];
    for (o, lambda, slot) in [(1u8, l2, 0usize), (2u8, l3, 2usize)] {
        for (i, ax) in axial.iter_mut().enumerate() {
            for (s, sign) in [-1.0, 1.0].into_iter().enumerate() {
                p.fill(0.0);
                p[i] = sign * lambda;
                ax[slot + s] = generators.len() / d;
                push(&p, o, &mut generators);
            }
        }
    }
    for i in 0..d {
        for j in i + 1..d {
            for (si, sj) in [(-1.0, -1.0), (-1.0, 1.0), (1.0, -1.0), (1.0, 1.0)] {
                p.fill(0.0);
                p[i] = si * l4;
                p[j] = sj * l4;
                push(&p, 3, &mut generators);
            }
        }
    }
    for mask in 0..1usize << d {
        for (j, c) in p.iter_mut().enumerate() {
            *c = if mask >> j & 1 == 1 { l5 } else { -l5 };
        }
        push(&p, 4, &mut generators);
    }
    debug_assert_eq!(orbit.len(), f_eval);

    let point = |i: usize| &generators[i * d..(i + 1) * d];
    let orbit_weights =
        |degree: usize, orbits: &[usize]| -> Vec<f64> { solve_orbit_weights(d, degree, orbits, &orbit, &point) };

    let expand = |ow: &[f64]| -> Vec<f64> { orbit.iter().map(|&o| ow[o as usize]).collect() };
    let rule0 = expand(&orbit_weights(RULE_DEGREE, &[0, 1, 2, 3, 4]));
    let mut weights: [Vec<f64>; N_RULES] = Default::default();
    let mut null_degrees = [0; 4];
    for (k, &(degree, orbits)) in EMBEDDED.iter().enumerate() {
        let embedded = expand(&orbit_weights(degree, orbits));
        weights[k + 1] = rule0.iter().zip(&embedded).map(|(a, b)| a - b).collect();
        null_degrees[k] = degree;
    }
    weights[0] = rule0;

    let ratio = LAMBDA2_SQ / LAMBDA3_SQ;
    Ok(RuleTable {
        d,
        f_eval,
        generators,
        orbit,
        weights,
        null_degrees,
        split_weights: [ratio, 2.0 * (1.0 - ratio)],
        axial,
    })
}

/// Least-squares solution of the symmetric moment equations up to `degree`
/// restricted to `orbits`; weights of unused orbits are zero.
fn solve_orbit_weights<'a>(
    d: usize,
    degree: usize,
    orbits: &[usize],
    orbit_of: &[u8],
    point: &impl Fn(usize) -> &'a [f64],
) -> Vec<f64> {
    let patterns: Vec<&[u32]> = MOMENT_PATTERNS
        .iter()
        .copied()
        .filter(|p| p.len() <= d && p.iter().sum::<u32>() as usize <= degree)
        .collect();

    let mut a = DMatrix::<f64>::zeros(patterns.len(), orbits.len());
    let mut b = DVector::<f64>::zeros(patterns.len());
    for (row, pat) in patterns.iter().enumerate() {
        b[row] = pat.iter().map(|&e| 1.0 / (e as f64 + 1.0)).product();
        for (i, &o) in orbit_of.iter().enumerate() {
            if let Some(col) = orbits.iter().position(|&c| c == o as usize) {
                let x = point(i);
                let m: f64 = pat
                    .iter()
                    .enumerate()
                    .map(|(axis, &e)| x[axis].powi(e as i32))
                    .product();
                a[(row, col)] += m;
            }
        }
    }

    // Equilibrate columns; orbit sizes range from 1 to 2^d.
    let norms: Vec<f64> = a.column_iter().map(|c| c.norm()).collect();
    let mut scaled = a.clone();
    for (mut col, &n) in scaled.column_iter_mut().zip(&norms) {
        if n > 0.0 {
            col /= n;
        }
    }
    let mut w = scaled
        .svd(true, true)
        .solve(&b, 1e-12)
        .expect("SVD with both factors always solves");
    for (wi, &n) in w.iter_mut().zip(&norms) {
        if n > 0.0 {
            *wi /= n;
        }
    }
    for row in 0..a.nrows() {
        let terms: f64 = (0..a.ncols()).map(|c| (a[(row, c)] * w[c]).abs()).sum::<f64>() + b[row].abs();
        let residual = ((0..a.ncols()).map(|c| a[(row, c)] * w[c]).sum::<f64>() - b[row]).abs();
        assert!(
            residual <= MOMENT_RESIDUAL * terms,
            "moment system (d={d}, degree={degree}, orbits={orbits:?}) is inconsistent: residual {residual:e}"
        );
    }

    let mut out = vec![0.0; N_RULES];
    for (col, &o) in orbits.iter().enumerate() {
        out[o] = w[col];
    }
    out
}

impl RuleTable {
    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn f_eval(&self) -> usize {
        self.f_eval
    }

    /// Generator `i` as offsets from the region centre in half-widths.
    pub fn generator(&self, i: usize) -> &[f64] {
        &self.generators[i * self.d..(i + 1) * self.d]
    }

    /// Orbit index (0..5) of point `i`.
    pub fn orbit(&self, i: usize) -> usize {
        self.orbit[i] as usize
    }

    /// Weights of rule `k`: 0 is the degree-7 rule, 1..=4 are null rules.
    pub fn weights(&self, k: usize) -> &[f64] {
        &self.weights[k]
    }

    /// Highest total degree annihilated by null rule `k` (1..=4).
    pub fn null_degree(&self, k: usize) -> usize {
        self.null_degrees[k - 1]
    }

    pub fn split_weights(&self) -> [f64; 2] {
        self.split_weights
    }

    /// Indices of the points at `-λ2, +λ2, -λ3, +λ3` along `axis`.
    pub fn axial_points(&self, axis: usize) -> [usize; 4] {
        self.axial[axis]
    }

    /// Writes generator `f_id` mapped into `region` to `out[..d]`.
    #[inline]
    pub(crate) fn map_point(&self, region: RegionRef<'_>, f_id: usize, out: &mut [f64]) {
        map_offsets(region, self.generator(f_id), out);
    }

    /// Writes the table as whitespace-separated columns: point index,
    /// generator coordinates, then the five weights.
    pub fn dump<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(
            out,
            "# d={} f_eval={} null_degrees={:?} split_weights={:?}",
            self.d, self.f_eval, self.null_degrees, self.split_weights
        )?;
        let mut header = String::from("# index");
        for j in 0..self.d {
            header.push_str(&format!(" g{j}"));
        }
        for k in 0..N_RULES {
            header.push_str(&format!(" w{k}"));
        }
        writeln!(out, "{header}")?;
        for i in 0..self.f_eval {
            write!(out, "{i}")?;
            for g in self.generator(i) {
                write!(out, " {g:.17e}")?;
            }
            for k in 0..N_RULES {
                write!(out, " {:.17e}", self.weights[k][i])?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

/// `x[j] = left[j] + length[j] * (g[j] + 1) / 2`.
#[inline]
fn map_offsets(region: RegionRef<'_>, g: &[f64], out: &mut [f64]) {
    for (j, o) in out.iter_mut().enumerate().take(g.len()) {
        *o = region.left[j] + region.length[j] * (g[j] + 1.0) * 0.5;
    }
}

/// Generator `f_id` affinely mapped into `region`.
pub fn eval_point(rule: &RuleTable, region: RegionRef<'_>, f_id: usize) -> Result<Point> {
    if f_id >= rule.f_eval {
        return Err(Error::IndexOutOfRange {
            index: f_id,
            len: rule.f_eval,
        });
    }
    if region.dim() != rule.d {
        return Err(Error::DimensionMismatch {
            expected: rule.d,
            actual: region.dim(),
        });
    }
    let mut x = vec![0.0; rule.d];
    rule.map_point(region, f_id, &mut x);
    Point::new(x)
}

/// Applies all five rules to `f` over `region`.
///
/// Returns the volume-scaled rule values and every function value in point
/// order. Sums run over ascending point index with the fixed pairwise tree.
pub fn apply_rules<F: Integrand + ?Sized>(
    f: &F,
    region: RegionRef<'_>,
    rule: &RuleTable,
) -> Result<(RuleEstimates, Vec<f64>)> {
    check_region_dims(f, region, rule)?;
    let mut evals = vec![0.0; rule.f_eval];
    let mut x = [0.0; MAX_DIM];
    for (i, e) in evals.iter_mut().enumerate() {
        let x = &mut x[..rule.d];
        rule.map_point(region, i, x);
        *e = check_finite(f.eval(x), x)?;
    }
    let vol = region_volume(region);
    let mut products = vec![0.0; rule.f_eval];
    let mut values = [0.0; N_RULES];
    for (k, v) in values.iter_mut().enumerate() {
        for ((p, w), e) in products.iter_mut().zip(&rule.weights[k]).zip(&evals) {
            *p = w * e;
        }
        *v = vol * tree_sum(&products);
    }
    Ok((RuleEstimates { values }, evals))
}

pub(crate) fn check_region_dims<F: Integrand + ?Sized>(f: &F, region: RegionRef<'_>, rule: &RuleTable) -> Result<()> {
    for actual in [f.dim(), region.dim()] {
        if actual != rule.d {
            return Err(Error::DimensionMismatch {
                expected: rule.d,
                actual,
            });
        }
    }
    Ok(())
}

/// Reusable buffers for [`apply_rules_strided`].
#[derive(Debug, Default)]
pub(crate) struct RuleScratch {
    pub evals: Vec<f64>,
    lanes: Vec<[f64; N_RULES]>,
    column: Vec<f64>,
}

/// Work-group variant of [`apply_rules`]: `group_size` lanes each accumulate
/// the points `lane, lane + group_size, …` in order, then lane partials are
/// combined with the fixed pairwise tree. Function values land in
/// `scratch.evals`.
pub(crate) fn apply_rules_strided<F: Integrand + ?Sized>(
    f: &F,
    region: RegionRef<'_>,
    rule: &RuleTable,
    group_size: usize,
    scratch: &mut RuleScratch,
) -> Result<RuleEstimates> {
    let lanes = group_size.clamp(1, rule.f_eval);
    scratch.evals.resize(rule.f_eval, 0.0);
    scratch.lanes.clear();
    scratch.lanes.resize(lanes, [0.0; N_RULES]);
    let mut x = [0.0; MAX_DIM];
    let x = &mut x[..rule.d];
    let mut f_id = 0;
    while f_id < rule.f_eval {
        for local in scratch.lanes.iter_mut() {
            if f_id >= rule.f_eval {
                break;
            }
            rule.map_point(region, f_id, x);
            let v = check_finite(f.eval(x), x)?;
            scratch.evals[f_id] = v;
            for (k, acc) in local.iter_mut().enumerate() {
                *acc += v * rule.weights[k][f_id];
            }
            f_id += 1;
        }
    }
    let vol = region_volume(region);
    let mut values = [0.0; N_RULES];
    for (k, v) in values.iter_mut().enumerate() {
        scratch.column.clear();
        scratch.column.extend(scratch.lanes.iter().map(|l| l[k]));
        *v = vol * tree_sum(&scratch.column);
    }
    Ok(RuleEstimates { values })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{FnIntegrand, Region};

    #[test]
    fn point_counts() {
        assert_eq!(build_rule(5).unwrap().f_eval(), 93);
        assert_eq!(build_rule(8).unwrap().f_eval(), 401);
        for d in 1..=MAX_DIM {
            let rule = build_rule(d).unwrap();
            assert_eq!(rule.f_eval(), 1 + 2 * d + 2 * d + 2 * d * (d - 1) + (1 << d));
        }
        assert!(matches!(build_rule(0), Err(Error::UnsupportedDimension(0))));
        assert!(matches!(build_rule(13), Err(Error::UnsupportedDimension(13))));
    }

    /// Closed-form orbit weights of the classical degree-7/5 pair, normalised
    /// to unit volume. Independent of the moment solve above.
    fn closed_form(d: usize) -> ([f64; 5], [f64; 4]) {
        let df = d as f64;
        let w7 = [
            (12824.0 - 9120.0 * df + 400.0 * df * df) / 19683.0,
            980.0 / 6561.0,
            (1820.0 - 400.0 * df) / 19683.0,
            200.0 / 19683.0,
            6859.0 / 19683.0 / (1u64 << d) as f64,
        ];
        let w5 = [
            (729.0 - 950.0 * df + 50.0 * df * df) / 729.0,
            245.0 / 486.0,
            (265.0 - 100.0 * df) / 1458.0,
            25.0 / 729.0,
        ];
        (w7, w5)
    }

    #[test]
    fn weights_match_closed_form() {
        for d in 2..=MAX_DIM {
            let rule = build_rule(d).unwrap();
            let (w7, w5) = closed_form(d);
            for i in 0..rule.f_eval() {
                let o = rule.orbit(i);
                let scale = 1.0 + w7[o].abs();
                assert!(
                    (rule.weights(0)[i] - w7[o]).abs() <= 1e-12 * scale,
                    "d={d} point {i}: {} vs {}",
                    rule.weights(0)[i],
                    w7[o]
                );
                let embedded = rule.weights(0)[i] - rule.weights(1)[i];
                let expect = if o < 4 { w5[o] } else { 0.0 };
                assert!(
                    (embedded - expect).abs() <= 1e-12 * (1.0 + expect.abs()),
                    "d={d} point {i}"
                );
            }
        }
    }

    #[test]
    fn deterministic_build() {
        for d in [1, 4, 9] {
            let a = build_rule(d).unwrap();
            let b = build_rule(d).unwrap();
            for k in 0..N_RULES {
                let bits = |r: &RuleTable| r.weights(k).iter().map(|w| w.to_bits()).collect::<Vec<_>>();
                assert_eq!(bits(&a), bits(&b));
            }
            assert_eq!(a, b);
        }
    }

    #[test]
    fn eval_point_examples() {
        let rule = build_rule(3).unwrap();
        let unit = Region::unit(3).unwrap();
        assert_eq!(eval_point(&rule, unit.as_ref(), 0).unwrap().coords(), [0.5; 3]);
        let sub = Region::new(vec![0.5; 3], vec![0.5; 3]).unwrap();
        assert_eq!(eval_point(&rule, sub.as_ref(), 0).unwrap().coords(), [0.75; 3]);
        assert!(matches!(
            eval_point(&rule, unit.as_ref(), rule.f_eval()),
            Err(Error::IndexOutOfRange { .. })
        ));
    }

    #[test]
    fn offset_map_examples() {
        let unit = Region::unit(3).unwrap();
        let mut x = [0.0; 3];
        map_offsets(unit.as_ref(), &[1.0, 0.0, 0.0], &mut x);
        assert_eq!(x, [1.0, 0.5, 0.5]);
        map_offsets(unit.as_ref(), &[-1.0, 0.0, 1.0], &mut x);
        assert_eq!(x, [0.0, 0.5, 1.0]);
    }

    #[test]
    fn axial_generator_mapping() {
        let rule = build_rule(4).unwrap();
        let unit = Region::unit(4).unwrap();
        let [_, plus2, _, _] = rule.axial_points(0);
        let x = eval_point(&rule, unit.as_ref(), plus2).unwrap();
        let expected = (LAMBDA2_SQ.sqrt() + 1.0) / 2.0;
        assert!((x.coords()[0] - expected).abs() < 1e-15);
        assert_eq!(&x.coords()[1..], [0.5; 3]);
    }

    #[test]
    fn constant_is_integrated_and_annihilated() {
        for d in 1..=MAX_DIM {
            let rule = build_rule(d).unwrap();
            let f = FnIntegrand::new(d, |_: &[f64]| 1.0);
            let region = Region::new(vec![0.25; d], vec![0.5; d]).unwrap();
            let (est, evals) = apply_rules(&f, region.as_ref(), &rule).unwrap();
            let vol = 0.5f64.powi(d as i32);
            assert!((est.values[0] - vol).abs() <= 1e-12 * vol, "d={d}");
            for k in 1..N_RULES {
                assert!(est.values[k].abs() <= 1e-12 * vol, "d={d} rule {k}: {}", est.values[k]);
            }
            assert_eq!(evals.len(), rule.f_eval());
        }
    }

    #[test]
    fn null_rules_annihilate_to_their_degree() {
        // Monomials x0^a x1^b x2^c of every total degree up to the null degree.
        for d in [3, 5] {
            let rule = build_rule(d).unwrap();
            let unit = Region::unit(d).unwrap();
            for k in 1..N_RULES {
                let deg = rule.null_degree(k);
                for a in 0..=deg as i32 {
                    for b in 0..=(deg as i32 - a) {
                        for c in 0..=(deg as i32 - a - b) {
                            let f = FnIntegrand::new(d, move |x: &[f64]| x[0].powi(a) * x[1].powi(b) * x[2].powi(c));
                            let (est, _) = apply_rules(&f, unit.as_ref(), &rule).unwrap();
                            assert!(est.values[k].abs() <= 1e-13, "d={d} k={k} ({a},{b},{c})");
                        }
                    }
                }
                // One degree higher must be visible to at least one monomial.
                let f = FnIntegrand::new(d, move |x: &[f64]| x[0].powi(deg as i32 + 1));
                let (est, _) = apply_rules(&f, unit.as_ref(), &rule).unwrap();
                assert!(est.values[k].abs() > 1e-8, "d={d} k={k}");
            }
        }
    }

    #[test]
    fn high_degree_monomial_is_not_exact() {
        let rule = build_rule(5).unwrap();
        let f = FnIntegrand::new(5, |x: &[f64]| x[0].powi(9));
        let (est, _) = apply_rules(&f, Region::unit(5).unwrap().as_ref(), &rule).unwrap();
        assert!((est.values[0] - 0.1).abs() > 1e-6);
        for k in 1..N_RULES {
            assert!(est.values[k] != 0.0);
        }
    }

    #[test]
    fn strided_matches_pairwise_closely() {
        let rule = build_rule(5).unwrap();
        let f = FnIntegrand::new(5, |x: &[f64]| (x[0] + 2.0 * x[3]).exp() * x[4].cos());
        let region = Region::new(vec![0.1, 0.2, 0.3, 0.4, 0.0], vec![0.5, 0.3, 0.2, 0.5, 0.25]).unwrap();
        let (a, evals) = apply_rules(&f, region.as_ref(), &rule).unwrap();
        for group in [1, 7, 64, 1000] {
            let mut scratch = RuleScratch::default();
            let b = apply_rules_strided(&f, region.as_ref(), &rule, group, &mut scratch).unwrap();
            assert_eq!(scratch.evals, evals);
            for k in 0..N_RULES {
                assert!((a.values[k] - b.values[k]).abs() <= 1e-14 * a.values[0].abs());
            }
        }
    }

    #[test]
    fn non_finite_values_are_reported_with_point() {
        let rule = build_rule(2).unwrap();
        let f = FnIntegrand::new(2, |x: &[f64]| 1.0 / (x[0] - 0.5));
        let err = apply_rules(&f, Region::unit(2).unwrap().as_ref(), &rule).unwrap_err();
        match err {
            Error::NonFiniteEvaluation { point, .. } => assert_eq!(point, vec![0.5, 0.5]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let rule = build_rule(3).unwrap();
        let f = FnIntegrand::new(2, |_: &[f64]| 1.0);
        assert!(apply_rules(&f, Region::unit(3).unwrap().as_ref(), &rule).is_err());
    }

    #[test]
    fn dump_lists_every_point() {
        let rule = build_rule(2).unwrap();
        let mut buf = Vec::new();
        rule.dump(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let rows: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
        assert_eq!(rows.len(), rule.f_eval());
        assert_eq!(rows[0].split_whitespace().count(), 1 + 2 + N_RULES);
    }
}
