//! Shared domain types: integrands, integration bounds, and the region lists
//! consumed by the cubature kernel.
//!
//! All kernels work in unit-cube coordinates. User-facing bounds are applied
//! once, at the integrand boundary, by [`Bounded`].

use crate::error::{Error, Result};

/// Largest supported dimensionality.
pub const MAX_DIM: usize = 12;

/// Default cap on the number of regions a region list may hold.
pub const DEFAULT_REGION_CAP: usize = 1 << 26;

/// Tolerance used when validating region extents produced by repeated bisection.
const EXTENT_SLACK: f64 = 1e-12;

pub(crate) fn check_dim(d: usize) -> Result<()> {
    if (1..=MAX_DIM).contains(&d) {
        Ok(())
    } else {
        Err(Error::UnsupportedDimension(d))
    }
}

/// A real-valued function on `[0, 1]^d`.
///
/// Evaluation must be pure: the kernels call it concurrently from many
/// workers and assume the same point always yields the same value.
pub trait Integrand: Sync {
    fn dim(&self) -> usize;

    fn eval(&self, x: &[f64]) -> f64;
}

impl<T: Integrand + ?Sized> Integrand for &T {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn eval(&self, x: &[f64]) -> f64 {
        (**self).eval(x)
    }
}

impl<T: Integrand + ?Sized> Integrand for Box<T> {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn eval(&self, x: &[f64]) -> f64 {
        (**self).eval(x)
    }
}

/// Adapts a closure into an [`Integrand`] of fixed dimension.
#[derive(Clone, Copy)]
pub struct FnIntegrand<F> {
    dim: usize,
    f: F,
}

impl<F> FnIntegrand<F>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    pub fn new(dim: usize, f: F) -> Self {
        FnIntegrand { dim, f }
    }
}

impl<F> Integrand for FnIntegrand<F>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    fn eval(&self, x: &[f64]) -> f64 {
        (self.f)(x)
    }
}

/// A point in `d` dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct Point(Vec<f64>);

impl Point {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        check_dim(coords.len())?;
        Ok(Point(coords))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl AsRef<[f64]> for Point {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// Axis-aligned integration bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct IntegrationBounds {
    low: Vec<f64>,
    high: Vec<f64>,
}

impl IntegrationBounds {
    pub fn new(low: Vec<f64>, high: Vec<f64>) -> Result<Self> {
        if low.len() != high.len() {
            return Err(Error::DimensionMismatch {
                expected: low.len(),
                actual: high.len(),
            });
        }
        check_dim(low.len())?;
        for (j, (lo, hi)) in low.iter().zip(&high).enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::invalid(format!(
                    "axis {j}: bounds ({lo}, {hi}) are not a finite increasing pair"
                )));
            }
        }
        Ok(IntegrationBounds { low, high })
    }

    pub fn unit(d: usize) -> Result<Self> {
        IntegrationBounds::new(vec![0.0; d], vec![1.0; d])
    }

    pub fn dim(&self) -> usize {
        self.low.len()
    }

    pub fn low(&self) -> &[f64] {
        &self.low
    }

    pub fn high(&self) -> &[f64] {
        &self.high
    }

    /// Product of the axis extents.
    pub fn jacobian(&self) -> f64 {
        self.low.iter().zip(&self.high).map(|(l, h)| h - l).product()
    }
}

/// Presents an integrand defined on arbitrary bounds as one on the unit cube.
///
/// `eval(y) = jacobian * f(low + (high - low) * y)`, so integrating the
/// wrapper over `[0, 1]^d` equals integrating `f` over the bounds.
pub struct Bounded<F> {
    inner: F,
    bounds: IntegrationBounds,
    jacobian: f64,
}

impl<F: Integrand> Bounded<F> {
    pub fn new(inner: F, bounds: IntegrationBounds) -> Result<Self> {
        if inner.dim() != bounds.dim() {
            return Err(Error::DimensionMismatch {
                expected: bounds.dim(),
                actual: inner.dim(),
            });
        }
        let jacobian = bounds.jacobian();
        Ok(Bounded {
            inner,
            bounds,
            jacobian,
        })
    }
}

impl<F: Integrand> Integrand for Bounded<F> {
    fn dim(&self) -> usize {
        self.bounds.dim()
    }

    fn eval(&self, y: &[f64]) -> f64 {
        let mut x = [0.0; MAX_DIM];
        let d = self.bounds.dim();
        for j in 0..d {
            let (lo, hi) = (self.bounds.low[j], self.bounds.high[j]);
            x[j] = lo + (hi - lo) * y[j];
        }
        self.jacobian * self.inner.eval(&x[..d])
    }
}

/// Borrowed view of one region: low corner and per-axis extent in unit-cube
/// coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegionRef<'a> {
    pub left: &'a [f64],
    pub length: &'a [f64],
}

impl RegionRef<'_> {
    pub fn dim(&self) -> usize {
        self.left.len()
    }

    pub fn to_owned(&self) -> Region {
        Region {
            left: self.left.to_vec(),
            length: self.length.to_vec(),
        }
    }
}

/// An axis-aligned sub-box of the unit cube.
#[derive(Debug, Clone, PartialEq)]
pub struct Region {
    left: Vec<f64>,
    length: Vec<f64>,
}

impl Region {
    pub fn new(left: Vec<f64>, length: Vec<f64>) -> Result<Self> {
        validate_region(&left, &length)?;
        Ok(Region { left, length })
    }

    pub fn unit(d: usize) -> Result<Self> {
        Region::new(vec![0.0; d], vec![1.0; d])
    }

    pub fn dim(&self) -> usize {
        self.left.len()
    }

    pub fn left(&self) -> &[f64] {
        &self.left
    }

    pub fn length(&self) -> &[f64] {
        &self.length
    }

    pub fn as_ref(&self) -> RegionRef<'_> {
        RegionRef {
            left: &self.left,
            length: &self.length,
        }
    }

    /// Splits the region into two equal halves along `axis`.
    pub fn bisect(&self, axis: usize) -> Result<(Region, Region)> {
        if axis >= self.dim() {
            return Err(Error::IndexOutOfRange {
                index: axis,
                len: self.dim(),
            });
        }
        let half = 0.5 * self.length[axis];
        let mut lo = self.clone();
        lo.length[axis] = half;
        let mut hi = lo.clone();
        hi.left[axis] += half;
        Ok((lo, hi))
    }
}

fn validate_region(left: &[f64], length: &[f64]) -> Result<()> {
    if left.len() != length.len() {
        return Err(Error::DimensionMismatch {
            expected: left.len(),
            actual: length.len(),
        });
    }
    check_dim(left.len())?;
    for (j, (&l, &w)) in left.iter().zip(length).enumerate() {
        let ok = l >= 0.0 && w > 0.0 && l + w <= 1.0 + EXTENT_SLACK && w.is_finite();
        if !ok {
            return Err(Error::InvalidRegion(format!(
                "axis {j}: left {l}, length {w} does not fit in [0, 1]"
            )));
        }
    }
    Ok(())
}

/// Product of the region's extents.
#[inline]
pub fn region_volume(region: RegionRef<'_>) -> f64 {
    region.length.iter().product()
}

/// A list of regions in structure-of-lists layout: `lefts[i * d + j]` and
/// `lengths[i * d + j]` describe axis `j` of region `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionList {
    d: usize,
    lefts: Vec<f64>,
    lengths: Vec<f64>,
}

impl RegionList {
    pub fn new(d: usize) -> Result<Self> {
        check_dim(d)?;
        Ok(RegionList {
            d,
            lefts: Vec::new(),
            lengths: Vec::new(),
        })
    }

    pub fn with_capacity(d: usize, n: usize) -> Result<Self> {
        check_dim(d)?;
        Ok(RegionList {
            d,
            lefts: Vec::with_capacity(n * d),
            lengths: Vec::with_capacity(n * d),
        })
    }

    pub fn from_regions<'a>(d: usize, regions: impl IntoIterator<Item = &'a Region>) -> Result<Self> {
        let mut list = RegionList::new(d)?;
        for r in regions {
            list.push(r.as_ref())?;
        }
        Ok(list)
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn len(&self) -> usize {
        self.lefts.len() / self.d
    }

    pub fn is_empty(&self) -> bool {
        self.lefts.is_empty()
    }

    pub fn lefts(&self) -> &[f64] {
        &self.lefts
    }

    pub fn lengths(&self) -> &[f64] {
        &self.lengths
    }

    pub fn push(&mut self, region: RegionRef<'_>) -> Result<()> {
        if region.dim() != self.d {
            return Err(Error::DimensionMismatch {
                expected: self.d,
                actual: region.dim(),
            });
        }
        validate_region(region.left, region.length)?;
        self.lefts.extend_from_slice(region.left);
        self.lengths.extend_from_slice(region.length);
        Ok(())
    }

    /// Region `i`. Panics when `i >= len()`.
    #[inline]
    pub fn get(&self, i: usize) -> RegionRef<'_> {
        let span = i * self.d..(i + 1) * self.d;
        RegionRef {
            left: &self.lefts[span.clone()],
            length: &self.lengths[span],
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = RegionRef<'_>> + '_ {
        (0..self.len()).map(move |i| self.get(i))
    }

    pub fn volume(&self, i: usize) -> f64 {
        region_volume(self.get(i))
    }

    /// Appends the two halves of region `src` of `other`, bisected along `axis`.
    pub(crate) fn push_halves(&mut self, other: &RegionList, src: usize, axis: usize) {
        let r = other.get(src);
        let half = 0.5 * r.length[axis];
        for side in 0..2 {
            let start = self.lefts.len();
            self.lefts.extend_from_slice(r.left);
            self.lengths.extend_from_slice(r.length);
            self.lengths[start + axis] = half;
            if side == 1 {
                self.lefts[start + axis] += half;
            }
        }
    }

    /// Keeps the regions whose `keep` flag is set, preserving order.
    pub(crate) fn retain_mask(&mut self, keep: &[bool]) {
        let d = self.d;
        let mut w = 0;
        for (i, _) in keep.iter().enumerate().filter(|(_, &k)| k) {
            if w != i {
                self.lefts.copy_within(i * d..(i + 1) * d, w * d);
                self.lengths.copy_within(i * d..(i + 1) * d, w * d);
            }
            w += 1;
        }
        self.lefts.truncate(w * d);
        self.lengths.truncate(w * d);
    }

    pub(crate) fn append(&mut self, other: RegionList) {
        self.lefts.reserve_exact(other.lefts.len());
        self.lengths.reserve_exact(other.lengths.len());
        self.lefts.extend_from_slice(&other.lefts);
        self.lengths.extend_from_slice(&other.lengths);
    }
}

/// Per-region kernel output: integral `I`, error `E`, and split axis `K`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RegionEstimates {
    pub integrals: Vec<f64>,
    pub errors: Vec<f64>,
    pub split_axes: Vec<usize>,
}

impl RegionEstimates {
    pub fn with_capacity(n: usize) -> Self {
        RegionEstimates {
            integrals: Vec::with_capacity(n),
            errors: Vec::with_capacity(n),
            split_axes: Vec::with_capacity(n),
        }
    }

    pub fn len(&self) -> usize {
        self.integrals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.integrals.is_empty()
    }

    pub(crate) fn push(&mut self, integral: f64, error: f64, axis: usize) {
        self.integrals.push(integral);
        self.errors.push(error);
        self.split_axes.push(axis);
    }

    pub(crate) fn retain_mask(&mut self, keep: &[bool]) {
        fn retain<T>(v: &mut Vec<T>, keep: &[bool]) {
            let mut it = keep.iter();
            v.retain(|_| *it.next().unwrap_or(&false));
        }
        retain(&mut self.integrals, keep);
        retain(&mut self.errors, keep);
        retain(&mut self.split_axes, keep);
    }

    pub(crate) fn append(&mut self, mut other: RegionEstimates) {
        self.integrals.reserve_exact(other.len());
        self.errors.reserve_exact(other.len());
        self.split_axes.reserve_exact(other.len());
        self.integrals.append(&mut other.integrals);
        self.errors.append(&mut other.errors);
        self.split_axes.append(&mut other.split_axes);
    }
}

/// Tiles the unit cube with `g^d` congruent regions of side `1/g`.
///
/// Regions are ordered lexicographically with axis 0 as the most significant
/// index.
pub fn uniform_split(d: usize, g: usize, region_cap: usize) -> Result<RegionList> {
    check_dim(d)?;
    if g == 0 {
        return Err(Error::invalid("splits per axis must be at least 1"));
    }
    let requested = (g as u128).checked_pow(d as u32).unwrap_or(u128::MAX);
    if requested > region_cap as u128 {
        return Err(Error::RegionCapExceeded {
            requested,
            cap: region_cap,
        });
    }
    let n = requested as usize;
    let width = 1.0 / g as f64;
    let mut list = RegionList::with_capacity(d, n)?;
    let mut digits = vec![0usize; d];
    for _ in 0..n {
        for &k in &digits {
            list.lefts.push(k as f64 * width);
            list.lengths.push(width);
        }
        // Odometer increment, last axis fastest.
        for j in (0..d).rev() {
            digits[j] += 1;
            if digits[j] < g {
                break;
            }
            digits[j] = 0;
        }
    }
    Ok(list)
}

/// Smallest `g` with `g^d >= count`.
pub(crate) fn splits_for_count(d: usize, count: usize) -> usize {
    let count = count.max(1) as u128;
    let mut g = (count as f64).powf(1.0 / d as f64).floor().max(1.0) as usize;
    while (g as u128).pow(d as u32) < count {
        g += 1;
    }
    while g > 1 && ((g - 1) as u128).pow(d as u32) >= count {
        g -= 1;
    }
    g
}
