//! VEGAS importance grid.
//!
//! Each axis carries `n_bins` bins of variable width. A uniform point `y` is
//! pushed through the piecewise-linear map defined by the boundaries, and
//! the product of per-axis stretch factors is the Jacobian. Between
//! iterations the boundaries are refit so that bins with large accumulated
//! contributions shrink.

use std::io::{self, Write};

use crate::domain::check_dim;
use crate::error::{Error, Result};

pub const DEFAULT_BINS: usize = 500;

/// Per-axis bin boundaries, stored axis-major with `n_bins + 1` entries per
/// axis.
#[derive(Debug, Clone, PartialEq)]
pub struct VegasGrid {
    d: usize,
    n_bins: usize,
    boundaries: Vec<f64>,
}

/// Uniform grid: `B[k] = k / n_bins` on every axis.
pub fn init_grid(d: usize, n_bins: usize) -> Result<VegasGrid> {
    check_dim(d)?;
    if n_bins < 2 {
        return Err(Error::invalid(format!("n_bins must be at least 2, got {n_bins}")));
    }
    let axis: Vec<f64> = (0..=n_bins).map(|k| k as f64 / n_bins as f64).collect();
    Ok(VegasGrid {
        d,
        n_bins,
        boundaries: axis.repeat(d),
    })
}

impl VegasGrid {
    /// Builds a grid from explicit boundaries, one list per axis.
    pub fn from_boundaries(axes: Vec<Vec<f64>>) -> Result<Self> {
        check_dim(axes.len())?;
        let n_bins = axes[0].len().saturating_sub(1);
        if n_bins < 2 {
            return Err(Error::invalid("each axis needs at least 3 boundaries"));
        }
        for (j, b) in axes.iter().enumerate() {
            if b.len() != n_bins + 1 {
                return Err(Error::DimensionMismatch {
                    expected: n_bins + 1,
                    actual: b.len(),
                });
            }
            if b[0] != 0.0 || b[n_bins] != 1.0 {
                return Err(Error::invalid(format!("axis {j} is not pinned to [0, 1]")));
            }
            if b.windows(2).any(|w| !(w[0] < w[1])) {
                return Err(Error::invalid(format!(
                    "axis {j} boundaries are not strictly increasing"
                )));
            }
        }
        Ok(VegasGrid {
            d: axes.len(),
            n_bins,
            boundaries: axes.concat(),
        })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    pub fn boundaries(&self, axis: usize) -> &[f64] {
        let w = self.n_bins + 1;
        &self.boundaries[axis * w..(axis + 1) * w]
    }

    /// Maps `y` into `x`, writes the bin index per axis and returns the
    /// Jacobian. `y` must already lie in `[0, 1)^d`.
    #[inline]
    pub(crate) fn map_into(&self, y: &[f64], x: &mut [f64], bins: &mut [usize]) -> f64 {
        let n = self.n_bins;
        let nf = n as f64;
        let mut jac = 1.0;
        for j in 0..self.d {
            let z = y[j] * nf;
            let b = (z as usize).min(n - 1);
            let axis = &self.boundaries[j * (n + 1)..];
            let width = axis[b + 1] - axis[b];
            x[j] = axis[b] + (z - b as f64) * width;
            jac *= nf * width;
            bins[j] = b;
        }
        jac
    }

    /// Writes the grid as text: one line per axis, `axis <j>:` followed by
    /// its boundaries.
    pub fn write_snapshot<W: Write>(&self, mut out: W) -> io::Result<()> {
        for j in 0..self.d {
            write!(out, "axis {j}:")?;
            for b in self.boundaries(j) {
                write!(out, " {b:.17e}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }

    /// Fraction of bins on `axis` lying entirely inside `[lo, hi]`.
    pub fn bin_fraction_within(&self, axis: usize, lo: f64, hi: f64) -> f64 {
        let b = self.boundaries(axis);
        let inside = b.windows(2).filter(|w| w[0] >= lo && w[1] <= hi).count();
        inside as f64 / self.n_bins as f64
    }
}

/// Result of [`transform`].
#[derive(Debug, Clone, PartialEq)]
pub struct Transformed {
    pub x: Vec<f64>,
    pub jacobian: f64,
    pub bin_ids: Vec<usize>,
}

/// Maps a point of the unit hypercube through the grid.
pub fn transform(y: &[f64], grid: &VegasGrid) -> Result<Transformed> {
    if y.len() != grid.d {
        return Err(Error::DimensionMismatch {
            expected: grid.d,
            actual: y.len(),
        });
    }
    if let Some((axis, &value)) = y.iter().enumerate().find(|(_, v)| !(0.0..1.0).contains(*v)) {
        return Err(Error::OutsideUnitInterval { axis, value });
    }
    let mut x = vec![0.0; grid.d];
    let mut bin_ids = vec![0; grid.d];
    let jacobian = grid.map_into(y, &mut x, &mut bin_ids);
    Ok(Transformed { x, jacobian, bin_ids })
}

/// Which squared quantity a sample adds to its bins.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Contribution {
    /// `(f(x) · jacobian)²`, the weighted sample value.
    #[default]
    WeightedSquare,
    /// `f(x)²`, ignoring the grid Jacobian.
    RawSquare,
}

impl Contribution {
    #[inline]
    pub fn of(self, fx: f64, jacobian: f64) -> f64 {
        match self {
            Contribution::WeightedSquare => (fx * jacobian) * (fx * jacobian),
            Contribution::RawSquare => fx * fx,
        }
    }
}

/// Accumulated squared sample values per axis and bin.
#[derive(Debug, Clone, PartialEq)]
pub struct BinContributions {
    d: usize,
    n_bins: usize,
    c: Vec<f64>,
}

impl BinContributions {
    pub fn new(d: usize, n_bins: usize) -> Self {
        BinContributions {
            d,
            n_bins,
            c: vec![0.0; d * n_bins],
        }
    }

    pub fn for_grid(grid: &VegasGrid) -> Self {
        Self::new(grid.d, grid.n_bins)
    }

    /// Wraps a flat axis-major buffer of `d · n_bins` values.
    pub fn from_flat(d: usize, n_bins: usize, c: Vec<f64>) -> Result<Self> {
        if c.len() != d * n_bins {
            return Err(Error::DimensionMismatch {
                expected: d * n_bins,
                actual: c.len(),
            });
        }
        if let Some(v) = c.iter().find(|v| !(**v >= 0.0)) {
            return Err(Error::invalid(format!("bin contribution {v} is negative or NaN")));
        }
        Ok(BinContributions { d, n_bins, c })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    pub fn axis(&self, axis: usize) -> &[f64] {
        &self.c[axis * self.n_bins..(axis + 1) * self.n_bins]
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.c
    }

    /// Flat slot of `(axis, bin)`.
    #[inline]
    pub fn slot(n_bins: usize, axis: usize, bin: usize) -> usize {
        axis * n_bins + bin
    }

    pub fn reset(&mut self) {
        self.c.fill(0.0);
    }
}

/// Adds `contribution` to the bin hit on every axis.
pub fn accumulate(c: &mut BinContributions, bin_ids: &[usize], contribution: f64) {
    for (j, &b) in bin_ids.iter().enumerate() {
        c.c[j * c.n_bins + b] += contribution;
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridRefineParams {
    pub alpha: f64,
    pub smoothing: bool,
}

impl Default for GridRefineParams {
    fn default() -> Self {
        GridRefineParams {
            alpha: 1.5,
            smoothing: true,
        }
    }
}

impl GridRefineParams {
    pub fn validate(&self) -> Result<()> {
        if self.alpha >= 0.0 && self.alpha.is_finite() {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "alpha must be finite and non-negative, got {}",
                self.alpha
            )))
        }
    }
}

/// Refits every axis so that each new bin carries an equal share of the
/// damped contribution weight. Axes with no contribution are left alone.
pub fn refine_grid(grid: &VegasGrid, c: &BinContributions, params: &GridRefineParams) -> Result<VegasGrid> {
    params.validate()?;
    if c.d != grid.d || c.n_bins != grid.n_bins {
        return Err(Error::DimensionMismatch {
            expected: grid.d * grid.n_bins,
            actual: c.d * c.n_bins,
        });
    }
    let mut out = grid.clone();
    let n = grid.n_bins;
    for j in 0..grid.d {
        if let Some(w) = damped_weights(c.axis(j), params) {
            let new_axis = rebin(grid.boundaries(j), &w);
            out.boundaries[j * (n + 1)..(j + 1) * (n + 1)].copy_from_slice(&new_axis);
        }
    }
    Ok(out)
}

fn damped_weights(c: &[f64], params: &GridRefineParams) -> Option<Vec<f64>> {
    let n = c.len();
    let smoothed: Vec<f64> = if params.smoothing {
        (0..n)
            .map(|k| match k {
                0 => (c[0] + c[1]) / 2.0,
                k if k == n - 1 => (c[n - 2] + c[n - 1]) / 2.0,
                k => (c[k - 1] + c[k] + c[k + 1]) / 3.0,
            })
            .collect()
    } else {
        c.to_vec()
    };
    let total: f64 = smoothed.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        return None;
    }
    Some(
        smoothed
            .iter()
            .map(|&s| {
                let r = s / total;
                if r <= 0.0 {
                    0.0
                } else if r >= 1.0 {
                    1.0
                } else {
                    ((1.0 - r) / (1.0 / r).ln()).powf(params.alpha)
                }
            })
            .collect(),
    )
}

/// New boundaries splitting the cumulative weight into equal parts, with
/// weight spread uniformly inside each old bin.
fn rebin(old: &[f64], w: &[f64]) -> Vec<f64> {
    let n = w.len();
    let total: f64 = w.iter().sum();
    if !(total > 0.0) {
        return old.to_vec();
    }
    let target = total / n as f64;
    let mut out = Vec::with_capacity(n + 1);
    out.push(0.0);
    let mut k = 0;
    let mut acc = 0.0;
    for i in 1..n {
        let goal = target * i as f64;
        while k < n - 1 && acc + w[k] < goal {
            acc += w[k];
            k += 1;
        }
        let frac = if w[k] > 0.0 {
            ((goal - acc) / w[k]).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let mut x = old[k] + frac * (old[k + 1] - old[k]);
        let prev = out[i - 1];
        if x <= prev {
            x = prev.next_up();
        }
        out.push(x);
    }
    out.push(1.0);
    // Rounding can only squeeze the top boundaries against 1.
    for i in (1..n).rev() {
        if out[i] >= out[i + 1] {
            out[i] = out[i + 1].next_down();
        }
    }
    out
}
