//! Piecewise-constant functions on an equidistant cell grid.
//!
//! Every function is stored by its value on each cell of a [`Grid`] over a
//! compact interval. Integrals use the midpoint rule, which is exact for this
//! representation, so the indicator basis, the quadrature and the clr
//! transform agree to rounding error.

mod basis;
mod bayes;

use std::ops::Deref;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use basis::{Basis, BasisKind};
pub use bayes::{bayes_inner_product, bayes_perturb, bayes_power, clr, clr_inverse};

/// Tolerance used when checking that a density integrates to one or a clr
/// function integrates to zero.
pub const NORMALIZATION_TOL: f64 = 1e-8;

/// Equidistant partition of `[lower, upper]` into `n_cells` cells.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GridSpec")]
pub struct Grid {
    lower: f64,
    upper: f64,
    n_cells: usize,
}

#[derive(Deserialize)]
struct GridSpec {
    lower: f64,
    upper: f64,
    n_cells: usize,
}

impl TryFrom<GridSpec> for Grid {
    type Error = Error;

    fn try_from(spec: GridSpec) -> Result<Self> {
        Grid::new(spec.lower, spec.upper, spec.n_cells)
    }
}

impl Grid {
    pub fn new(lower: f64, upper: f64, n_cells: usize) -> Result<Self> {
        if !lower.is_finite() || !upper.is_finite() {
            return Err(Error::InvalidGrid("interval bounds must be finite".into()));
        }
        if upper <= lower {
            return Err(Error::InvalidGrid(format!(
                "upper bound {upper} must exceed lower bound {lower}"
            )));
        }
        if n_cells < 2 {
            return Err(Error::InvalidGrid(format!("at least 2 cells required, got {n_cells}")));
        }
        Ok(Self { lower, upper, n_cells })
    }

    pub fn lower(&self) -> f64 {
        self.lower
    }

    pub fn upper(&self) -> f64 {
        self.upper
    }

    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    /// Length of the interval, `|I|`.
    pub fn length(&self) -> f64 {
        self.upper - self.lower
    }

    /// Cell width `Δ`.
    pub fn width(&self) -> f64 {
        self.length() / self.n_cells as f64
    }

    /// Midpoint of cell `k` (zero-based).
    pub fn midpoint(&self, k: usize) -> f64 {
        self.lower + (k as f64 + 0.5) * self.width()
    }

    pub fn midpoints(&self) -> DVector<f64> {
        DVector::from_fn(self.n_cells, |k, _| self.midpoint(k))
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.lower && x <= self.upper
    }

    /// Index of the cell containing `x`; the upper bound belongs to the last cell.
    pub fn cell_of(&self, x: f64) -> Result<usize> {
        if !self.contains(x) {
            return Err(Error::OutOfRange {
                value: x,
                lower: self.lower,
                upper: self.upper,
            });
        }
        let k = ((x - self.lower) / self.width()).floor() as usize;
        Ok(k.min(self.n_cells - 1))
    }

    pub(crate) fn ensure_same(&self, other: &Grid) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::GridMismatch(format!("{self:?} vs {other:?}")))
        }
    }
}

/// A real function given by its value on every cell of a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    grid: Grid,
    values: DVector<f64>,
}

impl GridFunction {
    pub fn new(grid: Grid, values: DVector<f64>) -> Result<Self> {
        if values.len() != grid.n_cells() {
            return Err(Error::DimensionMismatch {
                expected: grid.n_cells(),
                found: values.len(),
            });
        }
        if let Some(cell) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { cell });
        }
        Ok(Self { grid, values })
    }

    pub fn from_vec(grid: Grid, values: Vec<f64>) -> Result<Self> {
        Self::new(grid, DVector::from_vec(values))
    }

    /// Evaluates `f` at every cell midpoint.
    pub fn from_fn(grid: Grid, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(grid, DVector::from_fn(grid.n_cells(), |k, _| f(grid.midpoint(k))))
    }

    pub fn zeros(grid: Grid) -> Self {
        Self {
            grid,
            values: DVector::zeros(grid.n_cells()),
        }
    }

    pub fn constant(grid: Grid, c: f64) -> Self {
        Self {
            grid,
            values: DVector::from_element(grid.n_cells(), c),
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.values
    }

    pub fn into_values(self) -> DVector<f64> {
        self.values
    }

    /// Value on the cell containing `x`.
    pub fn eval(&self, x: f64) -> Result<f64> {
        Ok(self.values[self.grid.cell_of(x)?])
    }

    /// `Δ·Σ values`, exact for piecewise-constant functions.
    pub fn integrate(&self) -> f64 {
        self.grid.width() * self.values.sum()
    }

    /// L² inner product `∫ f g dx`.
    pub fn inner_product(&self, other: &GridFunction) -> Result<f64> {
        self.grid.ensure_same(&other.grid)?;
        Ok(self.grid.width() * self.values.dot(&other.values))
    }

    pub fn norm(&self) -> f64 {
        (self.grid.width() * self.values.norm_squared()).sqrt()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<GridFunction> {
        GridFunction::new(self.grid, self.values.map(f))
    }

    pub fn scale(&self, alpha: f64) -> GridFunction {
        GridFunction {
            grid: self.grid,
            values: &self.values * alpha,
        }
    }

    pub fn add(&self, other: &GridFunction) -> Result<GridFunction> {
        self.grid.ensure_same(&other.grid)?;
        Ok(GridFunction {
            grid: self.grid,
            values: &self.values + &other.values,
        })
    }

    pub fn sub(&self, other: &GridFunction) -> Result<GridFunction> {
        self.grid.ensure_same(&other.grid)?;
        Ok(GridFunction {
            grid: self.grid,
            values: &self.values - &other.values,
        })
    }

    /// Subtracts the average value so the result integrates to zero.
    pub fn centered(&self) -> GridFunction {
        let mean = self.values.mean();
        GridFunction {
            grid: self.grid,
            values: self.values.add_scalar(-mean),
        }
    }
}

/// A strictly positive function integrating to one.
#[derive(Debug, Clone, PartialEq)]
pub struct Density(GridFunction);

impl Density {
    /// Wraps `f`, checking positivity and unit integral.
    pub fn new(f: GridFunction) -> Result<Self> {
        check_positive(&f)?;
        let total = f.integrate();
        if (total - 1.0).abs() > NORMALIZATION_TOL {
            return Err(Error::InvalidParameter(format!(
                "density integrates to {total}, expected 1"
            )));
        }
        Ok(Self(f))
    }

    /// Rescales a positive function to integrate to one.
    pub fn normalize(f: GridFunction) -> Result<Self> {
        check_positive(&f)?;
        let total = f.integrate();
        Ok(Self(f.scale(1.0 / total)))
    }

    pub fn uniform(grid: Grid) -> Self {
        Self(GridFunction::constant(grid, 1.0 / grid.length()))
    }

    pub fn into_inner(self) -> GridFunction {
        self.0
    }

    /// Probability mass of every cell; sums to one.
    pub fn cell_probabilities(&self) -> DVector<f64> {
        self.0.values() * self.0.grid().width()
    }
}

impl Deref for Density {
    type Target = GridFunction;

    fn deref(&self) -> &GridFunction {
        &self.0
    }
}

pub(crate) fn check_positive(f: &GridFunction) -> Result<()> {
    match f.values().iter().position(|&v| v.is_nan() || v <= 0.0) {
        Some(cell) => Err(Error::NonPositive {
            cell,
            value: f.values()[cell],
        }),
        None => Ok(()),
    }
}

/// A square-integrable function integrating to zero, the clr image of a density.
#[derive(Debug, Clone, PartialEq)]
pub struct ClrFunction(GridFunction);

impl ClrFunction {
    /// Wraps `f`, checking that it integrates to zero relative to its scale.
    pub fn new(f: GridFunction) -> Result<Self> {
        let total = f.integrate();
        let scale = f.grid().width() * f.values().abs().sum();
        if total.abs() > NORMALIZATION_TOL * scale.max(1.0) {
            return Err(Error::InvalidParameter(format!(
                "clr function integrates to {total}, expected 0"
            )));
        }
        Ok(Self(f))
    }

    /// Projects `f` onto the zero-integral subspace.
    pub fn centered(f: &GridFunction) -> Self {
        Self(f.centered())
    }

    pub fn zeros(grid: Grid) -> Self {
        Self(GridFunction::zeros(grid))
    }

    pub fn into_inner(self) -> GridFunction {
        self.0
    }

    pub(crate) fn from_unchecked(f: GridFunction) -> Self {
        Self(f)
    }
}

impl Deref for ClrFunction {
    type Target = GridFunction;

    fn deref(&self) -> &GridFunction {
        &self.0
    }
}
