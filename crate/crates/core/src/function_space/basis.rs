use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{Grid, GridFunction};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasisKind {
    /// `e_k = Δ^{-1/2} 𝟙[cell k]`, one function per cell.
    NormalizedIndicator,
    /// Arbitrary functions given by their cell values.
    Explicit,
}

/// An ordered set of basis functions on a grid together with their integrals
/// and Gram matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Basis {
    grid: Grid,
    kind: BasisKind,
    /// `n_cells × N`, column `k` holds the cell values of `e_k`.
    values: DMatrix<f64>,
    integrals: DVector<f64>,
    gram: DMatrix<f64>,
}

const ORTHONORMAL_TOL: f64 = 1e-10;

impl Basis {
    /// Normalized indicator basis with one function per grid cell.
    pub fn indicator(grid: Grid) -> Self {
        let n = grid.n_cells();
        let dx = grid.width();
        let h = dx.sqrt().recip();
        Self {
            grid,
            kind: BasisKind::NormalizedIndicator,
            values: DMatrix::from_diagonal_element(n, n, h),
            integrals: DVector::from_element(n, dx * h),
            gram: DMatrix::identity(n, n),
        }
    }

    /// Basis from explicit cell values (`n_cells × N`); the Gram matrix must
    /// be positive definite.
    pub fn explicit(grid: Grid, values: DMatrix<f64>) -> Result<Self> {
        if values.nrows() != grid.n_cells() {
            return Err(Error::DimensionMismatch {
                expected: grid.n_cells(),
                found: values.nrows(),
            });
        }
        if values.ncols() == 0 {
            return Err(Error::InvalidParameter("basis needs at least one function".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("basis values must be finite".into()));
        }
        let dx = grid.width();
        let gram = values.transpose() * &values * dx;
        if gram.clone().cholesky().is_none() {
            return Err(Error::InvalidParameter(
                "basis functions are linearly dependent (Gram matrix not positive definite)".into(),
            ));
        }
        let integrals = values.row_sum().transpose() * dx;
        Ok(Self {
            grid,
            kind: BasisKind::Explicit,
            values,
            integrals,
            gram,
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn kind(&self) -> BasisKind {
        self.kind
    }

    /// Number of basis functions `N`.
    pub fn len(&self) -> usize {
        self.values.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn integrals(&self) -> &DVector<f64> {
        &self.integrals
    }

    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    pub fn function(&self, k: usize) -> GridFunction {
        GridFunction::new(self.grid, self.values.column(k).into_owned()).expect("basis values are finite")
    }

    pub fn is_orthonormal(&self) -> bool {
        let n = self.len();
        (&self.gram - DMatrix::<f64>::identity(n, n)).amax() < ORTHONORMAL_TOL
    }

    /// `Σ_k c_k e_k`.
    pub fn expand(&self, coeffs: &DVector<f64>) -> Result<GridFunction> {
        self.check_len(coeffs.len())?;
        let values = match self.kind {
            BasisKind::NormalizedIndicator => coeffs * self.values[(0, 0)],
            BasisKind::Explicit => &self.values * coeffs,
        };
        GridFunction::new(self.grid, values)
    }

    /// Coefficients of the L² projection onto the span, `G⁻¹ (⟨g, e_k⟩)_k`.
    pub fn project(&self, g: &GridFunction) -> Result<DVector<f64>> {
        self.grid.ensure_same(g.grid())?;
        match self.kind {
            BasisKind::NormalizedIndicator => Ok(g.values() * (self.grid.width() * self.values[(0, 0)])),
            BasisKind::Explicit => {
                let rhs = self.values.transpose() * g.values() * self.grid.width();
                if self.is_orthonormal() {
                    return Ok(rhs);
                }
                self.gram
                    .clone()
                    .cholesky()
                    .map(|c| c.solve(&rhs))
                    .ok_or_else(|| Error::InvalidParameter("singular Gram matrix".into()))
            }
        }
    }

    /// Projector onto coefficient vectors whose expansion integrates to zero,
    /// `I − a aᵀ/‖a‖²` with `a` the basis integrals. `None` when every basis
    /// function already integrates to zero.
    pub fn constraint_projector(&self) -> Option<DMatrix<f64>> {
        let a = &self.integrals;
        let norm2 = a.norm_squared();
        let scale = self.grid.width() * self.values.abs().sum();
        if norm2.sqrt() <= 1e-12 * scale.max(1.0) {
            return None;
        }
        let n = self.len();
        Some(DMatrix::identity(n, n) - a * a.transpose() / norm2)
    }

    pub(crate) fn check_len(&self, found: usize) -> Result<()> {
        if found == self.len() {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                expected: self.len(),
                found,
            })
        }
    }
}
