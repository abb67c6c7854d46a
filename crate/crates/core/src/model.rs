//! The finite-dimensional latent Gaussian process and its principal
//! component representation.
//!
//! A [`LatentDensityModel`] holds a basis `e_1..e_N` together with the mean
//! `ν` and covariance `Σ` of the coefficient vector. The clr-transformed
//! densities are `G = Σ_k θ_k e_k` with `θ ~ N(ν, Σ)`; for an orthonormal
//! basis, eigenvectors of `Σ` map to eigenfunctions of the covariance
//! operator with identical eigenvalues.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::function_space::{clr_inverse, Basis, ClrFunction, Density, Grid, GridFunction};
use crate::linalg::{fix_signs, sorted_symmetric_eigen, symmetrize, SortedEigen};

const SYMMETRY_TOL: f64 = 1e-10;
const PSD_TOL: f64 = 1e-10;
const SUM_ZERO_TOL: f64 = 1e-8;

/// Coefficient mean and covariance on a fixed basis.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentDensityModel {
    basis: Arc<Basis>,
    nu: DVector<f64>,
    sigma: DMatrix<f64>,
}

impl LatentDensityModel {
    /// Validates and wraps the given parameters without modifying them.
    pub fn new(basis: Arc<Basis>, nu: DVector<f64>, sigma: DMatrix<f64>) -> Result<Self> {
        check_shapes(&basis, &nu, &sigma)?;
        let scale = sigma.amax().max(1.0);
        if (&sigma - sigma.transpose()).amax() > SYMMETRY_TOL * scale {
            return Err(Error::InvalidModel("covariance is not symmetric".into()));
        }
        let min_eig = sorted_symmetric_eigen(&symmetrize(&sigma))
            .values
            .last()
            .copied()
            .unwrap_or(0.0);
        if min_eig < -PSD_TOL * scale {
            return Err(Error::InvalidModel(format!(
                "covariance has negative eigenvalue {min_eig}"
            )));
        }
        if basis.constraint_projector().is_some() {
            let a = basis.integrals() / basis.integrals().norm();
            let nu_scale = nu.amax().max(1.0);
            if a.dot(&nu).abs() > SUM_ZERO_TOL * nu_scale {
                return Err(Error::InvalidModel(
                    "mean coefficients violate the zero-integral constraint".into(),
                ));
            }
            if (&sigma * &a).amax() > SUM_ZERO_TOL * scale {
                return Err(Error::InvalidModel(
                    "covariance violates the zero-integral constraint".into(),
                ));
            }
        }
        Ok(Self { basis, nu, sigma })
    }

    /// Builds a model from raw estimates: symmetrizes `Σ` and projects both
    /// parameters onto the zero-integral coefficient subspace.
    pub fn from_estimates(basis: Arc<Basis>, nu: DVector<f64>, sigma: DMatrix<f64>) -> Result<Self> {
        check_shapes(&basis, &nu, &sigma)?;
        let sigma = symmetrize(&sigma);
        let (nu, sigma) = match basis.constraint_projector() {
            Some(p) => {
                let projected = &p * &sigma * &p;
                (&p * nu, symmetrize(&projected))
            }
            None => (nu, sigma),
        };
        Self::new(basis, nu, sigma)
    }

    pub fn basis(&self) -> &Basis {
        &self.basis
    }

    pub fn shared_basis(&self) -> Arc<Basis> {
        Arc::clone(&self.basis)
    }

    pub fn grid(&self) -> &Grid {
        self.basis.grid()
    }

    pub fn nu(&self) -> &DVector<f64> {
        &self.nu
    }

    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    /// Mean clr function `μ = Σ_k ν_k e_k`.
    pub fn mean_function(&self) -> GridFunction {
        self.basis.expand(&self.nu).expect("shape checked on construction")
    }

    /// Covariance kernel `K(x, x') = Σ_kl e_k(x) e_l(x') Σ_kl` on all pairs of
    /// cell midpoints.
    pub fn kernel_matrix(&self) -> DMatrix<f64> {
        let e = self.basis.values();
        e * &self.sigma * e.transpose()
    }

    /// Eigenpairs of `Σ` restricted to the zero-integral coefficient
    /// subspace, so that eigenvectors of a zero eigenvalue cannot pick up the
    /// constant direction.
    fn constrained_eigen(&self) -> SortedEigen {
        let Some(p) = self.basis.constraint_projector() else {
            return sorted_symmetric_eigen(&self.sigma);
        };
        let n = self.basis.len();
        // orthonormal basis of the range of P
        let q = sorted_symmetric_eigen(&p).vectors.columns(0, n - 1).into_owned();
        let inner = sorted_symmetric_eigen(&symmetrize(&(q.transpose() * &self.sigma * &q)));
        let mut vectors = q * inner.vectors;
        fix_signs(&mut vectors);
        SortedEigen {
            values: inner.values,
            vectors,
        }
    }

    /// Maps the eigenpairs of `Σ` to eigenfunctions of the covariance
    /// operator. All components of the zero-integral subspace are returned
    /// (`N − 1` unless the basis functions integrate to zero); scores are
    /// empty.
    pub fn eigen_decompose(&self) -> Result<PcaRepresentation> {
        if !self.basis.is_orthonormal() {
            return Err(Error::InvalidModel(
                "eigen correspondence requires an orthonormal basis".into(),
            ));
        }
        let eig = self.constrained_eigen();
        let e = self.basis.values();
        let grid = *self.grid();
        let eigenfunctions = (0..eig.values.len())
            .map(|l| {
                let values = e * eig.vectors.column(l);
                ClrFunction::new(GridFunction::new(grid, values)?)
            })
            .collect::<Result<Vec<_>>>()?;
        let eigenvalues: Vec<f64> = eig.values.iter().map(|&v| v.max(0.0)).collect();
        let mean = ClrFunction::new(self.mean_function())?;
        Ok(PcaRepresentation::new(mean, eigenfunctions, eigenvalues))
    }
}

fn check_shapes(basis: &Basis, nu: &DVector<f64>, sigma: &DMatrix<f64>) -> Result<()> {
    basis.check_len(nu.len())?;
    basis.check_len(sigma.nrows())?;
    basis.check_len(sigma.ncols())?;
    if nu.iter().chain(sigma.iter()).any(|v| !v.is_finite()) {
        return Err(Error::InvalidModel("non-finite parameter".into()));
    }
    Ok(())
}

/// Mean, eigenfunctions, eigenvalues and per-group scores of a functional
/// principal component decomposition in clr space.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaRepresentation {
    mean: ClrFunction,
    eigenfunctions: Vec<ClrFunction>,
    eigenvalues: Vec<f64>,
    total_variance: f64,
    /// `n_groups × K`.
    scores: DMatrix<f64>,
}

impl PcaRepresentation {
    /// `eigenvalues` must be sorted nonincreasing; tiny negative values are
    /// clipped to zero.
    pub fn new(mean: ClrFunction, eigenfunctions: Vec<ClrFunction>, eigenvalues: Vec<f64>) -> Self {
        debug_assert_eq!(eigenfunctions.len(), eigenvalues.len());
        let eigenvalues: Vec<f64> = eigenvalues.into_iter().map(|v| v.max(0.0)).collect();
        let total_variance = eigenvalues.iter().sum();
        let k = eigenfunctions.len();
        Self {
            mean,
            eigenfunctions,
            eigenvalues,
            total_variance,
            scores: DMatrix::zeros(0, k),
        }
    }

    pub fn grid(&self) -> &Grid {
        self.mean.grid()
    }

    pub fn mean(&self) -> &ClrFunction {
        &self.mean
    }

    pub fn eigenfunctions(&self) -> &[ClrFunction] {
        &self.eigenfunctions
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn n_components(&self) -> usize {
        self.eigenfunctions.len()
    }

    pub fn scores(&self) -> &DMatrix<f64> {
        &self.scores
    }

    /// Sum of all eigenvalues, including components dropped by [`Self::truncate`].
    pub fn total_variance(&self) -> f64 {
        self.total_variance
    }

    /// Cumulative fraction of the total variance explained by the first `k`
    /// components, for every `k`.
    pub fn variance_explained(&self) -> Vec<f64> {
        let mut acc = 0.0;
        self.eigenvalues
            .iter()
            .map(|v| {
                acc += v;
                if self.total_variance > 0.0 {
                    acc / self.total_variance
                } else {
                    1.0
                }
            })
            .collect()
    }

    pub fn with_scores(mut self, scores: DMatrix<f64>) -> Result<Self> {
        if scores.ncols() != self.n_components() {
            return Err(Error::DimensionMismatch {
                expected: self.n_components(),
                found: scores.ncols(),
            });
        }
        self.scores = scores;
        Ok(self)
    }

    /// Keeps the first `k` components.
    pub fn truncate(mut self, k: usize) -> Self {
        let k = k.min(self.n_components());
        self.eigenfunctions.truncate(k);
        self.eigenvalues.truncate(k);
        if self.scores.ncols() > k {
            self.scores = self.scores.columns(0, k).into_owned();
        }
        self
    }

    /// Drops components whose eigenvalue is below `rel_tol` times the largest.
    pub fn retain_positive(self, rel_tol: f64) -> Self {
        let max = self.eigenvalues.first().copied().unwrap_or(0.0);
        let k = self
            .eigenvalues
            .iter()
            .take_while(|&&v| v > 0.0 && v > rel_tol * max)
            .count();
        self.truncate(k)
    }

    /// `μ + Σ_{k<K} s_k φ_k` using the first `k_components` scores.
    pub fn clr_function(&self, scores: &[f64], k_components: usize) -> Result<GridFunction> {
        if k_components > self.n_components() {
            return Err(Error::InvalidParameter(format!(
                "{k_components} components requested, {} available",
                self.n_components()
            )));
        }
        if scores.len() < k_components {
            return Err(Error::DimensionMismatch {
                expected: k_components,
                found: scores.len(),
            });
        }
        let mut values = self.mean.values().clone();
        for (phi, &s) in self.eigenfunctions.iter().zip(scores).take(k_components) {
            values.axpy(s, phi.values(), 1.0);
        }
        GridFunction::new(*self.grid(), values)
    }

    /// `clr⁻¹(μ + Σ_{k<K} s_k φ_k)`.
    pub fn reconstruct_density(&self, scores: &[f64], k_components: usize) -> Result<Density> {
        Ok(clr_inverse(&self.clr_function(scores, k_components)?))
    }

    /// Density-level view: the back-transformed mean and the perturbations
    /// `μ ± σ_k φ_k` for every component.
    pub fn bayes_pca_view(&self) -> DensityView {
        let mean = clr_inverse(&self.mean);
        let shifted = |sign: f64| -> Vec<Density> {
            self.eigenfunctions
                .iter()
                .zip(&self.eigenvalues)
                .map(|(phi, var)| {
                    let mut values = self.mean.values().clone();
                    values.axpy(sign * var.sqrt(), phi.values(), 1.0);
                    clr_inverse(&GridFunction::new(*self.grid(), values).expect("finite"))
                })
                .collect()
        };
        DensityView {
            mean,
            plus: shifted(1.0),
            minus: shifted(-1.0),
        }
    }

    /// `Σ_k σ_k² φ_k(x) φ_k(x')` on all pairs of cell midpoints.
    pub fn covariance_kernel(&self) -> DMatrix<f64> {
        let n = self.grid().n_cells();
        let mut c = DMatrix::zeros(n, n);
        for (phi, &var) in self.eigenfunctions.iter().zip(&self.eigenvalues) {
            c.ger(var, phi.values(), phi.values(), 1.0);
        }
        c
    }
}

/// Back-transformed principal components.
#[derive(Debug, Clone)]
pub struct DensityView {
    pub mean: Density,
    /// `clr⁻¹(μ + σ_k φ_k)`.
    pub plus: Vec<Density>,
    /// `clr⁻¹(μ − σ_k φ_k)`.
    pub minus: Vec<Density>,
}
