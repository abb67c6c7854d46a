//! The two-step baseline (kernel density estimates followed by PCA of their
//! clr transforms) and distances to estimates from the true densities.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::function_space::{clr, ClrFunction, Density, Grid, GridFunction};
use crate::init::{kde, KdeConfig, SampleSet};
use crate::linalg::sorted_symmetric_eigen;
use crate::model::PcaRepresentation;

/// Pointwise mean and covariance (divisor `n`) of functions on a grid.
fn pointwise_moments(grid: &Grid, functions: &[GridFunction]) -> (GridFunction, DMatrix<f64>) {
    let n = functions.len() as f64;
    let cells = grid.n_cells();
    let mut mean = DVector::zeros(cells);
    for f in functions {
        mean += f.values();
    }
    mean /= n;
    let mut cov = DMatrix::zeros(cells, cells);
    for f in functions {
        let d = f.values() - &mean;
        cov.ger(1.0 / n, &d, &d, 1.0);
    }
    let mean = GridFunction::new(*grid, mean).expect("finite moments");
    (mean, cov)
}

/// Principal components of the clr-transformed kernel density estimates.
///
/// The covariance operator of the pointwise sample covariance `C` is
/// discretized as `Δ·C`; its unit eigenvectors `u` give eigenfunctions
/// `u/√Δ`. The first `min(n − 1, cells − 1)` components are kept, which covers
/// the rank of the sample covariance, and scores are `⟨ĝ_i − μ̂, φ_k⟩`.
pub fn two_step_pca(data: &SampleSet, kde_cfg: &KdeConfig) -> Result<PcaRepresentation> {
    let n = data.n_groups();
    if n < 2 {
        return Err(Error::TooFewGroups(n));
    }
    let grid = *data.grid();
    let clrs = data
        .groups()
        .par_iter()
        .map(|obs| {
            let f = kde(obs, kde_cfg, &grid)?;
            Ok(clr(&f)?.into_inner())
        })
        .collect::<Result<Vec<_>>>()?;
    let (mean, cov) = pointwise_moments(&grid, &clrs);
    let dx = grid.width();
    let eig = sorted_symmetric_eigen(&(&cov * dx));
    let k = (n - 1).min(grid.n_cells() - 1);
    let eigenfunctions: Vec<ClrFunction> = (0..k)
        .map(|l| {
            let phi = GridFunction::new(grid, eig.vectors.column(l) / dx.sqrt()).expect("finite eigenvector");
            ClrFunction::centered(&phi)
        })
        .collect();
    let mut scores = DMatrix::zeros(n, k);
    for (i, g) in clrs.iter().enumerate() {
        let centered = g.sub(&mean)?;
        for (l, phi) in eigenfunctions.iter().enumerate() {
            scores[(i, l)] = centered.inner_product(phi)?;
        }
    }
    PcaRepresentation::new(ClrFunction::centered(&mean), eigenfunctions, eig.values[..k].to_vec()).with_scores(scores)
}

/// Mean and covariance computed from the true densities.
#[derive(Debug, Clone)]
pub struct OracleEstimates {
    pub mean: ClrFunction,
    /// Covariance between cell midpoints.
    pub covariance: DMatrix<f64>,
    pub source: Vec<Density>,
}

/// Pointwise mean and covariance (divisor `n`) of the clr-transformed true
/// densities.
pub fn oracle_estimates(true_densities: &[Density]) -> Result<OracleEstimates> {
    if true_densities.len() < 2 {
        return Err(Error::TooFewGroups(true_densities.len()));
    }
    let grid = *true_densities[0].grid();
    let clrs = true_densities
        .iter()
        .map(|f| {
            grid.ensure_same(f.grid())?;
            Ok(clr(f)?.into_inner())
        })
        .collect::<Result<Vec<_>>>()?;
    let (mean, covariance) = pointwise_moments(&grid, &clrs);
    Ok(OracleEstimates {
        mean: ClrFunction::centered(&mean),
        covariance,
        source: true_densities.to_vec(),
    })
}

/// `√∫(a − b)²`.
pub fn mean_distance(a: &GridFunction, b: &GridFunction) -> Result<f64> {
    Ok(a.sub(b)?.norm())
}

/// `√∬(A − B)²` for covariances given on pairs of cell midpoints.
pub fn cov_distance(grid: &Grid, a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<f64> {
    let n = grid.n_cells();
    for m in [a, b] {
        if m.nrows() != n || m.ncols() != n {
            return Err(Error::GridMismatch(format!(
                "covariance is {}×{}, grid has {n} cells",
                m.nrows(),
                m.ncols()
            )));
        }
    }
    Ok((a - b).norm() * grid.width())
}
