//! Grouped observations, kernel density estimates and MCEM starting values.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::function_space::{clr, Basis, Density, Grid, GridFunction};
use crate::model::LatentDensityModel;

/// Observations `x_i1..x_im_i` for each of `n` groups on a common interval.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    grid: Grid,
    groups: Vec<Vec<f64>>,
}

impl SampleSet {
    pub fn new(grid: Grid, groups: Vec<Vec<f64>>) -> Result<Self> {
        for (i, g) in groups.iter().enumerate() {
            if g.is_empty() {
                return Err(Error::EmptyGroup(i));
            }
            if let Some(&value) = g.iter().find(|&&x| !grid.contains(x)) {
                return Err(Error::OutOfRange {
                    value,
                    lower: grid.lower(),
                    upper: grid.upper(),
                });
            }
        }
        Ok(Self { grid, groups })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn groups(&self) -> &[Vec<f64>] {
        &self.groups
    }

    pub fn n_groups(&self) -> usize {
        self.groups.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KdeConfig {
    /// Standard deviation of the Gaussian kernel, in data units.
    pub bandwidth: f64,
    /// Lower bound applied before renormalization so the clr stays finite.
    pub floor: f64,
}

impl KdeConfig {
    pub const DEFAULT_FLOOR: f64 = 1e-10;

    pub fn new(bandwidth: f64) -> Result<Self> {
        let cfg = Self {
            bandwidth,
            floor: Self::DEFAULT_FLOOR,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.bandwidth > 0.0 && self.bandwidth.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "bandwidth must be positive, got {}",
                self.bandwidth
            )));
        }
        if !(self.floor > 0.0 && self.floor.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "density floor must be positive, got {}",
                self.floor
            )));
        }
        Ok(())
    }
}

/// Gaussian kernel density estimate at the cell midpoints, floored and
/// renormalized on the grid interval (no boundary reflection).
pub fn kde(observations: &[f64], cfg: &KdeConfig, grid: &Grid) -> Result<Density> {
    cfg.validate()?;
    if observations.is_empty() {
        return Err(Error::InvalidParameter(
            "kernel density estimate needs at least one observation".into(),
        ));
    }
    let h = cfg.bandwidth;
    let norm = 1.0 / (observations.len() as f64 * h * (2.0 * std::f64::consts::PI).sqrt());
    let values = DVector::from_fn(grid.n_cells(), |k, _| {
        let x = grid.midpoint(k);
        let sum: f64 = observations
            .iter()
            .map(|&xj| {
                let u = (x - xj) / h;
                (-0.5 * u * u).exp()
            })
            .sum();
        (sum * norm).max(cfg.floor)
    });
    Density::normalize(GridFunction::new(*grid, values)?)
}

/// clr-transformed KDE of every group, expanded in `basis`.
pub(crate) fn kde_coefficients(data: &SampleSet, cfg: &KdeConfig, basis: &Basis) -> Result<Vec<DVector<f64>>> {
    data.grid().ensure_same(basis.grid())?;
    data.groups()
        .par_iter()
        .map(|obs| {
            let f = kde(obs, cfg, data.grid())?;
            let g = clr(&f)?;
            basis.project(&g)
        })
        .collect()
}

/// Empirical mean and covariance (divisor `n`) of coefficient vectors.
pub(crate) fn empirical_moments(coeffs: &[DVector<f64>]) -> (DVector<f64>, DMatrix<f64>) {
    let n = coeffs.len();
    let dim = coeffs[0].len();
    let mut mean = DVector::zeros(dim);
    for c in coeffs {
        mean += c;
    }
    mean /= n as f64;
    let mut cov = DMatrix::zeros(dim, dim);
    for c in coeffs {
        let d = c - &mean;
        cov.ger(1.0, &d, &d, 1.0);
    }
    cov /= n as f64;
    (mean, cov)
}

/// Starting values from the clr-transformed kernel density estimates: their
/// empirical coefficient mean and covariance.
pub fn init_from_kde(data: &SampleSet, cfg: &KdeConfig, basis: Arc<Basis>) -> Result<LatentDensityModel> {
    if data.n_groups() < 2 {
        return Err(Error::TooFewGroups(data.n_groups()));
    }
    let coeffs = kde_coefficients(data, cfg, &basis)?;
    let (nu, sigma) = empirical_moments(&coeffs);
    LatentDensityModel::from_estimates(basis, nu, sigma)
}

/// `ν = 0`, `Σ = I`, projected onto the zero-integral subspace when the basis
/// functions do not already integrate to zero.
pub fn init_identity(basis: Arc<Basis>) -> Result<LatentDensityModel> {
    let n = basis.len();
    LatentDensityModel::from_estimates(basis, DVector::zeros(n), DMatrix::identity(n, n))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compositional::egozcue_function_basis;
    use crate::linalg::sorted_symmetric_eigen;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit(n: usize) -> Grid {
        Grid::new(0.0, 1.0, n).unwrap()
    }

    #[test]
    fn sample_set_validation() {
        let g = unit(10);
        assert!(matches!(
            SampleSet::new(g, vec![vec![0.5], vec![]]),
            Err(Error::EmptyGroup(1))
        ));
        assert!(matches!(
            SampleSet::new(g, vec![vec![0.5, 1.5]]),
            Err(Error::OutOfRange { value, .. }) if value == 1.5
        ));
    }

    #[test]
    fn kde_single_point_is_symmetric_and_normalized() {
        let g = unit(100);
        let f = kde(&[0.5], &KdeConfig::new(0.05).unwrap(), &g).unwrap();
        assert_abs_diff_eq!(f.integrate(), 1.0, epsilon = 1e-10);
        let v = f.values();
        assert_eq!(v.imax(), 49);
        for k in 0..50 {
            assert_abs_diff_eq!(v[k], v[99 - k], epsilon = 1e-12);
        }
    }

    #[test]
    fn kde_of_uniform_draws_is_close_to_its_expectation() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let g = unit(200);
        let h = 0.1;
        let obs: Vec<f64> = (0..1000).map(|_| rng.random::<f64>()).collect();
        let f = kde(&obs, &KdeConfig::new(h).unwrap(), &g).unwrap();
        // without reflection the estimator's expectation is the uniform density
        // smoothed by the kernel and renormalized on the interval; its value is
        // obtained by quadrature of the kernel over [0, 1]
        let smoothed = |x: f64| {
            let steps = 4000;
            (0..steps)
                .map(|s| {
                    let u = (s as f64 + 0.5) / steps as f64;
                    (-0.5 * ((x - u) / h).powi(2)).exp()
                })
                .sum::<f64>()
                / (steps as f64 * h * (2.0 * std::f64::consts::PI).sqrt())
        };
        let raw: Vec<f64> = (0..200).map(|k| smoothed(g.midpoint(k))).collect();
        let total = raw.iter().sum::<f64>() * g.width();
        let sup = (0..200)
            .map(|k| (f.values()[k] - raw[k] / total).abs())
            .fold(0.0, f64::max);
        assert!(sup < 0.15, "sup distance {sup}");
    }

    #[test]
    fn kde_floor_mechanics() {
        let g = unit(100);
        let cfg = KdeConfig {
            bandwidth: 0.01,
            floor: 1e-6,
        };
        let f = kde(&[0.05], &cfg, &g).unwrap();
        let raw_total: f64 = {
            let norm = 1.0 / (0.01 * (2.0 * std::f64::consts::PI).sqrt());
            (0..100)
                .map(|k| (norm * (-0.5 * ((g.midpoint(k) - 0.05) / 0.01).powi(2)).exp()).max(1e-6))
                .sum::<f64>()
                * g.width()
        };
        assert_eq!(f.values()[90], 1e-6 / raw_total);
    }

    #[test]
    fn init_requires_two_groups() {
        let g = unit(10);
        let data = SampleSet::new(g, vec![vec![0.3]]).unwrap();
        let err = init_from_kde(&data, &KdeConfig::new(0.1).unwrap(), Arc::new(Basis::indicator(g))).unwrap_err();
        assert!(err.to_string().contains("init_identity"));
    }

    #[test]
    fn identical_groups_give_zero_covariance() {
        let g = unit(50);
        let data = SampleSet::new(g, vec![vec![0.2, 0.6, 0.7]; 2]).unwrap();
        let m = init_from_kde(&data, &KdeConfig::new(0.1).unwrap(), Arc::new(Basis::indicator(g))).unwrap();
        assert!(m.sigma().amax() < 1e-20);
        assert!(m.nu().sum().abs() < 1e-10);
    }

    #[test]
    fn init_matches_brute_force_covariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let g = unit(60);
        let groups: Vec<Vec<f64>> = (0..30)
            .map(|_| {
                let c: f64 = rng.random_range(0.2..0.8);
                (0..25)
                    .map(|_| (c + 0.15 * (rng.random::<f64>() - 0.5)).clamp(0.0, 1.0))
                    .collect()
            })
            .collect();
        let data = SampleSet::new(g, groups.clone()).unwrap();
        let cfg = KdeConfig::new(0.08).unwrap();
        let basis = Arc::new(Basis::indicator(g));
        let m = init_from_kde(&data, &cfg, basis).unwrap();

        // oracle: clr values scaled by √Δ are the indicator coefficients,
        // covariance by explicit double loop
        let coeffs: Vec<Vec<f64>> = groups
            .iter()
            .map(|obs| {
                let f = kde(obs, &cfg, &g).unwrap();
                let logs: Vec<f64> = f.values().iter().map(|v| v.ln()).collect();
                let mean = logs.iter().sum::<f64>() / logs.len() as f64;
                logs.iter().map(|l| (l - mean) * g.width().sqrt()).collect()
            })
            .collect();
        let n = coeffs.len() as f64;
        for a in 0..60 {
            let ma = coeffs.iter().map(|c| c[a]).sum::<f64>() / n;
            assert_abs_diff_eq!(m.nu()[a], ma, epsilon = 1e-12);
            for b in 0..60 {
                let mb = coeffs.iter().map(|c| c[b]).sum::<f64>() / n;
                let cov = coeffs.iter().map(|c| (c[a] - ma) * (c[b] - mb)).sum::<f64>() / n;
                assert_abs_diff_eq!(m.sigma()[(a, b)], cov, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn identity_init_projects_constant_direction() {
        let b = Arc::new(Basis::indicator(unit(4)));
        let m = init_identity(b).unwrap();
        assert_eq!(m.nu(), &DVector::zeros(4));
        let eig = sorted_symmetric_eigen(m.sigma());
        assert_abs_diff_eq!(eig.values[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(eig.values[2], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(eig.values[3], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn identity_init_on_sum_zero_basis_is_unmodified() {
        let b = Arc::new(egozcue_function_basis(5).unwrap());
        let m = init_identity(b).unwrap();
        assert_eq!(m.sigma(), &DMatrix::identity(4, 4));
    }
}
