//! Densities with respect to a discrete measure: compositions of `D`
//! categories and their count data.
//!
//! The categories are treated as a `D`-cell grid on `[0, D]` with unit cell
//! width, so integrals are sums over categories and the continuous engine
//! applies unchanged. The Egozcue vectors form an orthonormal basis of the
//! sum-zero hyperplane.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::function_space::{Basis, Density, Grid};
use crate::init::init_identity;
use crate::mcem::{fit_binned, BinnedGroup, FitResult, McemConfig};

const SIMPLEX_TOL: f64 = 1e-12;

/// Strictly positive probabilities summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct Composition {
    probs: DVector<f64>,
}

impl Composition {
    pub fn new(probs: DVector<f64>) -> Result<Self> {
        if probs.len() < 2 {
            return Err(Error::InvalidParameter("a composition needs at least two parts".into()));
        }
        for (cell, &value) in probs.iter().enumerate() {
            if !value.is_finite() {
                return Err(Error::NonFinite { cell });
            }
            if value <= 0.0 {
                return Err(Error::NonPositive { cell, value });
            }
        }
        let total = probs.sum();
        if (total - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::InvalidParameter(format!("probabilities sum to {total}, not 1")));
        }
        Ok(Self { probs })
    }

    /// Rescales positive weights to sum to one.
    pub fn closure(weights: DVector<f64>) -> Result<Self> {
        let total = weights.sum();
        Self::new(weights / total)
    }

    /// The composition of a density on a unit-width category grid.
    pub fn from_density(f: &Density) -> Result<Self> {
        Self::closure(f.cell_probabilities())
    }

    pub fn probs(&self) -> &DVector<f64> {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }
}

/// `log π − mean(log π)`.
pub fn clr_discrete(pi: &Composition) -> DVector<f64> {
    let logs = pi.probs.map(f64::ln);
    let mean = logs.mean();
    logs.map(|l| l - mean)
}

/// Closure of `exp(ρ)`.
pub fn clr_discrete_inverse(rho: &DVector<f64>) -> Result<Composition> {
    if rho.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter("clr coordinates must be finite".into()));
    }
    let max = rho.max();
    let w = rho.map(|v| (v - max).exp());
    let total = w.sum();
    Ok(Composition { probs: w / total })
}

/// Aitchison inner product `(1/2D) Σ_ij log(a_i/a_j) log(b_i/b_j)`.
pub fn aitchison_inner_product(a: &Composition, b: &Composition) -> Result<f64> {
    let d = a.len();
    if b.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: b.len(),
        });
    }
    let mut sum = 0.0;
    for i in 0..d {
        for j in 0..d {
            sum += (a.probs[i] / a.probs[j]).ln() * (b.probs[i] / b.probs[j]).ln();
        }
    }
    Ok(sum / (2.0 * d as f64))
}

/// `D × (D−1)` matrix whose column `k−1` is
/// `√(k/(k+1)) (1/k, …, 1/k, −1, 0, …, 0)` with `k` leading entries.
pub fn egozcue_basis(d: usize) -> Result<DMatrix<f64>> {
    if d < 2 {
        return Err(Error::InvalidParameter(format!(
            "need at least two categories, got {d}"
        )));
    }
    let mut e = DMatrix::zeros(d, d - 1);
    for k in 1..d {
        let c = (k as f64 / (k + 1) as f64).sqrt();
        for row in 0..k {
            e[(row, k - 1)] = c / k as f64;
        }
        e[(k, k - 1)] = -c;
    }
    Ok(e)
}

/// Grid `[0, D]` with one unit-width cell per category.
pub fn category_grid(d: usize) -> Result<Grid> {
    Grid::new(0.0, d as f64, d)
}

/// The Egozcue vectors as basis functions on [`category_grid`].
pub fn egozcue_function_basis(d: usize) -> Result<Basis> {
    Basis::explicit(category_grid(d)?, egozcue_basis(d)?)
}

/// Category counts for each group.
#[derive(Debug, Clone, PartialEq)]
pub struct CountData {
    n_categories: usize,
    groups: Vec<Vec<u64>>,
}

impl CountData {
    pub fn new(n_categories: usize, groups: Vec<Vec<u64>>) -> Result<Self> {
        if n_categories < 2 {
            return Err(Error::InvalidParameter(format!(
                "need at least two categories, got {n_categories}"
            )));
        }
        for (i, g) in groups.iter().enumerate() {
            if g.len() != n_categories {
                return Err(Error::DimensionMismatch {
                    expected: n_categories,
                    found: g.len(),
                });
            }
            if g.iter().all(|&c| c == 0) {
                return Err(Error::EmptyGroup(i));
            }
        }
        Ok(Self { n_categories, groups })
    }

    pub fn n_categories(&self) -> usize {
        self.n_categories
    }

    pub fn groups(&self) -> &[Vec<u64>] {
        &self.groups
    }

    pub fn n_groups(&self) -> usize {
        self.groups.len()
    }
}

/// MCEM on count compositions with the Egozcue basis, starting from `ν = 0`,
/// `Σ = I`. Categories without observations need no special treatment.
pub fn fit_compositional(data: &CountData, cfg: &McemConfig) -> Result<FitResult> {
    let basis = Arc::new(egozcue_function_basis(data.n_categories())?);
    let init = init_identity(basis)?;
    let groups: Vec<BinnedGroup> = data.groups().iter().map(|g| BinnedGroup::from_counts(g)).collect();
    fit_binned(&groups, init, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mcem::{log_posterior, log_posterior_gradient, truncate, ScoreState};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn comp(v: &[f64]) -> Composition {
        Composition::closure(DVector::from_column_slice(v)).unwrap()
    }

    #[test]
    fn composition_validation() {
        assert!(Composition::new(DVector::from_vec(vec![0.5, 0.5])).is_ok());
        assert!(matches!(
            Composition::new(DVector::from_vec(vec![1.0, 0.0])),
            Err(Error::NonPositive { cell: 1, .. })
        ));
        assert!(Composition::new(DVector::from_vec(vec![0.5, 0.6])).is_err());
    }

    #[test]
    fn clr_of_uniform_is_zero() {
        let rho = clr_discrete(&comp(&[1.0; 6]));
        assert!(rho.amax() < 1e-15);
    }

    #[test]
    fn clr_closed_form() {
        let e = std::f64::consts::E;
        let rho = clr_discrete(&comp(&[e, 1.0, 1.0]));
        assert_abs_diff_eq!(rho[0], 2.0 / 3.0, epsilon = 1e-14);
        assert_abs_diff_eq!(rho[1], -1.0 / 3.0, epsilon = 1e-14);
        assert_abs_diff_eq!(rho[2], -1.0 / 3.0, epsilon = 1e-14);
    }

    #[test]
    fn first_egozcue_vector() {
        let e = egozcue_basis(4).unwrap();
        let h = 0.5f64.sqrt();
        assert_eq!(e.column(0).as_slice(), &[h, -h, 0.0, 0.0]);
        assert!(egozcue_basis(1).is_err());
    }

    #[test]
    fn egozcue_is_orthonormal_and_sum_zero() {
        for d in 2..=50 {
            let e = egozcue_basis(d).unwrap();
            let gram = e.transpose() * &e;
            assert!((gram - DMatrix::identity(d - 1, d - 1)).amax() < 1e-12);
            for col in e.column_iter() {
                assert!(col.sum().abs() < 1e-12);
            }
        }
        let b = egozcue_function_basis(10).unwrap();
        assert!(b.is_orthonormal());
        assert!(b.constraint_projector().is_none());
    }

    #[test]
    fn count_data_validation() {
        assert!(matches!(
            CountData::new(3, vec![vec![1, 0, 2], vec![0, 0, 0]]),
            Err(Error::EmptyGroup(1))
        ));
        assert!(CountData::new(3, vec![vec![1, 0]]).is_err());
        assert!(CountData::new(3, vec![vec![0, 0, 4]]).is_ok());
    }

    #[test]
    fn single_category_concentrates_mean() {
        let data = CountData::new(4, vec![vec![0, 0, 7, 0], vec![0, 0, 3, 0], vec![0, 0, 12, 0]]).unwrap();
        let cfg = McemConfig {
            max_iterations: 30,
            epsilon: 1e-2,
            ..Default::default()
        };
        let res = fit_compositional(&data, &cfg).unwrap();
        let mean = Composition::from_density(&crate::function_space::clr_inverse(res.pca.mean())).unwrap();
        let p = mean.probs();
        assert_eq!(p.imax(), 2);
        assert!(p.iter().all(|&v| v > 0.0));
        for pred in &res.predictions {
            assert!(pred.density.values().iter().all(|&v| v > 0.0));
        }
    }

    #[test]
    fn discrete_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let d = 5;
        let basis = egozcue_function_basis(d).unwrap();
        for _ in 0..5 {
            let a = DMatrix::from_fn(d - 1, d - 1, |_, _| rng.random_range(-1.0..1.0));
            let sigma = &a * a.transpose();
            let nu = DVector::from_fn(d - 1, |_, _| rng.random_range(-1.0..1.0));
            let model = crate::model::LatentDensityModel::new(Arc::new(basis.clone()), nu, sigma.clone()).unwrap();
            let t = truncate(&sigma, 1.0);
            let state = ScoreState::from_model(&model, &t).unwrap();
            let counts: Vec<u64> = (0..d)
                .map(|k| if k == 1 { 0 } else { rng.random_range(0..20) })
                .collect();
            let group = BinnedGroup::from_counts(&counts);
            let z = DVector::from_fn(t.n_components(), |_, _| rng.random_range(-1.0..1.0));
            let grad = log_posterior_gradient(&z, &group, &state).unwrap();
            for k in 0..z.len() {
                let mut zp = z.clone();
                zp[k] += 1e-5;
                let mut zm = z.clone();
                zm[k] -= 1e-5;
                let fd =
                    (log_posterior(&zp, &group, &state).unwrap() - log_posterior(&zm, &group, &state).unwrap()) / 2e-5;
                assert!((fd - grad[k]).abs() / grad[k].abs().max(1.0) < 1e-5);
            }
        }
    }

    fn composition_strategy(d: usize) -> impl Strategy<Value = Composition> {
        prop::collection::vec(0.01f64..10.0, d).prop_map(|v| comp(&v))
    }

    proptest! {
        #[test]
        fn clr_round_trip(pi in composition_strategy(7)) {
            let back = clr_discrete_inverse(&clr_discrete(&pi)).unwrap();
            prop_assert!((back.probs() - pi.probs()).amax() < 1e-12);
            prop_assert!(clr_discrete(&pi).sum().abs() < 1e-14);
        }

        #[test]
        fn clr_is_an_isometry(a in composition_strategy(6), b in composition_strategy(6)) {
            let lhs = clr_discrete(&a).dot(&clr_discrete(&b));
            let rhs = aitchison_inner_product(&a, &b).unwrap();
            prop_assert!((lhs - rhs).abs() < 1e-10);
        }
    }
}
