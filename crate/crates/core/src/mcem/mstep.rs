//! Weighted-moment M-step.

use nalgebra::{DMatrix, DVector};

use super::estep::EStepDraws;
use crate::error::{Error, Result};
use crate::linalg::symmetrize;

/// Weighted mean and covariance of the lifted draws, with each group's
/// weights summing to one and groups averaged with divisor `n`.
///
/// The moments are accumulated in score coordinates and lifted once:
/// `ν' = ν + V z̄`, `Σ' = V S Vᵀ`. No projection is applied.
pub fn m_step(draws: &EStepDraws) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let n = draws.groups.len();
    if n == 0 {
        return Err(Error::InvalidParameter("M-step needs at least one group".into()));
    }
    let dim = draws.lift.ncols();
    let mut mean = DVector::zeros(dim);
    for g in &draws.groups {
        mean.gemv(1.0, &g.scores, &DVector::from_column_slice(&g.weights), 1.0);
    }
    mean /= n as f64;

    let mut scatter = DMatrix::zeros(dim, dim);
    for g in &draws.groups {
        let mut centered = g.scores.clone();
        for (t, mut col) in centered.column_iter_mut().enumerate() {
            col -= &mean;
            col *= g.weights[t].sqrt();
        }
        scatter.gemm(1.0, &centered, &centered.transpose(), 1.0);
    }
    scatter /= n as f64;

    let nu = &draws.nu + &draws.lift * &mean;
    let sigma = &draws.lift * symmetrize(&scatter) * draws.lift.transpose();
    Ok((nu, symmetrize(&sigma)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mcem::estep::GroupDraws;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn unit_weights_give_sample_moments() {
        let zs = [0.0, 1.0, 5.0];
        let draws = EStepDraws {
            nu: DVector::zeros(2),
            lift: DMatrix::from_column_slice(2, 1, &[1.0, 0.0]),
            groups: zs
                .iter()
                .map(|&z| GroupDraws::point(DVector::from_element(1, z)))
                .collect(),
        };
        let (nu, sigma) = m_step(&draws).unwrap();
        assert_abs_diff_eq!(nu[0], 2.0, epsilon = 1e-14);
        // divisor n: ((−2)² + (−1)² + 3²)/3
        assert_abs_diff_eq!(sigma[(0, 0)], 14.0 / 3.0, epsilon = 1e-12);
        assert_eq!(sigma[(1, 1)], 0.0);
    }

    #[test]
    fn identical_draws_give_zero_covariance() {
        let z = DVector::from_vec(vec![0.4, -0.2]);
        let draws = EStepDraws {
            nu: DVector::from_vec(vec![1.0, 1.0, 1.0]),
            lift: DMatrix::from_fn(3, 2, |r, c| (r + 2 * c) as f64),
            groups: vec![GroupDraws::point(z.clone()); 4],
        };
        let (_, sigma) = m_step(&draws).unwrap();
        assert!(sigma.amax() < 1e-15);
    }

    #[test]
    fn matches_double_sum_formulas() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let (n_coef, dim, n) = (6, 3, 5);
        let lift = DMatrix::from_fn(n_coef, dim, |_, _| rng.random_range(-1.0..1.0));
        let nu = DVector::from_fn(n_coef, |_, _| rng.random_range(-1.0..1.0));
        let groups: Vec<GroupDraws> = (0..n)
            .map(|i| {
                let r = 3 + i;
                let raw: Vec<f64> = (0..r).map(|_| rng.random::<f64>()).collect();
                let total: f64 = raw.iter().sum();
                GroupDraws {
                    scores: DMatrix::from_fn(dim, r, |_, _| rng.random_range(-2.0..2.0)),
                    weights: raw.iter().map(|w| w / total).collect(),
                    mode: DVector::zeros(dim),
                    ess: 1.0,
                    mode_converged: true,
                }
            })
            .collect();
        let draws = EStepDraws { nu, lift, groups };
        let (nu_new, sigma_new) = m_step(&draws).unwrap();

        // globally renormalized weights over all (i, t), on lifted θ
        let total: f64 = draws.groups.iter().flat_map(|g| g.weights.iter()).sum();
        let mut mean = DVector::zeros(n_coef);
        for (i, g) in draws.groups.iter().enumerate() {
            for t in 0..g.len() {
                mean += draws.theta(i, t) * (g.weights[t] / total);
            }
        }
        let mut cov = DMatrix::zeros(n_coef, n_coef);
        for (i, g) in draws.groups.iter().enumerate() {
            for t in 0..g.len() {
                let d = draws.theta(i, t) - &mean;
                cov += &d * d.transpose() * (g.weights[t] / total);
            }
        }
        for k in 0..n_coef {
            assert_abs_diff_eq!(nu_new[k], mean[k], epsilon = 1e-12);
            for l in 0..n_coef {
                assert_abs_diff_eq!(sigma_new[(k, l)], cov[(k, l)], epsilon = 1e-12);
            }
        }
    }
}
