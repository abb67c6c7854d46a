//! Importance-sampling E-step.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use super::posterior::{BinnedGroup, GroupPosterior, ModeResult, ScoreState};
use crate::error::{Error, Result};
use crate::linalg::log_sum_exp;

/// Weighted score draws of one group.
#[derive(Debug, Clone)]
pub struct GroupDraws {
    /// `N′ × r`, one draw per column.
    pub scores: DMatrix<f64>,
    /// Normalized importance weights.
    pub weights: Vec<f64>,
    pub mode: DVector<f64>,
    /// `1 / Σ w²`.
    pub ess: f64,
    pub mode_converged: bool,
}

impl GroupDraws {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// A single unit-weight draw, used when there is nothing to sample.
    pub fn point(z: DVector<f64>) -> Self {
        let dim = z.len();
        Self {
            scores: DMatrix::from_column_slice(dim, 1, z.as_slice()),
            weights: vec![1.0],
            mode: z,
            ess: 1.0,
            mode_converged: true,
        }
    }
}

/// All groups' draws together with the map `θ = ν + V z` back to basis
/// coefficients.
#[derive(Debug, Clone)]
pub struct EStepDraws {
    pub nu: DVector<f64>,
    /// `N × N′`, retained eigenvectors of the current covariance.
    pub lift: DMatrix<f64>,
    pub groups: Vec<GroupDraws>,
}

impl EStepDraws {
    /// Coefficient vector `θ_i⁽ᵗ⁾`.
    pub fn theta(&self, group: usize, draw: usize) -> DVector<f64> {
        &self.nu + &self.lift * self.groups[group].scores.column(draw)
    }

    pub fn total_draws(&self) -> usize {
        self.groups.iter().map(GroupDraws::len).sum()
    }

    pub fn mean_ess(&self) -> f64 {
        if self.groups.is_empty() {
            return 0.0;
        }
        self.groups.iter().map(|g| g.ess).sum::<f64>() / self.groups.len() as f64
    }
}

/// Draws `r` scores from `N(z*, λ diag σ²)` and weights them by the ratio of
/// the unnormalized posterior to the proposal density, in the log domain.
pub fn importance_sample<R: Rng + ?Sized>(
    group: &BinnedGroup,
    state: &ScoreState,
    mode: &ModeResult,
    lambda: f64,
    r: usize,
    rng: &mut R,
) -> Result<GroupDraws> {
    if r == 0 {
        return Err(Error::InvalidParameter(
            "importance sampling needs at least one draw".into(),
        ));
    }
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "proposal scale must be positive, got {lambda}"
        )));
    }
    if let Some(component) = state.variances().iter().position(|v| v.is_infinite()) {
        return Err(Error::ImproperPrior { component });
    }
    let dim = state.dim();
    if mode.z.len() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: mode.z.len(),
        });
    }
    let scale: Vec<f64> = state.variances().iter().map(|v| (lambda * v).sqrt()).collect();
    let mut post = GroupPosterior::new(state, group)?;
    let mut scores = DMatrix::zeros(dim, r);
    let mut log_weights = Vec::with_capacity(r);
    let mut z = DVector::zeros(dim);
    for t in 0..r {
        let mut sq = 0.0;
        for k in 0..dim {
            let eps: f64 = rng.sample(StandardNormal);
            sq += eps * eps;
            z[k] = mode.z[k] + scale[k] * eps;
        }
        // the proposal's normalizing constant is the same for every draw
        log_weights.push(post.log_density(&z) + 0.5 * sq);
        scores.set_column(t, &z);
    }
    let weights = normalize_log_weights(&log_weights)?;
    let ess = 1.0 / weights.iter().map(|w| w * w).sum::<f64>();
    Ok(GroupDraws {
        scores,
        weights,
        mode: mode.z.clone(),
        ess,
        mode_converged: mode.converged,
    })
}

pub(crate) fn normalize_log_weights(log_weights: &[f64]) -> Result<Vec<f64>> {
    let lse = log_sum_exp(log_weights);
    if !lse.is_finite() {
        return Err(Error::InvalidParameter("importance weights are not finite".into()));
    }
    let mut w: Vec<f64> = log_weights.iter().map(|lw| (lw - lse).exp()).collect();
    // remove the last bits of rounding so the weights sum to one
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= total);
    Ok(w)
}
