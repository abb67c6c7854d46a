//! Monte Carlo EM estimation of the latent model.
//!
//! Each iteration truncates the current covariance to the components that
//! explain a fixed share of its variance, samples every group's scores by
//! importance sampling around the posterior mode, and replaces `ν`, `Σ` by
//! the weighted moments of the lifted draws. After convergence the scores of
//! every group are predicted as posterior modes under the final estimates.

mod estep;
mod mstep;
mod posterior;

pub use estep::{importance_sample, EStepDraws, GroupDraws};
pub use mstep::m_step;
pub use posterior::{find_mode, log_posterior, log_posterior_gradient, BinnedGroup, ModeResult, ScoreState};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::function_space::{clr_inverse, Density, GridFunction};
use crate::init::SampleSet;
use crate::linalg::{euclidean_distance, frobenius_distance, sorted_symmetric_eigen};
use crate::model::{LatentDensityModel, PcaRepresentation};
use crate::rng::{self, tag};

/// Components of the final decomposition with eigenvalues below this fraction
/// of the largest are numerically zero and dropped.
pub const EIGENVALUE_REL_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct McemConfig {
    /// Threshold on `‖Δν‖₂` and `‖ΔΣ‖_F`.
    pub epsilon: f64,
    /// Scale of the proposal variance.
    pub lambda: f64,
    /// `r₀`; iteration `h` uses `r₀·h` draws per group.
    pub mc_growth: usize,
    pub var_explained: f64,
    pub max_iterations: usize,
    pub mode_tol: f64,
    pub mode_max_steps: usize,
    pub seed: u64,
}

impl Default for McemConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-3,
            lambda: 1.0,
            mc_growth: 10,
            var_explained: 0.99999,
            max_iterations: 200,
            mode_tol: 1e-6,
            mode_max_steps: 500,
            seed: 0,
        }
    }
}

impl McemConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")))
            }
        };
        positive("epsilon", self.epsilon)?;
        positive("lambda", self.lambda)?;
        positive("mode_tol", self.mode_tol)?;
        if !(self.var_explained > 0.0 && self.var_explained <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "var_explained must lie in (0, 1], got {}",
                self.var_explained
            )));
        }
        for (name, v) in [
            ("mc_growth", self.mc_growth),
            ("max_iterations", self.max_iterations),
            ("mode_max_steps", self.mode_max_steps),
        ] {
            if v == 0 {
                return Err(Error::InvalidParameter(format!("{name} must be at least 1")));
            }
        }
        Ok(())
    }
}

/// Leading eigenpairs of a covariance matrix.
#[derive(Debug, Clone)]
pub struct Truncation {
    pub eigenvalues: Vec<f64>,
    /// `N × N′`.
    pub eigenvectors: DMatrix<f64>,
    /// Set when the matrix has no positive variance; one zero-variance
    /// component is returned then.
    pub degenerate: bool,
}

impl Truncation {
    pub fn n_components(&self) -> usize {
        self.eigenvalues.len()
    }
}

/// Smallest `N′ ≥ 1` whose leading eigenvalues explain at least
/// `var_explained` of the trace, restricted to eigenvalues that are positive
/// beyond rounding error.
pub fn truncate(sigma: &DMatrix<f64>, var_explained: f64) -> Truncation {
    let eig = sorted_symmetric_eigen(sigma);
    let cutoff = EIGENVALUE_REL_TOL * eig.values.first().copied().unwrap_or(0.0);
    let positive: Vec<f64> = eig
        .values
        .iter()
        .copied()
        .take_while(|&v| v > 0.0 && v > cutoff)
        .collect();
    let total: f64 = positive.iter().sum();
    if positive.is_empty() || total <= 0.0 {
        return Truncation {
            eigenvalues: vec![0.0],
            eigenvectors: eig.vectors.columns(0, 1).into_owned(),
            degenerate: true,
        };
    }
    let mut acc = 0.0;
    let mut keep = positive.len();
    for (k, v) in positive.iter().enumerate() {
        acc += v;
        // tolerance absorbs rounding when the threshold is reached exactly
        if acc >= var_explained * total * (1.0 - 1e-12) {
            keep = k + 1;
            break;
        }
    }
    Truncation {
        eigenvalues: positive[..keep].to_vec(),
        eigenvectors: eig.vectors.columns(0, keep).into_owned(),
        degenerate: false,
    }
}

/// Diagnostics of one MCEM iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub h: usize,
    pub nu_change: f64,
    pub sigma_change_frobenius: f64,
    pub n_prime: usize,
    pub draws: usize,
    pub mean_ess: f64,
    /// Groups whose mode search stopped before reaching the tolerance.
    pub mode_warnings: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct McemTrace {
    pub records: Vec<IterationRecord>,
}

impl McemTrace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// Predicted scores and density of one group.
#[derive(Debug, Clone)]
pub struct Prediction {
    pub scores: DVector<f64>,
    pub clr: GridFunction,
    pub density: Density,
    pub mode_converged: bool,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub model: LatentDensityModel,
    /// Eigendecomposition of the final estimate with one score row per group.
    pub pca: PcaRepresentation,
    pub trace: McemTrace,
    pub converged: bool,
    pub iterations: usize,
    pub predictions: Vec<Prediction>,
}

/// Runs MCEM on grouped observations from `init`.
pub fn fit(data: &SampleSet, init: LatentDensityModel, cfg: &McemConfig) -> Result<FitResult> {
    data.grid().ensure_same(init.grid())?;
    let groups = data
        .groups()
        .iter()
        .map(|g| BinnedGroup::from_observations(data.grid(), g))
        .collect::<Result<Vec<_>>>()?;
    fit_binned(&groups, init, cfg)
}

/// Runs MCEM on groups already reduced to cell counts.
pub fn fit_binned(groups: &[BinnedGroup], init: LatentDensityModel, cfg: &McemConfig) -> Result<FitResult> {
    cfg.validate()?;
    if groups.is_empty() {
        return Err(Error::InvalidParameter("no groups to fit".into()));
    }
    let mut model = init;
    let mut trace = McemTrace::default();
    let mut converged = false;
    for h in 1..=cfg.max_iterations {
        let truncation = truncate(model.sigma(), cfg.var_explained);
        let draws = e_step(groups, &model, &truncation, cfg, h)?;
        let (nu, sigma) = m_step(&draws)?;
        if nu.iter().chain(sigma.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteObjective { iteration: h });
        }
        let next = LatentDensityModel::from_estimates(model.shared_basis(), nu, sigma)?;
        let record = IterationRecord {
            h,
            nu_change: euclidean_distance(next.nu(), model.nu()),
            sigma_change_frobenius: frobenius_distance(next.sigma(), model.sigma()),
            n_prime: truncation.n_components(),
            draws: draws.total_draws(),
            mean_ess: draws.mean_ess(),
            mode_warnings: draws.groups.iter().filter(|g| !g.mode_converged).count(),
        };
        log::debug!(
            "iteration {h}: |dnu| = {:.3e}, |dSigma| = {:.3e}, N' = {}, mean ESS = {:.1}",
            record.nu_change,
            record.sigma_change_frobenius,
            record.n_prime,
            record.mean_ess
        );
        if record.mode_warnings > 0 {
            log::warn!(
                "iteration {h}: mode search did not converge for {} groups",
                record.mode_warnings
            );
        }
        trace.records.push(record);
        model = next;
        if record.nu_change < cfg.epsilon && record.sigma_change_frobenius < cfg.epsilon {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("no convergence within {} iterations", cfg.max_iterations);
    }

    let pca = model.eigen_decompose()?.retain_positive(EIGENVALUE_REL_TOL);
    let predictions = predict_all(&pca, groups, cfg)?;
    let mut scores = DMatrix::zeros(groups.len(), pca.n_components());
    for (i, p) in predictions.iter().enumerate() {
        scores.row_mut(i).copy_from(&p.scores.transpose());
    }
    let pca = pca.with_scores(scores)?;
    Ok(FitResult {
        model,
        pca,
        iterations: trace.len(),
        trace,
        converged,
        predictions,
    })
}

fn e_step(
    groups: &[BinnedGroup],
    model: &LatentDensityModel,
    truncation: &Truncation,
    cfg: &McemConfig,
    h: usize,
) -> Result<EStepDraws> {
    let lift = truncation.eigenvectors.clone();
    if truncation.degenerate {
        // every draw collapses onto ν
        return Ok(EStepDraws {
            nu: model.nu().clone(),
            lift,
            groups: vec![GroupDraws::point(DVector::zeros(1)); groups.len()],
        });
    }
    let state = ScoreState::from_model(model, truncation)?;
    let r = cfg.mc_growth * h;
    let drawn = groups
        .par_iter()
        .enumerate()
        .map(|(i, group)| {
            let mode = find_mode(group, &state, cfg)?;
            let mut stream = rng::stream(cfg.seed, &[tag::ESTEP, h as u64, i as u64]);
            importance_sample(group, &state, &mode, cfg.lambda, r, &mut stream)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EStepDraws {
        nu: model.nu().clone(),
        lift,
        groups: drawn,
    })
}

fn predict_all(pca: &PcaRepresentation, groups: &[BinnedGroup], cfg: &McemConfig) -> Result<Vec<Prediction>> {
    let state = ScoreState::from_pca(pca)?;
    groups
        .par_iter()
        .map(|g| predict_with_state(pca, &state, g, cfg))
        .collect()
}

/// Posterior-mode scores of one group under a fitted decomposition and the
/// density they reconstruct.
pub fn predict_scores(pca: &PcaRepresentation, group: &BinnedGroup, cfg: &McemConfig) -> Result<Prediction> {
    let state = ScoreState::from_pca(pca)?;
    predict_with_state(pca, &state, group, cfg)
}

fn predict_with_state(
    pca: &PcaRepresentation,
    state: &ScoreState,
    group: &BinnedGroup,
    cfg: &McemConfig,
) -> Result<Prediction> {
    let mode = find_mode(group, state, cfg)?;
    let clr = pca.clr_function(mode.z.as_slice(), pca.n_components())?;
    let density = clr_inverse(&clr);
    Ok(Prediction {
        scores: mode.z,
        clr,
        density,
        mode_converged: mode.converged,
    })
}
