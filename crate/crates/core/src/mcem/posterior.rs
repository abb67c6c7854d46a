//! The posterior of a group's principal component scores and its mode.
//!
//! For retained eigenpairs `(σ_k², v_k)` of the current covariance and mean
//! function `μ`, the clr density of a group with scores `z` is
//! `g_z = μ + Σ_k z_k φ_k` with `φ_k = Σ_l v_kl e_l`. The unnormalized log
//! posterior is
//!
//! ```text
//! Σ_j g_z(x_j) − m log ∫ exp(g_z) − Σ_k z_k² / (2σ_k²)
//! ```
//!
//! and its gradient is `Σ_j φ(x_j) − m ⟨f_z, φ⟩ − z/σ²` with
//! `f_z = clr⁻¹(g_z)`. Observations enter only through per-cell counts.

use nalgebra::{DMatrix, DVector};

use super::McemConfig;
use crate::error::{Error, Result};
use crate::function_space::{Grid, GridFunction};
use crate::linalg::log_sum_exp;
use crate::mcem::Truncation;
use crate::model::{LatentDensityModel, PcaRepresentation};

/// A group's observations reduced to counts per grid cell.
#[derive(Debug, Clone, PartialEq)]
pub struct BinnedGroup {
    cells: Vec<usize>,
    counts: Vec<f64>,
    total: f64,
}

impl BinnedGroup {
    pub fn from_observations(grid: &Grid, observations: &[f64]) -> Result<Self> {
        let mut dense = vec![0.0; grid.n_cells()];
        for &x in observations {
            dense[grid.cell_of(x)?] += 1.0;
        }
        Ok(Self::from_dense(&dense))
    }

    /// Counts given for every cell (or category) in order.
    pub fn from_counts(counts: &[u64]) -> Self {
        let dense: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
        Self::from_dense(&dense)
    }

    fn from_dense(dense: &[f64]) -> Self {
        let (cells, counts): (Vec<usize>, Vec<f64>) = dense
            .iter()
            .enumerate()
            .filter(|(_, &c)| c > 0.0)
            .map(|(k, &c)| (k, c))
            .unzip();
        let total = counts.iter().sum();
        Self { cells, counts, total }
    }

    pub fn empty() -> Self {
        Self {
            cells: Vec::new(),
            counts: Vec::new(),
            total: 0.0,
        }
    }

    /// Number of observations `m_i`.
    pub fn total(&self) -> f64 {
        self.total
    }

    /// `(cell, count)` pairs for cells with at least one observation.
    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.cells.iter().copied().zip(self.counts.iter().copied())
    }

    fn max_cell(&self) -> Option<usize> {
        self.cells.last().copied()
    }
}

/// Mean function, retained eigenfunctions and prior score variances of the
/// current iterate.
#[derive(Debug, Clone)]
pub struct ScoreState {
    grid: Grid,
    mean: DVector<f64>,
    /// `n_cells × N′`, column `k` holds `φ_k`.
    directions: DMatrix<f64>,
    variances: Vec<f64>,
}

impl ScoreState {
    /// Variances must be positive; `+∞` encodes a flat prior on that score.
    pub fn new(mean: &GridFunction, directions: DMatrix<f64>, variances: Vec<f64>) -> Result<Self> {
        let grid = *mean.grid();
        if directions.nrows() != grid.n_cells() {
            return Err(Error::DimensionMismatch {
                expected: grid.n_cells(),
                found: directions.nrows(),
            });
        }
        if directions.ncols() != variances.len() {
            return Err(Error::DimensionMismatch {
                expected: directions.ncols(),
                found: variances.len(),
            });
        }
        for (component, &v) in variances.iter().enumerate() {
            if v == 0.0 {
                return Err(Error::ZeroVariance { component });
            }
            if v.is_nan() || v <= 0.0 {
                return Err(Error::InvalidParameter(format!(
                    "prior variance of component {component} must be positive, got {v}"
                )));
            }
        }
        Ok(Self {
            grid,
            mean: mean.values().clone(),
            directions,
            variances,
        })
    }

    /// State of an MCEM iteration: `μ = Σ ν_k e_k`, `φ_k = Σ_l v_kl e_l`.
    pub fn from_model(model: &LatentDensityModel, truncation: &Truncation) -> Result<Self> {
        let directions = model.basis().values() * &truncation.eigenvectors;
        Self::new(&model.mean_function(), directions, truncation.eigenvalues.clone())
    }

    /// State for score prediction under a fitted decomposition.
    pub fn from_pca(pca: &PcaRepresentation) -> Result<Self> {
        let grid = *pca.grid();
        let k = pca.n_components();
        let mut directions = DMatrix::zeros(grid.n_cells(), k);
        for (j, phi) in pca.eigenfunctions().iter().enumerate() {
            directions.set_column(j, phi.values());
        }
        Self::new(pca.mean(), directions, pca.eigenvalues().to_vec())
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// Number of retained components `N′`.
    pub fn dim(&self) -> usize {
        self.variances.len()
    }

    pub fn variances(&self) -> &[f64] {
        &self.variances
    }

    pub fn directions(&self) -> &DMatrix<f64> {
        &self.directions
    }

    /// `μ + Σ_k z_k φ_k` on the grid.
    pub fn clr_values(&self, z: &DVector<f64>) -> DVector<f64> {
        let mut g = self.mean.clone();
        g.gemv(1.0, &self.directions, z, 1.0);
        g
    }
}

/// Per-group terms of the log posterior with a scratch buffer, so repeated
/// evaluations do not allocate.
pub(crate) struct GroupPosterior<'a> {
    state: &'a ScoreState,
    /// `Σ_j φ(x_j)`.
    linear: DVector<f64>,
    /// `Σ_j μ(x_j)`.
    offset: f64,
    total: f64,
    log_width: f64,
    g: DVector<f64>,
}

impl<'a> GroupPosterior<'a> {
    pub(crate) fn new(state: &'a ScoreState, group: &BinnedGroup) -> Result<Self> {
        if let Some(cell) = group.max_cell().filter(|&c| c >= state.grid.n_cells()) {
            return Err(Error::InvalidParameter(format!(
                "observation in cell {cell} outside a {}-cell grid",
                state.grid.n_cells()
            )));
        }
        let mut linear = DVector::zeros(state.dim());
        let mut offset = 0.0;
        for (cell, count) in group.iter() {
            linear.axpy(count, &state.directions.row(cell).transpose(), 1.0);
            offset += count * state.mean[cell];
        }
        Ok(Self {
            state,
            linear,
            offset,
            total: group.total(),
            log_width: state.grid.width().ln(),
            g: DVector::zeros(state.grid.n_cells()),
        })
    }

    fn prior(&self, z: &DVector<f64>) -> f64 {
        z.iter()
            .zip(&self.state.variances)
            .filter(|(_, v)| v.is_finite())
            .map(|(zk, v)| -0.5 * zk * zk / v)
            .sum()
    }

    /// Fills the scratch buffer with `g_z` and returns `log ∫ exp(g_z)`.
    fn log_partition(&mut self, z: &DVector<f64>) -> f64 {
        self.g.copy_from(&self.state.mean);
        self.g.gemv(1.0, &self.state.directions, z, 1.0);
        log_sum_exp(self.g.as_slice()) + self.log_width
    }

    pub(crate) fn log_density(&mut self, z: &DVector<f64>) -> f64 {
        let mut value = self.offset + self.linear.dot(z) + self.prior(z);
        if self.total > 0.0 {
            value -= self.total * self.log_partition(z);
        }
        value
    }

    pub(crate) fn log_density_and_gradient(&mut self, z: &DVector<f64>, grad: &mut DVector<f64>) -> f64 {
        let mut value = self.offset + self.linear.dot(z) + self.prior(z);
        grad.copy_from(&self.linear);
        for ((gk, zk), v) in grad.iter_mut().zip(z.iter()).zip(&self.state.variances) {
            if v.is_finite() {
                *gk -= zk / v;
            }
        }
        if self.total > 0.0 {
            let lp = self.log_partition(z);
            value -= self.total * lp;
            // cell probabilities of f_z, so that Δ Σ f_z φ = Σ p φ
            let shift = lp - self.log_width;
            self.g.apply(|gc| *gc = (*gc - shift).exp());
            grad.gemv_tr(-self.total, &self.state.directions, &self.g, 1.0);
        }
        value
    }
}

/// Unnormalized log posterior of the scores `z` of one group.
pub fn log_posterior(z: &DVector<f64>, group: &BinnedGroup, state: &ScoreState) -> Result<f64> {
    check_dim(state, z)?;
    Ok(GroupPosterior::new(state, group)?.log_density(z))
}

/// Gradient of [`log_posterior`] with respect to `z`.
pub fn log_posterior_gradient(z: &DVector<f64>, group: &BinnedGroup, state: &ScoreState) -> Result<DVector<f64>> {
    check_dim(state, z)?;
    let mut grad = DVector::zeros(state.dim());
    GroupPosterior::new(state, group)?.log_density_and_gradient(z, &mut grad);
    Ok(grad)
}

fn check_dim(state: &ScoreState, z: &DVector<f64>) -> Result<()> {
    if z.len() == state.dim() {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            expected: state.dim(),
            found: z.len(),
        })
    }
}

/// Outcome of the posterior mode search.
#[derive(Debug, Clone)]
pub struct ModeResult {
    pub z: DVector<f64>,
    pub log_posterior: f64,
    /// Whether the gradient tolerance was met within the step budget.
    pub converged: bool,
    pub iterations: usize,
}

const ARMIJO_C: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 60;

/// Posterior mode by gradient ascent with backtracking (Armijo) line search,
/// started at `z = 0`.
///
/// Steps are taken in prior-whitened coordinates `u = z/σ`, i.e. the
/// gradient is preconditioned by the prior variances, and the tolerance
/// applies to the whitened gradient norm. Trial step lengths follow the
/// Barzilai–Borwein rule. The best iterate is returned; `converged` is false
/// when the step budget runs out first.
pub fn find_mode(group: &BinnedGroup, state: &ScoreState, cfg: &McemConfig) -> Result<ModeResult> {
    if let Some(component) = state.variances.iter().position(|v| v.is_infinite()) {
        return Err(Error::ImproperPrior { component });
    }
    let mut post = GroupPosterior::new(state, group)?;
    let dim = state.dim();
    let scale = DVector::from_iterator(dim, state.variances.iter().map(|v| v.sqrt()));

    let mut z = DVector::zeros(dim);
    let mut grad_z = DVector::zeros(dim);
    let mut value = post.log_density_and_gradient(&z, &mut grad_z);
    if !value.is_finite() {
        return Err(Error::NonFiniteObjective { iteration: 0 });
    }
    let mut grad_u = grad_z.component_mul(&scale);
    let mut step = 1.0;
    let mut trial_z = DVector::zeros(dim);
    let mut trial_grad = DVector::zeros(dim);

    for iteration in 0..cfg.mode_max_steps {
        let gnorm2 = grad_u.norm_squared();
        if gnorm2.sqrt() < cfg.mode_tol {
            return Ok(ModeResult {
                z,
                log_posterior: value,
                converged: true,
                iterations: iteration,
            });
        }
        // direction in z coordinates: σ ⊙ ∇_u = σ² ⊙ ∇_z
        let direction = grad_u.component_mul(&scale);
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACKS {
            trial_z.copy_from(&z);
            trial_z.axpy(step, &direction, 1.0);
            let trial = post.log_density_and_gradient(&trial_z, &mut trial_grad);
            if trial.is_nan() {
                return Err(Error::NonFiniteObjective {
                    iteration: iteration + 1,
                });
            }
            let roundoff = 8.0 * f64::EPSILON * value.abs().max(1.0);
            let sufficient = trial >= value + ARMIJO_C * step * gnorm2;
            // near the optimum the increase drops below rounding error; accept
            // non-decreasing steps that shrink the gradient there
            let flat = trial >= value - roundoff
                && step * gnorm2 < roundoff
                && trial_grad.component_mul(&scale).norm_squared() < gnorm2;
            if sufficient || flat {
                accepted = Some(trial);
                break;
            }
            step *= 0.5;
        }
        let Some(trial) = accepted else {
            // no ascent possible at machine precision
            return Ok(ModeResult {
                z,
                log_posterior: value,
                converged: false,
                iterations: iteration,
            });
        };
        let new_grad_u = trial_grad.component_mul(&scale);
        let s = (&trial_z - &z).component_div(&scale);
        let y = &new_grad_u - &grad_u;
        let sy = s.dot(&y);
        step = if sy < 0.0 {
            (s.norm_squared() / -sy).clamp(1e-8, 1e8)
        } else {
            1.0
        };
        std::mem::swap(&mut z, &mut trial_z);
        value = trial.max(value);
        grad_u = new_grad_u;
    }
    let converged = grad_u.norm() < cfg.mode_tol;
    Ok(ModeResult {
        z,
        log_posterior: value,
        converged,
        iterations: cfg.mode_max_steps,
    })
}
