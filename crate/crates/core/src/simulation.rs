//! Simulation study comparing the latent model with the two-step baseline on
//! densities drawn from a known two-component process.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::{cov_distance, mean_distance, oracle_estimates, two_step_pca, OracleEstimates};
use crate::function_space::{clr_inverse, Basis, Density, Grid, GridFunction};
use crate::init::{init_from_kde, KdeConfig, SampleSet};
use crate::mcem::{fit, McemConfig};
use crate::rng::{self, derive_seed, tag};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StudyConfig {
    pub n_groups: usize,
    pub m_per_group: Vec<usize>,
    pub n_replicates: usize,
    pub grid: Grid,
    /// KDE bandwidth for each entry of `m_per_group`.
    pub bandwidths: Vec<f64>,
    pub mcem: McemConfig,
    pub seed: u64,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            n_groups: 30,
            m_per_group: vec![20, 40, 80, 160],
            n_replicates: 100,
            grid: Grid::new(0.0, 1.0, 200).expect("valid grid"),
            bandwidths: vec![0.12, 0.09, 0.08, 0.07],
            mcem: McemConfig::default(),
            seed: 20_240_601,
        }
    }
}

impl StudyConfig {
    /// Default bandwidth for a sample size: the tabulated value for the
    /// standard sizes, otherwise the one of the nearest tabulated size.
    pub fn default_bandwidth(m: usize) -> f64 {
        let table = [(20usize, 0.12), (40, 0.09), (80, 0.08), (160, 0.07)];
        table
            .iter()
            .min_by_key(|(size, _)| size.abs_diff(m))
            .map(|&(_, h)| h)
            .expect("non-empty table")
    }

    /// Restricts the study to the given sample sizes with their default bandwidths.
    pub fn with_m_list(mut self, m: Vec<usize>) -> Self {
        self.bandwidths = m.iter().map(|&m| Self::default_bandwidth(m)).collect();
        self.m_per_group = m;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_groups < 2 {
            return Err(Error::InvalidParameter(format!(
                "need at least two groups, got {}",
                self.n_groups
            )));
        }
        if self.n_replicates == 0 {
            return Err(Error::InvalidParameter("need at least one replicate".into()));
        }
        if self.m_per_group.is_empty() || self.m_per_group.contains(&0) {
            return Err(Error::InvalidParameter(
                "sample sizes per group must be positive".into(),
            ));
        }
        if self.bandwidths.len() != self.m_per_group.len() {
            return Err(Error::InvalidParameter(format!(
                "{} bandwidths for {} sample sizes",
                self.bandwidths.len(),
                self.m_per_group.len()
            )));
        }
        for &h in &self.bandwidths {
            KdeConfig::new(h)?;
        }
        self.mcem.validate()
    }
}

/// Mean and two orthogonal modes of variation of the true clr process.
#[derive(Debug, Clone)]
pub struct TrueProcess {
    pub mu: GridFunction,
    pub g1: GridFunction,
    pub g2: GridFunction,
    pub var1: f64,
    pub var2: f64,
}

/// `μ(x) = −20(x−½)² + 5/3`, `g₁ = sin(10(x−½))/5` with variance 0.5 and
/// `g₂ = cos(2π(x−½))/10` with variance 0.2, at the cell midpoints.
pub fn true_process(grid: &Grid) -> TrueProcess {
    let f = |h: fn(f64) -> f64| GridFunction::from_fn(*grid, h).expect("finite");
    TrueProcess {
        mu: f(|x| -20.0 * (x - 0.5).powi(2) + 5.0 / 3.0),
        g1: f(|x| (10.0 * (x - 0.5)).sin() / 5.0),
        g2: f(|x| (2.0 * std::f64::consts::PI * (x - 0.5)).cos() / 10.0),
        var1: 0.5,
        var2: 0.2,
    }
}

/// `n` densities `clr⁻¹(μ + z₁g₁ + z₂g₂)` with independent normal scores,
/// returned with the `n × 2` score matrix.
pub fn draw_densities<R: Rng + ?Sized>(process: &TrueProcess, n: usize, rng: &mut R) -> (Vec<Density>, DMatrix<f64>) {
    let d1 = Normal::new(0.0, process.var1.sqrt()).expect("positive variance");
    let d2 = Normal::new(0.0, process.var2.sqrt()).expect("positive variance");
    let mut scores = DMatrix::zeros(n, 2);
    let densities = (0..n)
        .map(|i| {
            let z1 = d1.sample(rng);
            let z2 = d2.sample(rng);
            scores[(i, 0)] = z1;
            scores[(i, 1)] = z2;
            let mut values = process.mu.values().clone();
            values.axpy(z1, process.g1.values(), 1.0);
            values.axpy(z2, process.g2.values(), 1.0);
            clr_inverse(&GridFunction::new(*process.mu.grid(), values).expect("finite"))
        })
        .collect();
    (densities, scores)
}

/// `m` draws by inverting the cell-level CDF, placed uniformly inside the
/// selected cell.
pub fn sample_from_density<R: Rng + ?Sized>(f: &Density, m: usize, rng: &mut R) -> Result<Vec<f64>> {
    if m == 0 {
        return Err(Error::InvalidParameter("number of draws must be positive".into()));
    }
    let grid = f.grid();
    let probs = f.cell_probabilities();
    let mut cdf = Vec::with_capacity(probs.len());
    let mut acc = 0.0;
    for p in probs.iter() {
        acc += p;
        cdf.push(acc);
    }
    let total = acc;
    let last = grid.n_cells() - 1;
    Ok((0..m)
        .map(|_| {
            let u: f64 = rng.random::<f64>() * total;
            let k = cdf.partition_point(|&c| c <= u).min(last);
            let v: f64 = rng.random();
            (grid.lower() + (k as f64 + v) * grid.width()).clamp(grid.lower(), grid.upper())
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    LatentModel,
    TwoStep,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::LatentModel => "latent_model",
            Method::TwoStep => "two_step",
        })
    }
}

/// One method's distances to the oracle in one replicate. Failed fits keep
/// their row with `NaN` distances and the error in `status`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyRow {
    pub replicate: usize,
    pub m_per_group: usize,
    pub method: Method,
    pub mean_distance: f64,
    pub cov_distance: f64,
    pub status: String,
}

impl StudyRow {
    pub fn is_ok(&self) -> bool {
        self.mean_distance.is_finite() && self.cov_distance.is_finite()
    }
}

pub const STATUS_OK: &str = "ok";
pub const STATUS_NOT_CONVERGED: &str = "not_converged";

/// Rows ordered by sample size, then replicate, then method.
pub fn run_study(cfg: &StudyConfig) -> Result<Vec<StudyRow>> {
    cfg.validate()?;
    let process = true_process(&cfg.grid);
    let jobs: Vec<(usize, f64, usize)> = cfg
        .m_per_group
        .iter()
        .zip(&cfg.bandwidths)
        .flat_map(|(&m, &h)| (0..cfg.n_replicates).map(move |rep| (m, h, rep)))
        .collect();
    let rows = jobs
        .par_iter()
        .map(|&(m, h, rep)| run_replicate(cfg, &process, m, h, rep))
        .collect::<Vec<_>>();
    Ok(rows.into_iter().flatten().collect())
}

/// Data of one replicate: true densities, their oracle estimates and the
/// observations.
pub fn replicate_data(
    cfg: &StudyConfig,
    process: &TrueProcess,
    m: usize,
    replicate: usize,
) -> Result<(OracleEstimates, SampleSet)> {
    let seed = derive_seed(cfg.seed, &[tag::STUDY, m as u64, replicate as u64]);
    let mut rng = rng::stream(seed, &[tag::SAMPLES]);
    let (densities, _) = draw_densities(process, cfg.n_groups, &mut rng);
    let groups = densities
        .iter()
        .map(|f| sample_from_density(f, m, &mut rng))
        .collect::<Result<Vec<_>>>()?;
    let oracle = oracle_estimates(&densities)?;
    Ok((oracle, SampleSet::new(cfg.grid, groups)?))
}

fn run_replicate(
    cfg: &StudyConfig,
    process: &TrueProcess,
    m: usize,
    bandwidth: f64,
    replicate: usize,
) -> Vec<StudyRow> {
    let row = |method, result: Result<(f64, f64, bool)>| {
        let (mean_distance, cov_distance, status) = match result {
            Ok((md, cd, true)) => (md, cd, STATUS_OK.to_string()),
            Ok((md, cd, false)) => (md, cd, STATUS_NOT_CONVERGED.to_string()),
            Err(e) => {
                log::warn!("replicate {replicate}, m = {m}, {method}: {e}");
                (f64::NAN, f64::NAN, format!("failed: {e}"))
            }
        };
        StudyRow {
            replicate,
            m_per_group: m,
            method,
            mean_distance,
            cov_distance,
            status,
        }
    };
    let prepared = replicate_data(cfg, process, m, replicate).and_then(|(oracle, data)| {
        let kde_cfg = KdeConfig::new(bandwidth)?;
        Ok((oracle, data, kde_cfg))
    });
    let (oracle, data, kde_cfg) = match prepared {
        Ok(p) => p,
        Err(e) => {
            let msg = e.to_string();
            return [Method::LatentModel, Method::TwoStep]
                .into_iter()
                .map(|method| row(method, Err(Error::Input(msg.clone()))))
                .collect();
        }
    };
    let grid = cfg.grid;

    let latent = (|| {
        let basis = Arc::new(Basis::indicator(grid));
        let init = init_from_kde(&data, &kde_cfg, basis)?;
        let mcem = McemConfig {
            seed: derive_seed(cfg.seed, &[tag::ESTEP, m as u64, replicate as u64]),
            ..cfg.mcem
        };
        let res = fit(&data, init, &mcem)?;
        let md = mean_distance(res.pca.mean(), &oracle.mean)?;
        let cd = cov_distance(&grid, &res.model.kernel_matrix(), &oracle.covariance)?;
        Ok((md, cd, res.converged))
    })();
    let two_step = (|| {
        let pca = two_step_pca(&data, &kde_cfg)?;
        let md = mean_distance(pca.mean(), &oracle.mean)?;
        let cd = cov_distance(&grid, &pca.covariance_kernel(), &oracle.covariance)?;
        Ok((md, cd, true))
    })();
    vec![row(Method::LatentModel, latent), row(Method::TwoStep, two_step)]
}

/// Mean and standard deviation of each distance per sample size and method,
/// over rows with finite distances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub m_per_group: usize,
    pub method: Method,
    pub n_ok: usize,
    pub n_failed: usize,
    pub mean_distance_mean: f64,
    pub mean_distance_sd: f64,
    pub cov_distance_mean: f64,
    pub cov_distance_sd: f64,
}

pub fn summarize(rows: &[StudyRow]) -> Vec<SummaryRow> {
    let mut keys: Vec<(usize, Method)> = rows.iter().map(|r| (r.m_per_group, r.method)).collect();
    keys.sort();
    keys.dedup();
    keys.into_iter()
        .map(|(m, method)| {
            let matching: Vec<&StudyRow> = rows
                .iter()
                .filter(|r| r.m_per_group == m && r.method == method)
                .collect();
            let ok: Vec<&&StudyRow> = matching.iter().filter(|r| r.is_ok()).collect();
            let md: Vec<f64> = ok.iter().map(|r| r.mean_distance).collect();
            let cd: Vec<f64> = ok.iter().map(|r| r.cov_distance).collect();
            SummaryRow {
                m_per_group: m,
                method,
                n_ok: ok.len(),
                n_failed: matching.len() - ok.len(),
                mean_distance_mean: mean(&md),
                mean_distance_sd: sd(&md),
                cov_distance_mean: mean(&cd),
                cov_distance_sd: sd(&cd),
            }
        })
        .collect()
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Sample standard deviation (divisor `n − 1`); zero for a single value.
fn sd(v: &[f64]) -> f64 {
    match v.len() {
        0 => f64::NAN,
        1 => 0.0,
        n => {
            let mu = mean(v);
            (v.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        }
    }
}
