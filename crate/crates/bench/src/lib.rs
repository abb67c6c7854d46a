//! Fixtures shared by the benchmarks.

use ldpca_core::mcem::{BinnedGroup, EStepDraws, GroupDraws, ScoreState};
use ldpca_core::{Grid, GridFunction};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A score state on `[0, 1]` with smooth random directions.
pub fn score_state(cells: usize, dim: usize, seed: u64) -> ScoreState {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let grid = Grid::new(0.0, 1.0, cells).expect("valid grid");
    let mean = GridFunction::from_fn(grid, |x| (3.0 * x).sin())
        .expect("finite")
        .centered();
    let phases: Vec<f64> = (0..dim).map(|_| rng.random_range(0.0..6.0)).collect();
    let dirs = DMatrix::from_fn(cells, dim, |r, c| {
        let x = grid.midpoint(r);
        ((c + 1) as f64 * std::f64::consts::PI * x + phases[c]).cos()
    });
    let vars = (0..dim).map(|k| 1.0 / (k + 1) as f64).collect();
    ScoreState::new(&mean, dirs, vars).expect("valid state")
}

pub fn group(cells: usize, m: usize, seed: u64) -> BinnedGroup {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let grid = Grid::new(0.0, 1.0, cells).expect("valid grid");
    let obs: Vec<f64> = (0..m).map(|_| rng.random::<f64>().powf(1.3)).collect();
    BinnedGroup::from_observations(&grid, &obs).expect("observations in range")
}

/// Weighted draws for `n` groups of `r` draws each in `dim` dimensions.
pub fn draws(n_basis: usize, dim: usize, n: usize, r: usize, seed: u64) -> EStepDraws {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let groups = (0..n)
        .map(|_| {
            let scores = DMatrix::from_fn(dim, r, |_, _| rng.random_range(-2.0..2.0));
            let raw: Vec<f64> = (0..r).map(|_| rng.random::<f64>()).collect();
            let total: f64 = raw.iter().sum();
            GroupDraws {
                mode: DVector::zeros(dim),
                scores,
                weights: raw.iter().map(|w| w / total).collect(),
                ess: r as f64,
                mode_converged: true,
            }
        })
        .collect();
    EStepDraws {
        nu: DVector::zeros(n_basis),
        lift: DMatrix::from_fn(n_basis, dim, |_, _| rng.random_range(-1.0..1.0)),
        groups,
    }
}
