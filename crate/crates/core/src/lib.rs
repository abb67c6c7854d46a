//! Functional principal component analysis for densities observed only
//! through samples.
//!
//! Densities on a compact interval are mapped to the Hilbert space of
//! zero-integral functions by the centered log-ratio transform. Their clr
//! images are modelled as a Gaussian process expanded in a finite basis, and
//! the mean and covariance of that process are estimated by Monte Carlo EM
//! directly from the grouped observations. The eigendecomposition of the
//! estimated covariance gives the principal components; group-level scores
//! are posterior modes.
//!
//! ```no_run
//! use std::sync::Arc;
//! use ldpca_core::{fit, init_from_kde, Basis, Grid, KdeConfig, McemConfig, SampleSet};
//!
//! let grid = Grid::new(0.0, 1.0, 100)?;
//! let data = SampleSet::new(grid, vec![vec![0.2, 0.3, 0.35], vec![0.6, 0.7]])?;
//! let init = init_from_kde(&data, &KdeConfig::new(0.1)?, Arc::new(Basis::indicator(grid)))?;
//! let result = fit(&data, init, &McemConfig::default())?;
//! println!("{:?}", result.pca.eigenvalues());
//! # Ok::<(), ldpca_core::Error>(())
//! ```

pub mod compositional;
pub mod error;
pub mod evaluation;
pub mod function_space;
pub mod init;
pub mod io;
pub mod linalg;
pub mod mcem;
pub mod model;
pub mod rng;
pub mod simulation;

pub use compositional::{fit_compositional, Composition, CountData};
pub use error::{Error, Result};
pub use evaluation::{two_step_pca, OracleEstimates};
pub use function_space::{clr, clr_inverse, Basis, BasisKind, ClrFunction, Density, Grid, GridFunction};
pub use init::{init_from_kde, init_identity, KdeConfig, SampleSet};
pub use mcem::{fit, FitResult, McemConfig, McemTrace};
pub use model::{LatentDensityModel, PcaRepresentation};
pub use simulation::{run_study, StudyConfig};
