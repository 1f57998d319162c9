//! Partially-shared imaging regression.
//!
//! Each data source `t` is modeled as `y = <z, beta_t> + <X, C_t> + noise`
//! where the imaging coefficients `C_t = sum_r w_tr B_r` are built from a
//! shared stack of spatial components. Components carry an anisotropic
//! total-variation penalty; the weight matrix carries a smoothed penalty
//! on components used by fewer than two sources.

pub mod baselines;
pub mod error;
pub mod eval;
pub mod io;
pub mod linalg;
pub mod objective;
pub mod penalties;
pub mod rng;
pub mod simgen;
pub mod solver;
pub mod types;

pub use error::{PairError, Result};
pub use rng::{seeded_rng, RandomStream};
pub use types::{
    bundle_dims, classify_sharing, compose_coefficient, HyperParams, ImageMatrix, ImageStack,
    Matrix, PairParams, SharingStructure, SourceDataset, DEFAULT_ZERO_TOL,
};
