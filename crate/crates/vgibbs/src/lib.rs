//! Estimation of statistical models from incomplete data.
//!
//! The core method keeps K persistent pseudo-Gibbs imputation chains per
//! incomplete row and learns d amortised univariate Gaussian conditionals
//! jointly with the target model by stochastic gradient ascent on a
//! variational objective. A factor analysis model serves as the target, with
//! exact EM as the reference estimator, impute-then-fit baselines
//! (empirical marginals and chained-equation imputation), and a metrics and
//! experiment harness around everything.

pub mod datagen;
pub mod diffcore;
pub mod emfit;
pub mod error;
pub mod famodel;
pub mod gaussians;
pub mod imputers;
pub mod linalg;
pub mod rng;

pub use datagen::{toy_truth, ImputedDataset, IncompleteDataset};
pub use error::{Error, Result};
pub use famodel::FaParams;
pub use gaussians::GaussianMoments;
