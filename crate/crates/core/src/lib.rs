//! Training-uncertainty-aware linear unmixing on the probability simplex.
//!
//! The pipeline: train a linear forward operator from compositional inputs
//! and noisy observations (`training`), estimate the observation noise
//! covariance from the residuals (`covariance`), then invert new observations
//! back onto the simplex (`inversion`) — either treating the trained operator
//! as exact (a constrained quadratic program) or marginalizing over its
//! sampling distribution, which inflates the posterior by the factor
//! b(m) = 1 + Σ m_j²·r_j built from the per-endmember variance scaling
//! factors r_j. The `simplex` module supplies the training-design
//! distributions and their second moments; `synth` generates synthetic
//! spectra and drives the experiment harness; `reference` holds independent
//! brute-force implementations used by the verification suite.

pub mod covariance;
pub mod error;
pub mod inversion;
pub mod io;
pub mod linalg;
pub mod reference;
pub mod rng;
pub mod simplex;
pub mod synth;
pub mod training;

pub use error::{Error, Result};
