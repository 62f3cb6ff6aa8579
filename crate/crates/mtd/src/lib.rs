//! Mixture-of-Transition-Distributions (MTD) sequence modelling toolkit.
//!
//! An MTD model of order `m` over an alphabet of size `q` generates token
//! `y_t` by first picking a lag `g ∈ {1..m}` with probability `λ_g`, then
//! transitioning from the token `g` steps back through a shared row-stochastic
//! matrix `π`:
//!
//! ```text
//! P(Y_t = j | y_1..y_{t-1}) = Σ_g λ_g · π(y_{t-g}, j)
//! ```
//!
//! The mixture weights `λ` are latent and differ per sequence; recovering them
//! from a single observed sequence is the estimation problem this crate is
//! built around. The crate provides:
//!
//! * [`model`]: domain types, sequence generation, likelihood, gradient and
//!   posterior lag responsibilities;
//! * [`estimators`]: point estimators for `λ`: one-step mirror descent
//!   (exponentiated gradient), multi-step EG, EM, and an entropy-regularized
//!   variant, plus learning-rate selection;
//! * [`bayes`]: the posterior mean of `λ` by exact latent-path enumeration
//!   (small instances) and by Gibbs sampling (general);
//! * [`construction`]: a three-layer attention-only (disentangled)
//!   transformer whose forward pass reproduces the one-step mirror-descent
//!   estimator exactly, with a verification harness;
//! * [`theory`]: executable checks of the analytic results: estimator
//!   Jacobians at the no-evidence point, the likelihood Hessian and its
//!   operator-norm bounds, and score scaling in the sequence length.

pub mod bayes;
pub mod construction;
pub mod error;
pub mod estimators;
pub mod model;
pub mod numeric;
pub mod rng;
pub mod theory;

pub use error::{Error, Result};
pub use model::{
    DirichletPrior, MixtureWeights, ModelConfig, Responsibilities, TokenSequence, TransitionMatrix,
    C_MIN,
};
pub use ndarray;
pub use rng::Rng;
