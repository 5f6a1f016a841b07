//! Prediction engine for non-homogeneous Poisson cluster processes.
//!
//! Claims arrive on [0, 1] as a non-homogeneous Poisson process with mean
//! value function Λ; each claim spawns a payment-count process (Poisson or
//! negative-binomial cluster) with mean value function μ. The engine
//! computes exact conditional predictors and conditional variances of the
//! future payment increment M(t, t+s] given either the paid count M(t) = m
//! (recursive derivative tables in extended-range arithmetic) or the
//! reported-claim count N̂(t) = ℓ under a reporting delay (closed forms),
//! and validates every analytic result against independent Monte Carlo
//! oracles.

pub mod delay;
pub mod error;
pub mod model;
pub mod montecarlo;
pub mod negbin;
pub mod poisson;
pub mod prediction;
pub mod quadrature;
pub mod xnum;

pub use error::{Error, Result, Violation};
pub use model::{
    cluster_increment_moments, mvf_eval, mvf_increment, unconditional_moments, validate_scenario,
    ClusterModel, DelayDistribution, MeanValueFunction, Scenario, UnconditionalMoments,
};
pub use prediction::{DiagnosticFlags, PredictionResult};
pub use quadrature::QuadratureConfig;
