//! Off-policy policy-gradient estimation in finite-horizon MDPs.
//!
//! The central estimator, EOPPG, averages the efficient influence function
//! of the policy gradient over trajectories collected by a behavior policy,
//! with nuisance functions fitted by K-fold cross-fitting. Importance
//! sampling baselines, a projected gradient-ascent loop and a small
//! experiment harness on a linear-quadratic benchmark are included.

pub mod env;
pub mod error;
pub mod experiments;
pub mod estimators;
pub mod nuisance;
pub mod optimizer;
pub mod policy;
pub mod quadrature;
pub mod regression;
pub mod rng;

pub use env::{sample_dataset, Dataset, Environment, LqBenchmark, Trajectory};
pub use error::{Error, Result};
pub use estimators::{estimate, EstimatorConfig, EstimatorKind, GradientEstimate};
pub use nuisance::{FitConfig, Nuisances};
pub use policy::{DifferentiablePolicy, GaussianLinearPolicy, Policy};
