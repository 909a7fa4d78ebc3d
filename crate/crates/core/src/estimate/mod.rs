//! Spline Bayesian-network estimation of GRNs from expression data.

pub mod bspline;
pub mod expression;
pub mod network;

pub use bspline::{BsplineBasis, BsplineCurve};
pub use expression::ExpressionMatrix;
pub use network::{
    bootstrap_run, bootstrap_structure, derive_sample_grns, fit_regression, frequency_records, hill_climb,
    is_acyclic, local_score, network_score, structure_score, BootstrapResult, BsplineBayesNet, EdgeFrequency,
    EstimateConfig, HillClimbResult, RegressionFit,
};
