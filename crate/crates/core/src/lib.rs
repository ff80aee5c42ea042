//! Principal stratification toolkit.
//!
//! Estimators for treatment effects within latent strata defined by the
//! joint potential values `(S(0), S(1))` of a post-randomization variable:
//! IV/CACE, sensitivity-parameter families, bounds, covariate-based
//! weighting and principal scores, multiple imputation, analytic estimators
//! using intermediate outcomes, Bayesian mixtures fitted by data
//! augmentation, and extensions to non-randomized treatment. A simulation
//! oracle generates full potential-outcome tables so every estimator can be
//! checked against exactly enumerated stratum effects.

pub mod basic;
pub mod bayes;
pub mod covariate;
pub mod data;
pub mod error;
pub mod imputation;
pub mod numerics;
pub mod observational;
pub mod oracle;
pub mod report;
pub mod sensitivity;
pub mod staged;

pub use error::{Error, Result};
