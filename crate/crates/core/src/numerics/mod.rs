//! Shared numerical kernel: seeded random streams, logistic and linear
//! regression, root finding, bootstrap resampling, weighted kernel density
//! estimation and Rubin's-rules pooling.

mod bootstrap;
mod brent;
mod kde;
mod linreg;
mod logistic;
pub mod mcmc;
mod multinomial;
mod rng;
mod rubin;
pub mod stats;

pub use bootstrap::{bootstrap, bootstrap_with, percentile_ci, resample_indices, BootstrapResult, Resampling};
pub use brent::{brent_root, brent_root_bracketed, DEFAULT_TOL};
pub use kde::{kde_grid, weighted_kde, KdeResult};
pub use linreg::{fit_ols, OlsFit};
pub use multinomial::{fit_multinomial, log_sum_exp, newton_step, soft_log_lik, MultinomialFit};
pub use mcmc::{effective_sample_size, split_rhat};
pub use logistic::{expit, fit_logistic, log1pexp, logit, LogisticFit};
pub use rng::{stream, tag};
pub use rubin::{rubin_pool, PooledEstimate};

use nalgebra::DMatrix;

/// Builds an `n × (p + 1)` design matrix with a leading intercept column.
pub fn design_with_intercept<'a, I>(rows: I, p: usize) -> DMatrix<f64>
where
    I: IntoIterator<Item = &'a [f64]>,
{
    let rows: Vec<&[f64]> = rows.into_iter().collect();
    DMatrix::from_fn(rows.len(), p + 1, |i, j| if j == 0 { 1.0 } else { rows[i][j - 1] })
}
