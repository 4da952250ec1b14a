//! Variational copula sequential Monte Carlo.
//!
//! A particle filter whose proposal is a Gaussian copula over learned per-step
//! marginals, trained by stochastic gradient ascent on the filter's log-evidence
//! estimate. [`smc::smc_run`] runs any [`smc::Proposal`], [`train::train`] fits a
//! [`proposal::VariationalParams`], and [`harness`] runs paired experiments against
//! the bootstrap filter.

pub mod error;
pub mod stats;
pub mod copula;
pub mod proposal;
pub mod smc;
pub mod envs;
pub mod train;
pub mod metrics;
pub mod harness;
