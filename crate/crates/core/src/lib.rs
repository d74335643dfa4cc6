//! Dynamic learning-to-rank under position-biased clicks, with unbiased
//! relevance estimation, amortized group-fairness accounting, the FairCo
//! proportional controller, and an LP baseline.

pub mod click;
pub mod envs;
pub mod error;
pub mod estimators;
pub mod fairness;
pub mod lp;
pub mod metrics;
pub mod policies;
pub mod ranking;
pub mod regression;
pub mod runner;

pub use error::{Error, Result};
