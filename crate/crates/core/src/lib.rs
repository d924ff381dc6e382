//! Quantiled conditional moments.
//!
//! Conditional variance, skewness and kurtosis of a return series are read
//! off a Cornish-Fisher regression fitted, timepoint by timepoint, to a pool
//! of estimated conditional quantiles. The quantiles come from CAViaR models
//! screened by the in-sample dynamic quantile test.

pub mod caviar;
pub mod cf;
pub mod dgp;
pub mod dq;
pub mod diagnostics;
pub mod error;
pub mod io;
pub mod linalg;
pub mod nic;
pub mod normal;
pub mod optim;
pub mod pipeline;
pub mod rng;

pub use error::{QcmError, Result};
