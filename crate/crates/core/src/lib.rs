//! Causal ROAS estimation for paid search from observational media-mix
//! time series.
//!
//! The crate combines four layers:
//!
//! - [`causal`]: causal diagrams, d-separation, the back-door criterion and
//!   an exact discrete adjustment oracle;
//! - [`dataset`] and [`query`]: the observational panel data model and the
//!   search-query summarization pipeline that produces the volume series
//!   V1/V2/V3;
//! - [`splines`] and [`gam`]: penalized regression splines (univariate,
//!   tensor-product, monotone) and Gaussian additive-model fitting with
//!   REML-selected smoothing;
//! - [`estimators`] and [`sim`]: the ROAS estimators (naive, demand-adjusted,
//!   back-door-adjusted additive/tensor/monotone-marginal, two-stage full
//!   media-mix) and a structural simulator with known ground truth for
//!   validating them.

pub mod causal;
pub mod dataset;
pub mod estimators;
pub mod gam;
pub mod query;
pub mod sim;
pub mod splines;
