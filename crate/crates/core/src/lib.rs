//! Scaled Aalen-Johansen estimation of expected accumulated cash flows for
//! multi-state insurance contracts with policyholder options.
//!
//! The crate covers the full pipeline: model specification ([`model`]),
//! semi-Markov simulation with right-censoring ([`simulate`]), empirical
//! processes ([`empirical`]), the one- and two-dimensional estimators
//! ([`estimate1d`], [`estimate2d`]), cash-flow assembly ([`cashflow`]) and the
//! generalised scaling processes of [`extension`].

pub mod cashflow;
pub mod empirical;
pub mod error;
pub mod estimate1d;
pub mod estimate2d;
pub mod extension;
pub mod model;
pub mod seed;
pub mod simulate;
pub mod timegrid;

pub use error::{Error, Result};
