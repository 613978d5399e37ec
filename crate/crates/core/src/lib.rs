//! Knockoff-filter variable selection under correlated Gaussian designs.
//!
//! The crate builds structured covariance models ([`gaussian`]), constructs
//! equi-, ASDP- and conditional-independence knockoffs ([`knockoff`]), fits
//! and debiases the Lasso on the augmented design ([`lasso`]), runs the
//! knockoff filter ([`filter`]), and computes effective signal deficiency
//! diagnostics from Lévy-Prokhorov distances ([`esd`]). The [`sim`] module
//! drives Monte Carlo experiments and backs the `knockoff-esd` binary.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod esd;
pub mod filter;
pub mod gaussian;
pub mod knockoff;
pub mod lasso;
pub mod linalg;
pub mod rng;
pub mod sim;

pub use error::{Error, Result};
pub use esd::{EsdProcedure, EsdReport};
pub use filter::{FilterResult, StatisticMode, ThresholdOffset, TrialMetrics};
pub use gaussian::{CovMatrix, CovModel};
pub use knockoff::{KnockoffSpec, Mechanism};
pub use lasso::{LassoFit, LassoOptions};
