//! Simultaneous critical values for one- and two-sample t-tests when the
//! number of features is very large.
//!
//! The crate computes thresholds on `|T_i|` controlling the k-FWER, the FDR
//! or the tail probability of the false discovery proportion, estimates the
//! share of alternatives from the statistics alone, and ships the
//! Benjamini–Hochberg and Storey baselines plus a Monte-Carlo harness.

pub mod baselines;
pub mod critical;
pub mod error;
pub mod numerics;
pub mod pi1;
pub mod simulate;
pub mod tstats;

pub use critical::{
    ControlSpec, CriticalValue, DecisionSet, Dependence, Method, OracleModel, Threshold,
};
pub use error::{Error, Result};
pub use pi1::{estimate_pi1, GridSpec, Pi1Estimate};
pub use tstats::{Dataset, Design, SampleDesign, TStatVector};
