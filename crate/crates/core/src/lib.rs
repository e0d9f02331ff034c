//! Prospective scoring of candidate dataset merges for heterogeneous
//! treatment effect estimation.
//!
//! A host with outcome data ranks candidate sites, whose outcomes are
//! masked, by the expected information gain a merge would provide for
//! CATE estimation. The ranking statistics can be computed in plaintext,
//! under a simulated secure multi-party computation protocol, or under a
//! differential-privacy baseline, and validated against the ground-truth
//! PEHE of models retrained on the actual merges.

pub mod bayes_linear;
pub mod causal_gp;
pub mod config;
pub mod data;
pub mod linalg;
pub mod mpc;
pub mod nested_mc;
pub mod privacy;
pub mod ranking;

pub use linalg::Matrix;
