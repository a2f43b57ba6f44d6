//! Desk-scale simulator for generalization in federated learning.
//!
//! Clients are drawn from a meta-distribution, split three ways
//! (participating train / participating validation / unparticipating), and
//! trained with federated or centralized optimizers so that the
//! out-of-sample gap and the participation gap can be measured separately.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod datasets;
pub mod entropy;
pub mod error;
pub mod fedsim;
pub mod metrics;
pub mod models;
pub mod numerics;
pub mod parallel;
pub mod partition;
pub mod split;

pub use error::{Error, Result};
