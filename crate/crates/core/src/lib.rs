//! Refined instrumental variable identification of additive multivariable
//! continuous-time systems from sampled time-domain data.
//!
//! The plant is modelled as a sum of low-order submodels
//! `G(p) = sum_i B_i(p) / (p^l_i A_i(p))` and estimated in open or closed loop.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod lti;
pub mod model;
pub mod signals;
pub mod closed_loop;
pub mod estimator;
pub mod experiments;

pub use error::{Error, Result};
