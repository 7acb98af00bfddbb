//! Data-driven supervisory control of a wind + solar + battery hybrid power
//! plant.
//!
//! The pipeline is:
//!
//! 1. [`weather`] produces availability profiles and the wind quantile bound,
//! 2. [`datagen`] records input/output windows from a reactive
//!    feedback-optimization controller running against the [`plant`],
//! 3. [`predictor`] fits the multi-step least-squares predictor,
//! 4. [`controller`] builds and solves the receding-horizon QP with [`qp`],
//! 5. [`harness`] runs open-loop, closed-loop and ablation experiments.
//!
//! [`cli`] wraps the pipeline into file-producing commands.

// `!(x >= 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod controller;
pub mod csvfmt;
pub mod demand;
pub mod datagen;
pub mod error;
pub mod harness;
pub mod plant;
pub mod power;
pub mod predictor;
pub mod qp;
pub mod weather;

pub use error::{Error, Result};
pub use power::{Outputs, Power3, Setpoints};
