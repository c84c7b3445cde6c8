//! Treatment-effect estimation for heavy-tailed outcomes under
//! covariate-adaptive randomization.
//!
//! The crate covers the whole workflow: assigning treatments
//! ([`designs`]), estimating the control-outcome score by kernel smoothing
//! ([`score`]), the cross-fitted transformed estimators ([`estimators`]),
//! design-aware variances and Wald intervals ([`inference`]), a Monte Carlo
//! harness ([`sim`]) and CSV/JSON input and output ([`io`]).
//!
//! ```no_run
//! use car_heavytail::{designs::DesignConfig, sim::*};
//!
//! let outcome = OutcomeModelSpec { model_id: 1, tail: Tail::Cauchy, tau: 0.0, n: 1000, pi: 0.5 };
//! let cfg = SimConfig::new(outcome, DesignConfig::simple(0.5), 100);
//! let result = run_simulation(&cfg, Execution::Parallel).unwrap();
//! println!("{:?}", result.row("str"));
//! ```

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod designs;
pub mod error;
pub mod estimators;
pub mod inference;
pub mod io;
pub mod pipeline;
pub mod rng;
pub mod score;
pub mod sim;

pub use error::{Error, Result};
