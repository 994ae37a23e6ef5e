//! Trajectory optimization and guidance under parametric uncertainty.
//!
//! The toolkit transcribes Bolza optimal control problems with
//! multiple-interval Legendre-Gauss-Radau collocation, augments them with
//! parameter-sensitivity states and a normalized desensitization cost, and
//! simulates shrinking-horizon guidance with mesh truncation/remapping under
//! Monte Carlo parameter dispersion.
//!
//! Main entry points:
//!
//! * [`lgr::compute_radau_rule`] — collocation nodes, weights, differentiation.
//! * [`transcription::transcribe`] — OCP to sparse NLP.
//! * [`nlp::solve`] — built-in primal-dual interior-point solver.
//! * [`desensitize::augment`] — sensitivity-state augmentation.
//! * [`driver::desensitized_reference`] — the full reference pipeline.
//! * [`guidance::run_guidance`] — shrinking-horizon guidance of one trial.
//! * [`monte_carlo::run_monte_carlo`] — dispersion campaign.
//!
//! The `dogkit` binary exposes the same capabilities as subcommands; see the
//! crate examples for one runnable program per capability.

pub mod derivatives;
pub mod desensitize;
pub mod driver;
pub mod error;
pub mod lgr;
pub mod mesh;
pub mod nlp;
pub mod ocp;
pub mod problems;
pub mod propagation;
pub mod transcription;

pub use error::{Error, Result};
