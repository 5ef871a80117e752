//! Learning stable point-to-point motions from demonstrations.
//!
//! The pipeline fits a Gaussian mixture model to joint position/velocity
//! data, evaluates the regressed velocity field, and corrects it with a
//! universal-formula controller derived from a learned control Lyapunov
//! function. Closed-loop reproductions converge to the target even when
//! the regressed field alone does not.
//!
//! Modules follow the pipeline stages:
//!
//! * [`dataset`] loads, generates, and perturbs demonstration sets
//! * [`gmm`] fits the mixture and evaluates the conditional velocity field
//! * [`clf`] evaluates the asymmetric bi-quadratic energy function
//! * [`control`] applies the universal stabilizing formula
//! * [`learn`] jointly optimizes mixture and energy-function parameters
//! * [`sim`] integrates closed-loop reproductions and checks residual sets
//! * [`metrics`] quantifies reproduction fidelity and control effort
//! * [`model`] serializes fitted parameters

pub mod clf;
pub mod control;
pub mod dataset;
pub mod error;
pub mod gmm;
pub mod learn;
pub mod metrics;
pub mod model;
pub mod sim;

pub use error::{Error, Result};
