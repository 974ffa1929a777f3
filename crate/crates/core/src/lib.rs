//! Calibrated predictive intervals for object volumes in 3D images.
//!
//! The pipeline: synthetic sphere phantoms ([`synth`]) are segmented by a
//! three-threshold estimator ([`trimask`]) into lower / point / upper volume
//! estimates, which split conformal calibration ([`conformal`]) widens into
//! intervals with a target coverage. Under covariate shift the calibration
//! samples are reweighted by density ratios ([`density_ratio`]) estimated from
//! either an oracle covariate or compressed image descriptors ([`latent`]).
//! [`harness`] runs the full repeated-trial experiment.

pub mod conformal;
pub mod density_ratio;
pub mod error;
pub mod harness;
pub mod latent;
pub mod synth;
pub mod trimask;
pub mod volume;

pub use error::{Error, Result};
