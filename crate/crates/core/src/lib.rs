//! Seasonal time-series decomposition with linear-Gaussian state-space models.
//!
//! The crate covers the whole pipeline: loading a series with missing
//! observations, assembling trend / dummy seasonal / AR / trigonometric
//! seasonal component blocks into one state-space model, exact Kalman-filter
//! likelihood and fixed-interval smoothing, maximum-likelihood fitting with
//! AIC-based order selection, and ordinary least-squares trigonometric
//! regression (including exhaustive harmonic subset search and the two-step
//! long-period removal pipeline).

// `!(x > 0.0)` is used on purpose throughout: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod components;
pub mod error;
pub mod estimation;
pub mod state_space;
pub mod timeseries;
pub mod trig_regression;

pub use error::{Error, Result};
