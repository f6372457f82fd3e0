//! Data-driven model predictive control for continuous-time LTI plants.
//!
//! An unknown plant `ẋ = A x + B u` is first excited with a stabilizing
//! feedback plus a sum-of-sinusoids dither. Integrating the state equation
//! over sliding windows makes `[vec(A); vec(B)]` appear linearly in
//! measured integrals, so a batch least-squares fit recovers the model
//! without differentiating data. The identified model then drives a
//! receding-horizon controller whose input over the horizon is a
//! polynomial in time: predictions are Taylor expansions, and the tracking
//! cost reduces to a small QP with closed-form Gram matrices.
//!
//! Modules, bottom-up:
//!
//! - [`numerics`]: Kronecker/vec, least squares with conditioning, monomial Gram matrices.
//! - [`plant`]: LTI model, RK4 simulation, excitation and reference signals.
//! - [`collector`]: integral-window regressors, full or half-state measurement.
//! - [`identifier`]: estimates, excitation diagnostics, error metrics.
//! - [`mpc`]: prediction matrices, QP assembly, box handling, input policy.
//! - [`runner`]: the closed loop, logs and reports.
//! - [`cli`]: JSON configuration and the `ddmpc` command.
//!
//! Runnable examples live in `examples/`:
//!
//! - `identify_full_state`: least-squares identification and its step-size convergence.
//! - `identify_partial_state`: identification from positions only with nested windows.
//! - `taylor_prediction`: prediction error order against RK4 for each control order.
//! - `qp_box_constraints`: the horizon QP and scaling into an input box.
//! - `closed_loop_tracking`: excite, identify and track a setpoint.
//! - `cstr_demo`: the bundled four-state reactor fixture.
//! - `config_round_trip`: loading, editing and writing a JSON config.

// `!(x > 0.0)` is used on purpose so NaN inputs are rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod numerics;
pub mod collector;
pub mod plant;
pub mod identifier;
pub mod mpc;
pub mod runner;
pub mod cli;

pub use error::{Error, Result};
