//! Observability analysis of nonlinear control systems with unknown inputs.
//!
//! The library decides weak local observability for systems of the form
//!
//! ```text
//!   x' = g0(x) + sum_i f_i(x) u_i + sum_j g_j(x) w_j,    y_k = h_k(x)
//! ```
//!
//! where the `u_i` are known inputs and the `w_j` unknown ones. It builds
//! the observable codistribution symbolically and evaluates ranks and
//! memberships numerically at randomized sample points, so verdicts are
//! generic (valid away from a measure-zero set) and reproducible for a
//! fixed seed.
//!
//! Layering, bottom up: [`expr`] is a minimal symbolic kernel; [`lie`] the
//! Lie derivative / bracket calculus on top of it; [`span`] the numeric
//! rank and membership engine for codistributions; [`obs`] the
//! codistribution construction algorithms plus an extended-state
//! cross-check; [`canon`] input-space canonization for systems whose
//! unknown inputs are not directly exposed by the outputs; [`model`],
//! [`modelfile`], [`registry`], [`driver`] and [`report`] the model types,
//! the text format, the worked examples and the CLI entry points.

pub mod canon;
pub mod driver;
pub mod expr;
pub mod lie;
pub mod model;
pub mod modelfile;
pub mod obs;
pub mod registry;
pub mod report;
pub mod span;
