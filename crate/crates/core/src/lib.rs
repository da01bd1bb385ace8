//! Sequential data assimilation of partially observed, measure-preserving
//! dynamical systems with density matrices.
//!
//! The filter state is a trace-one, positive-semidefinite matrix acting on a
//! finite-dimensional subspace of functions on state space. Between
//! measurements it is conjugated by a Koopman (shift) operator; at a
//! measurement it is collapsed by the spectral projector of the bin the
//! observed value falls into.
//!
//! Two operator backends are provided:
//!
//! * an exact analytic backend for rotation on the circle, working in the
//!   Fourier basis ([`operators::AnalyticCircleBasis`]);
//! * a data-driven backend that learns an orthonormal basis from a single
//!   trajectory with a kNN-sparsified variable-bandwidth Gaussian kernel
//!   ([`kernel`]), and represents shift operators and projectors as small
//!   dense matrices in that basis.
//!
//! The [`experiments`] module wires the pieces into named presets for the
//! circle rotation and the Lorenz 63 system, and a large-data convergence
//! study against the analytic backend.

pub mod bundle;
pub mod dynamics;
pub mod error;
pub mod experiments;
pub mod filter;
pub mod kernel;
pub mod metrics;
pub mod operators;
pub mod quantizer;

pub use error::{Error, Result};

pub use nalgebra::Complex;
pub type Complex64 = Complex<f64>;
