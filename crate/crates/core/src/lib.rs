//! Smooth and locally sparse estimation of the coefficient function in
//! scalar-on-function linear regression.
//!
//! The estimator minimizes a least-squares fit plus a roughness penalty and
//! a functional SCAD penalty over a B-spline space. The SCAD part is applied
//! to normalized L2 norms on each knot subinterval, so whole subintervals
//! are driven to exactly zero.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod app;
pub mod baselines;
pub mod bspline;
pub mod data;
pub mod error;
pub mod io;
pub mod quadrature;
pub mod scad;
pub mod simulation;
pub mod solver;
pub mod tuning;

pub use bspline::{BSplineBasis, SplineFunction};
pub use data::{Curves, FunctionalData, FunctionalSample};
pub use error::{Result, SlosError};
pub use scad::{ScadParams, ShrinkRule};
pub use solver::{fit, fit_multi, predict, CoefficientFunction, DfRule, FitConfig, FitResult, PinRule, Predictor};
pub use tuning::{grid_search, m_heuristic, Criterion, TuningGrid};
