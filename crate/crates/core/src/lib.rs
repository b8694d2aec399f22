//! Nonparametric sieve estimation of the Perron-Frobenius eigenvalue and
//! eigenfunctions of the pricing operator of a Markov state process, the
//! permanent/transitory decomposition of the stochastic discount factor,
//! and the value-function fixed point under unit-EIS recursive preferences.
//!
//! The pipeline runs bottom-up:
//!
//! * [`basis`] builds sieve dictionaries (Hermite, cubic B-spline, sparse tensor).
//! * [`sievemat`] forms the sample Gram matrix, the pricing matrix and the
//!   nonlinear continuation-value map.
//! * [`pfeig`] solves the generalized eigenproblem for `(rho, phi, phi*)`.
//! * [`valuefn`] iterates the nonlinear eigenproblem for `(lambda, chi)`.
//! * [`decomp`] turns the eigenpair into yields, entropies and component series.
//! * [`inference`] provides influence-function variances and the stationary bootstrap.
//! * [`calibrate`] estimates `(beta, gamma)` from instrumented Euler equations.
//! * [`oracle`] and [`simkit`] hold ground truth and the Monte Carlo harness.

pub mod basis;
pub mod calibrate;
pub mod decomp;
pub mod error;
pub mod inference;
pub mod linalg;
pub mod oracle;
pub mod pfeig;
pub mod report;
pub mod sievemat;
pub mod simkit;
pub mod stats;
pub mod valuefn;

pub use basis::{BasisFamily, BasisSpec, SieveBasis};
pub use calibrate::{CalibrationResult, OptimizerConfig, PreferenceBounds};
pub use decomp::{Association, DecompSeries};
pub use error::{Error, Result};
pub use inference::{BootstrapResult, InfluenceSeries};
pub use oracle::{Ar1Design, SdfSpec};
pub use pfeig::EigenSolution;
pub use sievemat::{SieveMatrices, StatePanel};
pub use simkit::{McDesign, McTable, Preferences};
pub use valuefn::{FixedPointConfig, FixedPointSolution};
