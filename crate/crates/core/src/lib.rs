//! Spectrally regularized matrix recovery with risk estimation.
//!
//! The crate solves
//!
//! ```text
//! minimize_X  1/2 ||y - A(X)||^2 + lambda ||X||_*
//! ```
//!
//! by forward-backward splitting, carries the directional derivatives of the
//! iterates with respect to the observations `y` alongside the primal
//! sequence, and turns those derivatives into a randomized estimate of the
//! divergence of `y -> A(X(y))`. Plugged into Stein's unbiased risk estimate
//! this gives a data-only proxy for the prediction risk, which is then used
//! to pick `lambda`.
//!
//! Layout:
//! - [`linops`]: observation operators (entry masking) and their adjoints.
//! - [`spectral`]: SVD, soft-thresholding, matrix-valued spectral functions
//!   and their closed-form derivatives.
//! - [`solver`]: the forward-backward iteration and its derivative recursion.
//! - [`risk`]: divergence estimation, SURE, and brute-force oracles.
//! - [`experiment`]: matrix-completion instance synthesis and lambda sweeps.
//! - [`obsfile`]: the plain-text observed-entry format.

pub mod error;
pub mod experiment;
pub mod linops;
pub mod obsfile;
pub mod risk;
pub mod rng;
pub mod solver;
pub mod spectral;

pub use error::{Error, Result};
pub use linops::{LinearOperator, MaskOperator, Matrix, ObsVector};
pub use risk::SureReport;
pub use solver::{FbConfig, FbState, SolveResult};
pub use spectral::{SoftThreshold, SpectralMap, SvdTriple, ThinSvd};
