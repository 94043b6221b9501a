//! Heat-kernel function spaces and sampling frames on finite metric measure
//! spaces.
//!
//! A finite metric measure space is a set of points with a metric `rho` and a
//! positive weight `mu` per point, together with a non-negative operator `L`
//! that is self-adjoint in the `mu`-weighted inner product (typically a graph
//! Laplacian). Everything downstream is built from the spectral calculus of
//! `L`:
//!
//! | layer | module | what it provides |
//! |-------|--------|------------------|
//! | geometry | [`space`] | balls, doubling constants, geometry reports |
//! | combinatorics | [`cubes`] | nested dyadic-cube partitions, subcube sampling grids |
//! | analysis | [`spectral`] | eigendecomposition, functional calculus, heat kernels |
//! | calibration | [`calib`] | smooth spectral bump pairs and their duals |
//! | norms | [`norms`] | Besov- and Triebel-Lizorkin-type norms, maximal functions |
//! | frames | [`frame`] | analysis/synthesis frame transforms, sampling, cubature |
//! | verification | [`verify`] | norm-equivalence harness with measured constants |
//! | io | [`generators`], [`workspace`] | model geometries, artifacts, pipeline |
//!
//! The crate favours exactness where exactness is achievable: partitions of
//! unity are exact by construction (division by the squared sum), spectral
//! band products vanish identically when supports are disjoint, and the frame
//! reconstruction error is entirely the truncation tail of a Neumann series.
//! Every norm-equivalence claim is *measured*, not assumed: the [`verify`]
//! harness reports per-function ratios and their spread.

pub mod calib;
pub mod cli;
pub mod cubes;
pub mod error;
pub mod frame;
pub mod generators;
pub mod linalg;
pub mod norms;
pub mod space;
pub mod spectral;
pub mod verify;
pub mod workspace;

pub use error::{Error, Result};
