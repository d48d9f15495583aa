//! Numerical toolkit for periodic homogenization of nonlocal
//! Hamilton-Jacobi-Bellman equations.
//!
//! The crate discretizes anisotropic fractional operators on the flat torus,
//! solves the oscillatory problem, the vanishing-discount cell problem and
//! the effective problem by monotone schemes with Howard policy iteration,
//! computes the effective Hamiltonian a second, independent way through a
//! linear program over occupational measures, and measures convergence rates
//! across an epsilon ladder.
//!
//! Everything numeric is generic over the scalar type (see [`Real`]); the
//! `*64` aliases at the crate root fix `f64`, which the CLI and the test
//! suites use.

pub mod cell;
pub mod error;
pub mod grid;
pub mod hjb;
pub mod kernels;
pub mod linalg;
pub mod measure_lp;
pub mod nonlocal;
pub mod presets;
pub mod rates;
pub mod scalar;
pub mod simplex;

pub use error::{Error, Result};
pub use scalar::Real;

pub type KernelSpec64 = kernels::KernelSpec<f64>;
pub type GridFunction64 = grid::GridFunction<f64>;
