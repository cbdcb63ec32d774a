//! Numerical core for recovering the coefficient `c(x)` of the 3D
//! acoustic equation `c(x) u_tt = Δu` from single-source boundary data, by
//! minimising a Carleman-weighted cost functional.
//!
//! The crate is `no_std` (it needs `alloc`). Everything that touches the file
//! system, the clock or the command line lives in the `convexify` crate.
//!
//! Pipeline, bottom to top:
//!
//! * [`grid`]: uniform meshes, finite-difference operators, quadrature.
//! * [`forward`]: leapfrog solver producing boundary recordings.
//! * [`eikonal`]: fast-sweeping travel times, used as an oracle.
//! * [`basis`]: orthonormal polynomials on `(0, T1)` vanishing at zero.
//! * [`acquire`]: arrival picking and projection of traces onto the basis.
//! * [`system`]: the coupled quasilinear elliptic operator.
//! * [`objective`]: weighted functional and its exact discrete gradient.
//! * [`optimize`]: gradient descent and the coarse-to-fine driver.
//! * [`recon`]: phantoms, coefficient extraction, error metrics.
//! * [`verify`]: empirical Carleman-estimate and convexity probes.
//! * [`pipeline`]: glue running the stages above in order.
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod acquire;
pub mod basis;
pub mod eikonal;
mod error;
pub mod forward;
pub mod grid;
pub mod objective;
pub mod optimize;
pub mod pipeline;
pub mod recon;
pub mod rng;
pub mod system;
pub mod verify;

pub use error::{Error, Result};

/// Version of this crate, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
