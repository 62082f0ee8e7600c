//! Numerical kernels for the Landau–de Gennes model of a nematic liquid
//! crystal around a colloidal particle in a magnetic field.
//!
//! The crate is `no_std` (it needs `alloc`). Everything that touches files,
//! threads or the command line lives in the companion `nematic` crate; the
//! data-parallel loops here are written against the [`exec::Exec`] trait so the
//! caller decides how they run. Reductions always happen in a fixed order, so
//! results do not depend on the executor.
//!
//! Module map:
//!
//! - [`tensor`]: traceless symmetric 3×3 tensors, spectral data, the `(s, r, n, m)`
//!   decomposition, distances to the vacuum manifold and the biaxial cone.
//! - [`potentials`]: bulk and magnetic densities, far-field minimizer, regime schedules.
//! - [`grid`]: particle shapes, voxel grids, surface meshes, boundary data.
//! - [`relax`]: discrete energy and gradient, minimization, mollification, covering.
//! - [`profile1d`]: the one-dimensional optimal profile problem.
//! - [`defects`]: extraction of the line set `S`, surface set `T` and region `F`.
//! - [`limit_energy`]: the limit functional and its optimality diagnostics.
//! - [`recovery`]: competitor fields built from a target geometry.

#![no_std]
#![warn(missing_debug_implementations)]
// Modules import `num_traits::Float` for the libm methods. When std is linked
// (tests, or a dependent enabling std features) the inherent methods shadow it,
// so those imports carry an allow.

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod defects;
pub mod error;
pub mod exec;
pub mod grid;
pub mod limit_energy;
pub mod linalg;
pub mod mesh;
pub mod potentials;
pub mod profile1d;
pub mod recovery;
pub mod relax;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
pub use exec::{Exec, Sequential};
pub use linalg::Vec3;
pub use potentials::{MaterialParams, RegimeParams};
pub use tensor::QTensor;
