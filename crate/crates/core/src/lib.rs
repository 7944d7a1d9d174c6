//! Reflected diffusions in domains cut out by finitely many smooth
//! constraints.
//!
//! * [`geometry`]: constraint sets, active sets, min-norm point of the hull of
//!   active unit normals.
//! * [`compat`]: boundary-sampling certification of constraint compatibility
//!   and the stability transforms.
//! * [`sde`]: Euler–Maruyama prediction with an oblique multi-constraint
//!   correction and per-constraint local times.
//! * [`gibbs`]: the reversible measure `1_D e^{-Φ} dx`, MCMC and exact
//!   rejection samplers.
//! * [`planet`]: hard spheres with fluctuating radii around an attracting ball.
//!
//! All numerics are generic over [`Scalar`] (`f32` or `f64`); the `*F64`
//! aliases below are what the command-line front end uses.

pub mod compat;
pub mod error;
pub mod geometry;
pub mod gibbs;
pub mod linalg;
pub mod planet;
pub mod rng;
pub mod scalar;
pub mod sde;
pub mod stats;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type ConstraintSetF64 = geometry::ConstraintSet<f64>;
pub type ConstraintSetF32 = geometry::ConstraintSet<f32>;
pub type DynamicsSpecF64 = sde::DynamicsSpec<f64>;
pub type DynamicsSpecF32 = sde::DynamicsSpec<f32>;
pub type PlanetModelF64 = planet::PlanetModel<f64>;
pub type PlanetModelF32 = planet::PlanetModel<f32>;
