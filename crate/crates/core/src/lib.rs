//! Pseudospectral simulation and verification tools for the weakly damped,
//! driven Korteweg-de Vries equation
//!
//! ```text
//! u_t + u u_x + u_xxx + gamma u = f - mu (P_m u - v)
//! ```
//!
//! on a periodic interval, together with the energy-type functionals,
//! closed-form a-priori bounds, continuous data assimilation experiments and
//! steady-state / determining-form tools built on top of the solver.

pub mod assimilation;
pub mod attractor;
pub mod bounds;
pub mod error;
mod fft;
pub mod functionals;
pub mod integrator;
mod krylov;
pub mod spectral;

pub use error::{Error, Result};
pub use spectral::{seeded_field, GridSpec, MeanPolicy, NormSet, SpectralField};
