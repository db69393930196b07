//! Lagrangian Vlasov–Poisson twin-simulation laboratory.
//!
//! Two particle flows started from the same sample of `f0` are pushed through
//! (possibly different) field solvers, and the quadratic phase-space gap between
//! them is tracked step by step. The [`certify`] module then checks the chain of
//! estimates that controls that gap: the Wasserstein bound on field differences,
//! the Lagrangian coupling bound on `W2`, the differential inequality for the gap,
//! and the Osgood envelope that forces a zero gap to stay zero.
//!
//! Module map:
//!
//! | module       | contents                                                      |
//! |--------------|---------------------------------------------------------------|
//! | [`ot`]       | weighted clouds, exact and entropic `W2`, displacement paths   |
//! | [`field`]    | free-space Poisson fields (direct and FFT), norms, log-Lipschitz |
//! | [`dynamics`] | CIC deposit, kick–drift–kick flow, twin runs, monokinetic mode |
//! | [`certify`]  | gap functional, inequality checks, Osgood envelope             |
//! | [`harness`]  | scenario configs, CSV/report emission, CLI entry points        |

pub mod certify;
pub mod dynamics;
pub mod field;
pub mod harness;
pub mod ot;
pub mod vec3;

pub use vec3::Vec3;
