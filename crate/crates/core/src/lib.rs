//! Classical and semiclassical numerics for Schrodinger operators with
//! long-range variable coefficients.
//!
//! * [`catalog`]: admissible metrics and potentials with closed-form jets.
//! * [`flow`]: Hamilton flows, variational flows and running action.
//! * [`asymptotics`]: backward nontrapping, escape estimates and the
//!   scattering data `(z_-, xi_-)`.
//! * [`hj`]: the momentum-space Hamilton-Jacobi solution `W(t, xi)` and the
//!   modified flows built on it.
//! * [`quantum`]: one-dimensional grid propagators, Fourier multipliers and
//!   Weyl quantization.
//! * [`microlocal`]: h-ladder wavefront probes and the propagation harnesses.
//! * [`cli`]: configuration, orchestration and persisted outputs.

pub mod asymptotics;
pub mod catalog;
pub mod cli;
pub mod error;
pub mod flow;
pub mod hj;
pub mod microlocal;
pub mod quantum;
pub mod util;

pub use catalog::{HamiltonianSpec, SpecDescriptor};
pub use error::{Error, Result};
pub use flow::{FlowKind, FlowOptions, PhasePoint, Trajectory};
