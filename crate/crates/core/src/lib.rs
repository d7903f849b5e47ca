//! Monotone finite-volume solver for the periodic Ostrovsky–Hunter equation
//! `u_t + f(x,u)_x = P[u]` on `[0,1]`, with runtime verification of the
//! scheme's discrete stability properties.
//!
//! The numerical core is generic over [`Real`] (`f32` or `f64`); the aliases
//! below fix the scalar type for the common cases.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod diagnostics;
pub mod error;
pub mod evolve;
pub mod experiments;
pub mod flux;
pub mod io;
pub mod mesh;
pub mod scalar;
pub mod source;

pub use error::{Error, Result};
pub use evolve::{cfl_dt, evolve_lockstep, evolve_to, step, Evolver, Recording, StepControl, StepObserver};
pub use flux::{builtin_oh_flux, engquist_osher, lax_friedrichs, FluxKind, FluxModel, NumericalFlux};
pub use mesh::{cell_average_init, Grid, InitialProfile, State};
pub use scalar::Real;
pub use source::{compute_source, SourceVector};

pub type Grid64 = mesh::Grid<f64>;
pub type Grid32 = mesh::Grid<f32>;
pub type State64 = mesh::State<f64>;
pub type State32 = mesh::State<f32>;
pub type Trajectory64 = evolve::Trajectory<f64>;
pub type Trajectory32 = evolve::Trajectory<f32>;
pub type StepControl64 = evolve::StepControl<f64>;
pub type StepControl32 = evolve::StepControl<f32>;
pub type SourceVector64 = source::SourceVector<f64>;
pub type SourceVector32 = source::SourceVector<f32>;
