//! Neural topology optimization with meta-learned initializations.
//!
//! The library covers the full pipeline for 2D compliance minimization on
//! regular grids:
//!
//! - [`fem`] — plane-stress finite-element kernel with SIMP interpolation,
//!   equilibrium solves, compliance and adjoint sensitivities;
//! - [`filters`] — density filtering, sigmoid volume projection with
//!   bisection, strain-energy preprocessing, volume-preserving thresholding;
//! - [`network`] — a sine-activated coordinate network with residual blocks
//!   and hand-written reverse-mode gradients;
//! - [`optim`] — Adam, the relative-change stopping rule, a single-constraint
//!   MMA, and the per-task neural / conventional optimizers;
//! - [`meta`] — Reptile meta-training, strain-energy identity pretraining,
//!   and validation-based checkpoint selection;
//! - [`taskgen`] — pseudorandom task generation, validation and annotation;
//! - [`eval`] — benchmark harness with performance profiles;
//! - [`io`] — portable binary formats for datasets, checkpoints and density
//!   fields plus the results CSV schema;
//! - [`config`] — the declarative run configuration shared with the CLI.
//!
//! All heavy numerics are `f64`. Every entry point is deterministic given its
//! seed: randomness flows from a root seed through named substreams (see
//! [`rng::substream`]).

pub mod config;
pub mod eval;
pub mod fem;
pub mod filters;
pub mod io;
pub mod meta;
pub mod network;
pub mod optim;
pub mod rng;
pub mod taskgen;

pub use fem::{BoundaryConditions, Discretization, FemError, FieldState, MaterialModel};
pub use filters::{DensityField, DensityStage, FilterError};
pub use network::{NetworkConfig, NetworkError, NetworkParameters, Provenance};
pub use optim::{OptimError, OptimizeConfig, RunRecord, StopReason, StoppingConfig};
pub use taskgen::{Regime, Task};
