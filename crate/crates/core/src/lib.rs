//! Regularized viscous-plastic sea-ice dynamics on the periodic torus.
//!
//! The crate is `no_std` (it needs `alloc` for field storage) and contains
//! only the numerical machinery:
//!
//! - [`grid`]: uniform periodic grid, cell-centered fields, centered-difference
//!   calculus with exact summation by parts, discrete Lebesgue/Sobolev norms.
//! - [`rheology`]: ice pressure, the ε-regularized viscous-plastic stress, the
//!   Newtonian relaxation stress and the monotonicity identity of the stress.
//! - [`thermo`]: growth function, smoothed indicators, thermodynamic sources
//!   and the momentum forcing (Coriolis, wind and water drag).
//! - [`transport`]: donor-cell upwind steps for thickness and compactness.
//! - [`momentum`]: the lagged-viscosity momentum step and its Jacobi-CG solve.
//! - [`driver`]: the Picard map on time slabs, slab chaining, energies,
//!   parameter continuation and the stability experiment.
//!
//! IO, configuration and the command-line front end live in `seaice-io`.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod driver;
pub mod error;
pub mod grid;
pub mod momentum;
pub mod rheology;
pub mod thermo;
pub mod transport;

pub use driver::{
    DiagRecord, IntegrateResult, MonitorMode, MonitorPolicy, SlabPlan, State, Violation,
};
pub use error::{Error, Result};
pub use grid::{Grid, Lp, ScalarField, TensorField, VectorField};
pub use momentum::{CgSettings, LinearSolveReport, MomentumOperator};
pub use rheology::{PhysParams, RegParams};
pub use thermo::{GrowthFn, GrowthRule};
pub use transport::CflPolicy;
