//! Configuration, persistence and experiment drivers for `seaice-core`.
//!
//! - [`config`]: JSON run configuration with defaults, validation and the
//!   named initial-condition families.
//! - [`snapshot`]: JSON manifest plus raw little-endian `f64` payload.
//! - [`diagnostics`]: CSV time series with 17 significant digits.
//! - [`commands`]: the experiments behind each CLI subcommand.
//! - [`invariants`]: the randomized invariant suite.

pub mod commands;
pub mod config;
pub mod diagnostics;
pub mod invariants;
pub mod snapshot;

pub use config::{load_config, Overrides, RunConfig};
pub use snapshot::{read_snapshot, write_snapshot};
