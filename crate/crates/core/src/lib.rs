//! Over-the-air delay laboratory for URLLC in the finite blocklength regime.
//!
//! The crate is organised bottom-up:
//!
//! - [`fbl`]: capacity, dispersion, normal-approximation rate and the
//!   blocklength solvers built on the Gaussian tail in [`gaussian`].
//! - [`protocol`]: grant-based and grant-free occurrence profiles and the
//!   grant-free contention model.
//! - [`delay`]: per-packet delay composition and the blocklength tradeoff sweep.
//! - [`scenario`]: the scenario description and its text format.
//! - [`sim`]: a deterministic discrete-event simulator of the variable-TTI queue.
//! - [`optimizer`]: adaptive blocklength solvers (single user and multi-user OMA).
//! - [`bridge`]: a line-delimited JSON environment for external learning agents.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bridge;
pub mod delay;
pub mod error;
pub mod fbl;
pub mod gaussian;
pub mod optimizer;
pub mod protocol;
pub mod scenario;
pub mod sim;

pub use delay::{compose_over_the_air, expected_attempts, transmission_delay, DelayBreakdown, Regime};
pub use error::{Constraint, Error, Infeasibility, Result};
pub use fbl::{ChannelSpec, FblModel, Snr};
pub use optimizer::{AllocationPlan, FrameAlloc};
pub use protocol::{AccessProtocol, ProtocolProfile};
pub use scenario::Scenario;
pub use sim::{SimMode, SimStats};

/// Version string echoed into run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
