//! Longitudinal control of homogeneous vehicle platoons.
//!
//! The crate covers the whole chain from communication graph to closed-loop
//! simulation:
//!
//! - [`topology`]: look-ahead and bidirectional platoon graphs, the
//!   Laplacian-plus-pinning coupling matrix and its spectrum.
//! - [`dynamics`]: nonlinear longitudinal vehicle model, powertrain lag,
//!   feedback-linearizing torque law, and the linear integrator-chain models.
//! - [`control`]: the distributed PID-A law with integral spacing action,
//!   Routh–Hurwitz evaluation and closed-form gain certification.
//! - [`analysis`]: the Kronecker-structured closed-loop formation-error matrix
//!   and its per-eigenvalue block decomposition.
//! - [`simulation`]: RK4 simulation of the platoon under leader, slope, wind,
//!   and input disturbances, plus trajectory metrics and CSV emission.
//! - [`config`]: the sectioned key-value configuration format used by the CLI.

pub mod analysis;
pub mod config;
pub mod control;
pub mod dynamics;
pub mod linalg;
pub mod ode;
pub mod simulation;
pub mod topology;

pub use analysis::{block_spectrum_union_check, build_closed_loop, is_hurwitz, ClosedLoopSystem};
pub use control::{
    certify_gains, control_input, GainVector, SpacingPolicy, StabilityCertificate,
};
pub use dynamics::{EnvSample, VehicleParams, VehicleState};
pub use simulation::{run, SimConfig, Trajectory};
pub use topology::{coupling_spectrum, CouplingSpectrum, Topology, TopologyKind};
