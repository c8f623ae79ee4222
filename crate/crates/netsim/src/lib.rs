//! Seeded discrete-event simulation of Bitcoin miners and peers, the
//! adapters that talk to them, and a canister fed by a subnet of block
//! makers, together with Monte Carlo estimates for eclipse and
//! post-downtime attacks.
//!
//! All randomness flows from one ChaCha8 seed, so a run is reproducible
//! from its parameters and seed.

pub mod adversary;
pub mod montecarlo;
pub mod observe;
pub mod params;
pub mod world;

pub use adversary::AdversaryState;
pub use montecarlo::{analytic_downtime, analytic_eclipse, downtime_bound, run_downtime_attack, run_eclipse_trial, DowntimeEstimate, EclipseEstimate};
pub use observe::{Observation, ObservationLog};
pub use params::{ParamError, SimParams, Strategy};
pub use world::{run_fork_attack, sample_adapter_peers, ForkAttackSummary, Metrics, SimWorld};
