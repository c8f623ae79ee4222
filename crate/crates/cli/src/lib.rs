//! Scenario runner, Monte Carlo front end, tree inspection and one-shot
//! canister API calls behind the `bitsync` binary.

pub mod api;
pub mod inspect;
pub mod runner;
pub mod scenario;
