//! Simulator for participatory-budgeting elections with independently
//! learning voting agents.
//!
//! The crate is organised around the lifecycle of one experiment:
//!
//! * [`pabulib`] parses `.pb` election files and materialises an
//!   [`election::ElectionInstance`];
//! * [`aggregation`] turns a profile of cumulative ballots into a winning
//!   set, either by utilitarian greedy or by the method of equal shares
//!   with greedy completion;
//! * [`rewards`] scores a winning set from one voter's perspective;
//! * [`neural`] holds the from-scratch branching Q-network each agent
//!   owns, together with replay buffers and optimizers;
//! * [`training`] runs the episode loop over a whole population;
//! * [`metrics`] computes satisfaction, share and fairness summaries;
//! * [`cli`] wires everything into the `pbmarl` command-line tool.
//!
//! With the default `parallel` feature the per-agent phases of an episode
//! run on a rayon thread pool; without it the crate is fully sequential.
//! Results are identical either way: every agent draws from its own seeded
//! RNG stream and reductions happen in voter order.

pub mod aggregation;
pub mod cli;
pub mod election;
pub mod exec;
pub mod metrics;
pub mod neural;
pub mod pabulib;
pub mod rewards;
pub mod training;

pub use election::{CumulativeBallot, ElectionInstance, Project, VoterProfile, WinningSet};

/// Bump when the schema of any emitted CSV changes; echoed in run manifests.
pub const LOG_FORMAT_VERSION: u32 = 1;
