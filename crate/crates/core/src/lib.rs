//! Learning traffic-engineering configurations for wide-area networks directly
//! from historical demand matrices.
//!
//! The crate is organised bottom-up:
//!
//! - [`net_model`]: topologies, demand matrices and traces, tunnels, and the
//!   incidence matrices every objective is evaluated against.
//! - [`objectives`]: maximum link utilization and the two flow objectives,
//!   together with their closed-form (sub/super)gradients.
//! - [`neural`]: a small fully connected network with backpropagation and Adam.
//! - [`engine`]: minibatch training of the network on the composed loss, and
//!   inference/evaluation.
//! - [`baselines`]: the omniscient per-matrix oracle, prediction-based TE,
//!   tabular SGD, the normalized subgradient method and a brute-force grid
//!   oracle.
//! - [`traffic`]: synthetic demand generators and topology fixtures.
//! - [`resilience`]: link failures and proportional tunnel rebalancing.
//! - [`harness`]: experiment orchestration, normalized metrics, percentile
//!   summaries and latency measurements.

pub mod baselines;
pub mod engine;
mod error;
pub mod harness;
pub mod lp;
pub mod net_model;
pub mod neural;
pub mod objectives;
pub mod resilience;
pub mod traffic;

pub use error::{Error, Result};
