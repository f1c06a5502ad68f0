//! Deterministic simulator and calculators for Layer-2 scaling protocols
//! over a parameterized Layer-1 chain.
//!
//! - [`l1`]: block production, fee market, capacity calculators.
//! - [`merkle`]: commitments and inclusion proofs shared by every protocol.
//! - [`channels`]: payment channels, HTLC routing, penalty game, monitors.
//! - [`plasma`]: UTXO child chain, exit game, fast withdrawals, mass exit.
//! - [`rollup`]: ZK and optimistic rollups with data-availability replay.
//! - [`bench`]: retail workload, benchmark runner, comparison report.

pub mod bench;
pub mod channels;
pub mod events;
pub mod hash;
pub mod l1;
pub mod merkle;
pub mod plasma;
pub mod rational;
pub mod rng;
pub mod rollup;
pub mod types;

pub use hash::Hash256;
pub use rational::Rational;
pub use types::{AccountId, Amount};
