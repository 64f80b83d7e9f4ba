//! Deterministic simulator for communication-efficient decentralized online
//! learning.
//!
//! A fleet of `m` learners trains on per-learner data streams. Between
//! optimization rounds a synchronization protocol may exchange models through
//! a coordinator; every exchanged message is metered in bytes. The crate
//! provides:
//!
//! - parameter vectors and averaging primitives ([`params`])
//! - small predictors, losses and optimizers ([`learn`])
//! - drifting synthetic streams plus file-backed datasets ([`streams`])
//! - the synchronization protocols and the round loop ([`sync`])
//! - loss/communication accounting and CSV/JSON export ([`metrics`])
//! - experiment configuration, seeding and sweeps ([`config`], [`sim`])
//! - randomized self-checks of the protocol's claimed guarantees ([`verify`])
//!
//! Everything is seeded explicitly; a run is a pure function of its
//! configuration and master seed.

pub mod config;
pub mod error;
pub mod learn;
pub mod metrics;
pub mod params;
pub mod sim;
pub mod streams;
pub mod sync;
pub mod verify;

pub use error::{Error, Result};
pub use params::{ModelConfiguration, ModelParams};
