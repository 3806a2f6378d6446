//! Quantum key distribution simulator and analytic key-rate engine.
//!
//! The crate is split along the physical and classical layers of a QKD link:
//!
//! - [`bits`]: packed classical bit strings (keys, masks, parities).
//! - [`quantum`]: qubit states, photon sources, lossy channels and detectors.
//! - [`adversary`]: eavesdropping strategies acting on pulses in flight.
//! - [`protocols`]: BB84, B92, six-state, SARG04, decoy BB84, BBM92 and E91 sessions.
//! - [`postproc`]: error estimation, BBBSS reconciliation, privacy amplification,
//!   advantage distillation and authentication of the public channel.
//! - [`rates`]: entropies, key-rate formulas, attack bounds and decoy estimation.
//! - [`bell`]: CHSH evaluation and estimation.
//!
//! All randomness flows through [`rng::SimRng`]; equal seeds give bit-identical
//! results regardless of whether the `parallel` feature is enabled.

// `!(x > 0.0)` style checks are used on purpose: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adversary;
pub mod bell;
pub mod bits;
pub mod exec;
pub mod postproc;
pub mod protocols;
pub mod quantum;
pub mod rates;
pub mod rng;

pub use bits::BitString;
pub use rng::SimRng;
