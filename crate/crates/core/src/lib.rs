//! Longitudinal vehicle-following control stack.
//!
//! The crate bundles everything needed to train and evaluate a
//! continuous-control agent that follows a lead vehicle at a target time
//! headway:
//!
//! * [`env`] — point-mass host + scripted lead vehicle simulation,
//! * [`safety_cage`] — rule-based braking envelopes (time headway / time to
//!   collision) that arbitrate over the agent's pedal command,
//! * [`nn`] — a small dense/LSTM network substrate with analytic gradients,
//! * [`ddpg`] — deterministic-policy-gradient training on top of [`nn`],
//! * [`adversary`] — an advantage-actor-critic lead agent that probes a
//!   frozen host policy for low-headway failures,
//! * [`harness`] — batch evaluation campaigns and metric aggregation,
//! * [`plot`] — minimal PNG chart rendering for training/evaluation curves.
//!
//! All simulation math is `f64` and every stochastic component draws from an
//! explicitly seeded generator, so a given configuration and seed reproduce
//! runs bit for bit.

pub mod adversary;
pub mod ddpg;
pub mod env;
pub mod harness;
pub mod logs;
pub mod nn;
pub mod plot;
pub mod safety_cage;

mod mat;

pub use env::{Env, EnvConfig, Observation, SimState, StepResult};
pub use safety_cage::CageVerdict;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum CoreError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("usage error: {0}")]
    Usage(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, CoreError>;

/// Derives a stream seed from a base seed and an index (splitmix64 finalizer).
///
/// Used wherever one user-facing seed has to fan out into several independent
/// deterministic streams (per-episode scenario seeds, per-run seeds, ...).
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base
        .wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(stream.wrapping_add(1)));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
