//! Simulators and diagnostics for almost-supermartingale recursions,
//! skeleton-timescale stochastic approximation with iterate-dependent Markov
//! noise, and linear Q-learning under an adaptive ε-softmax behavior policy.

// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod ensemble;
pub mod error;
pub mod formats;
pub mod markov;
pub mod numeric;
pub mod processes;
pub mod rl;
pub mod rng;
pub mod sa;
pub mod schedules;

pub use error::{Error, Result};

use serde::Serialize;
use sha2::{Digest, Sha256};

/// Hex SHA-256 of the JSON encoding of `value`, truncated to 16 characters.
pub fn fingerprint<T: Serialize + ?Sized>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("serializable value");
    let digest = Sha256::digest(&bytes);
    digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

/// Full hex SHA-256 of raw bytes.
pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}
