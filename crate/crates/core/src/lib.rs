//! Multiparty CKKS inference over vertically partitioned data.
//!
//! The layers, bottom to top:
//! - [`ring`]: RNS polynomial arithmetic over Z_q[X]/(X^N + 1).
//! - [`ckks`]: approximate-arithmetic encryption on top of the ring.
//! - [`mphe`]: multiparty key generation and distributed decryption.
//! - [`vpack`]: slot layouts that let parties holding disjoint feature
//!   columns assemble one ciphertext by summation.
//! - [`einfer`]: encrypted neural-network evaluation.
//! - [`protocol`]: message framing, transports, and the party state machines.

pub mod bench;
pub mod ckks;
pub mod einfer;
pub mod error;
pub mod mphe;
pub mod protocol;
pub mod ring;
pub mod vpack;

pub use error::{Error, Result};
