//! Ring layer: Z_q arithmetic, negacyclic NTT, RNS polynomials, samplers,
//! and the precomputed context everything else hangs off.

pub mod context;
pub mod ntt;
pub mod params;
pub mod poly;
pub mod sampler;
pub mod zq;

pub use context::Context;
pub use params::CryptoParams;
pub use poly::{Form, RnsPoly};
