//! Randomness: CRS-derived uniform polynomials, ternary secrets, and
//! discrete (rounded) Gaussian noise.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};

use crate::ring::context::Context;
use crate::ring::poly::{Form, RnsPoly};

/// Deterministic RNG for common reference polynomials. Every party derives
/// the same stream from the shared seed and a role-specific label, so nobody
/// has to transmit the `a` components of keys.
pub fn crs_rng(seed: &[u8; 32], label: &[u8]) -> ChaCha20Rng {
    let mut h = Sha256::new();
    h.update(seed);
    h.update(label);
    let digest: [u8; 32] = h.finalize().into();
    ChaCha20Rng::from_seed(digest)
}

/// Uniform element of R_Q, sampled directly in NTT form. The NTT is a
/// bijection on each residue ring, so uniform residues stay uniform.
pub fn sample_uniform_ntt<R: Rng + ?Sized>(
    ctx: &Context,
    level: usize,
    special: bool,
    rng: &mut R,
) -> RnsPoly {
    let n = ctx.degree();
    let mut p = RnsPoly::zero(n, level, special, Form::Ntt);
    for (idx, &q) in ctx.basis(level, special).iter().enumerate() {
        let res = p.residue_mut(idx);
        for r in res.iter_mut() {
            *r = rng.random_range(0..q);
        }
    }
    p
}

/// Ternary sample: each coefficient is nonzero with probability `density`,
/// and then ±1 with equal probability. Returned in coefficient form.
pub fn sample_ternary<R: Rng + ?Sized>(
    ctx: &Context,
    density: f64,
    level: usize,
    special: bool,
    rng: &mut R,
) -> RnsPoly {
    let n = ctx.degree();
    let mut coeffs = vec![0i64; n];
    for c in coeffs.iter_mut() {
        if rng.random_bool(density) {
            *c = if rng.random_bool(0.5) { 1 } else { -1 };
        }
    }
    RnsPoly::from_signed(ctx, &coeffs, level, special).expect("ternary sample")
}

/// Rounded Gaussian noise in coefficient form.
pub fn sample_gaussian<R: Rng + ?Sized>(
    ctx: &Context,
    sigma: f64,
    level: usize,
    special: bool,
    rng: &mut R,
) -> RnsPoly {
    let n = ctx.degree();
    let normal = Normal::new(0.0, sigma).expect("sigma validated positive");
    let coeffs: Vec<i64> = (0..n).map(|_| normal.sample(rng).round() as i64).collect();
    RnsPoly::from_signed(ctx, &coeffs, level, special).expect("gaussian sample")
}
