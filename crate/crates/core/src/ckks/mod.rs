//! Leveled approximate homomorphic encryption (CKKS) over the RNS ring:
//! encrypt/decrypt, addition, multiplication with relinearization, slot
//! rotation, rescaling, and hybrid key switching through the special prime.

pub mod encode;
pub mod serial;

use std::collections::BTreeMap;

use rand::Rng;

use crate::error::{Error, Result};
use crate::ring::context::Context;
use crate::ring::poly::{Form, RnsPoly};
use crate::ring::sampler;

pub use encode::{decode, encode};

/// Relative scale drift tolerated when combining operands. Rescaling leaves
/// scales within 2^-20 of the target, far inside this gate; anything coarser
/// is a logic bug upstream.
pub const SCALE_TOLERANCE: f64 = 9.765625e-4; // 2^-10

#[derive(Clone, Debug)]
pub struct Plaintext {
    pub poly: RnsPoly,
    pub scale: f64,
    pub level: usize,
}

impl Plaintext {
    pub fn mod_switch_to(&self, level: usize) -> Result<Plaintext> {
        Ok(Plaintext {
            poly: self.poly.drop_level(level)?,
            scale: self.scale,
            level,
        })
    }
}

#[derive(Clone, Debug)]
pub struct Ciphertext {
    pub c0: RnsPoly,
    pub c1: RnsPoly,
    pub scale: f64,
    pub level: usize,
}

/// Secret key over the full key basis (chain + special prime), NTT form.
#[derive(Clone, Debug)]
pub struct SecretKey {
    pub s: RnsPoly,
}

/// Encryption key (b, a) with b = -a*s + e, over the chain only.
#[derive(Clone, Debug, PartialEq)]
pub struct PublicKey {
    pub p0: RnsPoly,
    pub p1: RnsPoly,
}

/// Key-switching key: one (b_d, a_d) pair per chain prime, over the full key
/// basis. pairs[d] encrypts P*u_d*source under the target secret, where u_d
/// is the CRT idempotent of prime d.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalKey {
    pub pairs: Vec<(RnsPoly, RnsPoly)>,
}

/// Rotation keys indexed by left-rotation offset, normalized to [1, slots).
pub type RotKeys = BTreeMap<usize, EvalKey>;

pub fn keygen<R: Rng + ?Sized>(ctx: &Context, rng: &mut R) -> (SecretKey, PublicKey) {
    let params = ctx.params();
    let l = ctx.max_level();
    let s = sampler::sample_ternary(ctx, params.ternary_density, l, true, rng).to_ntt(ctx);
    let pk = pubkey_under(ctx, &s, rng);
    (SecretKey { s }, pk)
}

fn pubkey_under<R: Rng + ?Sized>(ctx: &Context, s: &RnsPoly, rng: &mut R) -> PublicKey {
    let l = ctx.max_level();
    let a = sampler::sample_uniform_ntt(ctx, l, false, rng);
    let e = sampler::sample_gaussian(ctx, ctx.params().gaussian_sigma, l, false, rng).to_ntt(ctx);
    let s_chain = s.drop_special().expect("secret key has special residue");
    let p0 = a
        .mul(ctx, &s_chain)
        .expect("basis match")
        .neg(ctx)
        .add(ctx, &e)
        .expect("basis match");
    PublicKey { p0, p1: a }
}

/// Builds a key-switching key from `source` to `s` (both full-basis NTT).
/// The a_d components come from the supplied RNG; multiparty flows instead
/// derive them from the CRS and aggregate shares.
fn make_eval_key<R: Rng + ?Sized>(
    ctx: &Context,
    s: &RnsPoly,
    source: &RnsPoly,
    rng: &mut R,
) -> EvalKey {
    let l = ctx.max_level();
    let sigma = ctx.params().gaussian_sigma;
    let mut pairs = Vec::with_capacity(l + 1);
    for d in 0..=l {
        let a_d = sampler::sample_uniform_ntt(ctx, l, true, rng);
        let e_d = sampler::sample_gaussian(ctx, sigma, l, true, rng).to_ntt(ctx);
        let b_d = a_d
            .mul(ctx, s)
            .expect("basis match")
            .neg(ctx)
            .add(ctx, &e_d)
            .expect("basis match")
            .add(ctx, &source.mul_p_gadget(ctx, d))
            .expect("basis match");
        pairs.push((b_d, a_d));
    }
    EvalKey { pairs }
}

/// Relinearization key: s^2 -> s.
pub fn relin_keygen<R: Rng + ?Sized>(ctx: &Context, sk: &SecretKey, rng: &mut R) -> EvalKey {
    let s_sq = sk.s.mul(ctx, &sk.s).expect("basis match");
    make_eval_key(ctx, &sk.s, &s_sq, rng)
}

/// Rotation key for a left rotation by `offset` slots: sigma_g(s) -> s.
pub fn rot_keygen<R: Rng + ?Sized>(
    ctx: &Context,
    sk: &SecretKey,
    offset: usize,
    rng: &mut R,
) -> EvalKey {
    let g = ctx.galois_for_rotation(offset as i64);
    let s_rot = sk.s.automorphism(ctx, g).expect("odd galois element");
    make_eval_key(ctx, &sk.s, &s_rot, rng)
}

pub fn encrypt<R: Rng + ?Sized>(
    ctx: &Context,
    pk: &PublicKey,
    pt: &Plaintext,
    rng: &mut R,
) -> Result<Ciphertext> {
    let level = pt.level;
    let params = ctx.params();
    let p0 = pk.p0.drop_level(level)?;
    let p1 = pk.p1.drop_level(level)?;
    let u = sampler::sample_ternary(ctx, params.ternary_density, level, false, rng).to_ntt(ctx);
    let e0 = sampler::sample_gaussian(ctx, params.gaussian_sigma, level, false, rng).to_ntt(ctx);
    let e1 = sampler::sample_gaussian(ctx, params.gaussian_sigma, level, false, rng).to_ntt(ctx);
    let c0 = u.mul(ctx, &p0)?.add(ctx, &e0)?.add(ctx, &pt.poly)?;
    let c1 = u.mul(ctx, &p1)?.add(ctx, &e1)?;
    Ok(Ciphertext {
        c0,
        c1,
        scale: pt.scale,
        level,
    })
}

pub fn decrypt(ctx: &Context, sk: &SecretKey, ct: &Ciphertext) -> Result<Plaintext> {
    let s = sk.s.drop_level(ct.level)?.drop_special()?;
    let m = ct.c0.add(ctx, &ct.c1.mul(ctx, &s)?)?;
    Ok(Plaintext {
        poly: m,
        scale: ct.scale,
        level: ct.level,
    })
}

pub fn decrypt_decode(ctx: &Context, sk: &SecretKey, ct: &Ciphertext) -> Result<Vec<f64>> {
    decode(ctx, &decrypt(ctx, sk, ct)?)
}

fn check_scales(a: f64, b: f64) -> Result<()> {
    let rel = (a - b).abs() / a.max(b);
    if rel > SCALE_TOLERANCE {
        return Err(Error::ScaleMismatch { a, b, rel });
    }
    Ok(())
}

fn check_levels(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::LevelMismatch(format!(
            "operand levels {a} and {b} differ; mod-switch first"
        )));
    }
    Ok(())
}

pub fn hadd(ctx: &Context, a: &Ciphertext, b: &Ciphertext) -> Result<Ciphertext> {
    check_levels(a.level, b.level)?;
    check_scales(a.scale, b.scale)?;
    Ok(Ciphertext {
        c0: a.c0.add(ctx, &b.c0)?,
        c1: a.c1.add(ctx, &b.c1)?,
        scale: a.scale,
        level: a.level,
    })
}

pub fn hsub(ctx: &Context, a: &Ciphertext, b: &Ciphertext) -> Result<Ciphertext> {
    check_levels(a.level, b.level)?;
    check_scales(a.scale, b.scale)?;
    Ok(Ciphertext {
        c0: a.c0.sub(ctx, &b.c0)?,
        c1: a.c1.sub(ctx, &b.c1)?,
        scale: a.scale,
        level: a.level,
    })
}

pub fn hadd_plain(ctx: &Context, a: &Ciphertext, pt: &Plaintext) -> Result<Ciphertext> {
    check_levels(a.level, pt.level)?;
    check_scales(a.scale, pt.scale)?;
    Ok(Ciphertext {
        c0: a.c0.add(ctx, &pt.poly)?,
        c1: a.c1.clone(),
        scale: a.scale,
        level: a.level,
    })
}

/// Raw key switch: given `input` (chain basis, any form) and a key encrypting
/// P*u_d*source, returns (k0, k1) with k0 + k1*s ~ input*source. Digits are
/// the centred per-prime residues; the accumulator carries the special prime
/// and is divided out at the end.
pub fn key_switch(ctx: &Context, input: &RnsPoly, key: &EvalKey) -> Result<(RnsPoly, RnsPoly)> {
    if input.special {
        return Err(Error::LevelMismatch("key-switch input carries special residue".into()));
    }
    let level = input.level;
    if key.pairs.len() <= level {
        return Err(Error::InvalidParams(format!(
            "eval key has {} digits, level {} needs {}",
            key.pairs.len(),
            level,
            level + 1
        )));
    }
    let n = ctx.degree();
    let coeff = input.clone().to_coeff(ctx);
    let mut acc0 = RnsPoly::zero(n, level, true, Form::Ntt);
    let mut acc1 = RnsPoly::zero(n, level, true, Form::Ntt);
    let mut dig_coeffs = vec![0i64; n];
    for d in 0..=level {
        let q_d = ctx.chain_modulus(d);
        for (c, &r) in dig_coeffs.iter_mut().zip(coeff.residue(d)) {
            *c = crate::ring::zq::center(r, q_d);
        }
        let dig = RnsPoly::from_signed(ctx, &dig_coeffs, level, true)?.to_ntt(ctx);
        acc0.mul_acc_trunc_inplace(ctx, &dig, &key.pairs[d].0);
        acc1.mul_acc_trunc_inplace(ctx, &dig, &key.pairs[d].1);
    }
    Ok((
        acc0.div_round_special(ctx)?,
        acc1.div_round_special(ctx)?,
    ))
}

/// Ciphertext-ciphertext product with relinearization and one rescale.
/// Consumes a level; output scale is a.scale*b.scale/q_dropped.
pub fn hmul(ctx: &Context, a: &Ciphertext, b: &Ciphertext, rlk: &EvalKey) -> Result<Ciphertext> {
    check_levels(a.level, b.level)?;
    let d0 = a.c0.mul(ctx, &b.c0)?;
    let d1 = a.c0.mul(ctx, &b.c1)?.add(ctx, &a.c1.mul(ctx, &b.c0)?)?;
    let d2 = a.c1.mul(ctx, &b.c1)?;
    let (k0, k1) = key_switch(ctx, &d2, rlk)?;
    let ct = Ciphertext {
        c0: d0.add(ctx, &k0)?,
        c1: d1.add(ctx, &k1)?,
        scale: a.scale * b.scale,
        level: a.level,
    };
    rescale(ctx, &ct)
}

/// Ciphertext-plaintext product without rescaling; scales multiply. Used by
/// the matrix kernels, which accumulate several products and rescale once.
pub fn hmul_plain_noscale(ctx: &Context, a: &Ciphertext, pt: &Plaintext) -> Result<Ciphertext> {
    check_levels(a.level, pt.level)?;
    Ok(Ciphertext {
        c0: a.c0.mul(ctx, &pt.poly)?,
        c1: a.c1.mul(ctx, &pt.poly)?,
        scale: a.scale * pt.scale,
        level: a.level,
    })
}

/// Ciphertext-plaintext product with an immediate rescale; consumes a level.
pub fn hmul_plain(ctx: &Context, a: &Ciphertext, pt: &Plaintext) -> Result<Ciphertext> {
    rescale(ctx, &hmul_plain_noscale(ctx, a, pt)?)
}

/// Drops the last chain prime from both components, dividing the scale by it.
pub fn rescale(ctx: &Context, a: &Ciphertext) -> Result<Ciphertext> {
    if a.level == 0 {
        return Err(Error::DepthExhausted);
    }
    let q_last = ctx.chain_modulus(a.level) as f64;
    Ok(Ciphertext {
        c0: a.c0.div_round_last(ctx)?,
        c1: a.c1.div_round_last(ctx)?,
        scale: a.scale / q_last,
        level: a.level - 1,
    })
}

/// Truncates to a lower level without touching the scale. Exact operation.
pub fn mod_switch_to(ctx: &Context, a: &Ciphertext, level: usize) -> Result<Ciphertext> {
    let _ = ctx;
    Ok(Ciphertext {
        c0: a.c0.drop_level(level)?,
        c1: a.c1.drop_level(level)?,
        scale: a.scale,
        level,
    })
}

/// Left-rotates slots by `k` (slot j takes the value of slot j+k). Needs the
/// rotation key for the normalized offset.
pub fn hrot(ctx: &Context, a: &Ciphertext, k: i64, keys: &RotKeys) -> Result<Ciphertext> {
    let slots = ctx.slots() as i64;
    let norm = k.rem_euclid(slots) as usize;
    if norm == 0 {
        return Ok(a.clone());
    }
    let key = keys.get(&norm).ok_or(Error::KeyNotFound { offset: norm })?;
    hrot_with_key(ctx, a, norm, key)
}

/// Rotation with an explicit key (protocol paths that carry keys separately).
pub fn hrot_with_key(
    ctx: &Context,
    a: &Ciphertext,
    offset: usize,
    key: &EvalKey,
) -> Result<Ciphertext> {
    let g = ctx.galois_for_rotation(offset as i64);
    let c0r = a.c0.automorphism(ctx, g)?;
    let c1r = a.c1.automorphism(ctx, g)?;
    let (k0, k1) = key_switch(ctx, &c1r, key)?;
    Ok(Ciphertext {
        c0: c0r.add(ctx, &k0)?,
        c1: k1,
        scale: a.scale,
        level: a.level,
    })
}
