//! Multiparty key generation and distributed decryption. The joint secret
//! s = sum_i s_i never exists anywhere; parties exchange shares built from
//! common reference polynomials, and every public artifact is a plain sum of
//! those shares.

use std::collections::BTreeSet;

use rand::Rng;

use crate::ckks::{Ciphertext, EvalKey, Plaintext, PublicKey, SecretKey};
use crate::error::{Error, Result};
use crate::ring::context::Context;
use crate::ring::poly::RnsPoly;
use crate::ring::sampler;

/// A contribution from one party, tagged with its origin and the parameter
/// hash it was produced under. Aggregators refuse shares from a different
/// parameter set outright.
#[derive(Clone, Debug)]
pub struct Share<T> {
    pub party_id: u16,
    pub params_hash: [u8; 32],
    pub body: T,
}

impl<T> Share<T> {
    pub fn new(ctx: &Context, party_id: u16, body: T) -> Self {
        Share {
            party_id,
            params_hash: ctx.params_hash(),
            body,
        }
    }
}

/// Checks count, origin uniqueness, and parameter hashes; returns bodies in
/// input order.
pub fn validate_shares<'a, T>(
    ctx: &Context,
    shares: &'a [Share<T>],
    expected: usize,
) -> Result<Vec<&'a T>> {
    if shares.len() != expected {
        return Err(Error::ShareCount {
            got: shares.len(),
            expected,
        });
    }
    let mut seen = BTreeSet::new();
    for sh in shares {
        ctx.check_hash(&sh.params_hash, sh.party_id)?;
        if !seen.insert(sh.party_id) {
            return Err(Error::DuplicateShare { party: sh.party_id });
        }
    }
    Ok(shares.iter().map(|s| &s.body).collect())
}

// ---- common reference polynomials ----------------------------------------

/// CRS component for the collective encryption key.
pub fn crs_cpk(ctx: &Context) -> RnsPoly {
    let mut rng = sampler::crs_rng(&ctx.params().crs_seed, b"cpk");
    sampler::sample_uniform_ntt(ctx, ctx.max_level(), false, &mut rng)
}

/// CRS component for digit `d` of the rotation key at `offset`.
pub fn crs_rot(ctx: &Context, offset: usize, d: usize) -> RnsPoly {
    let label = format!("rotk/{offset}/{d}");
    let mut rng = sampler::crs_rng(&ctx.params().crs_seed, label.as_bytes());
    sampler::sample_uniform_ntt(ctx, ctx.max_level(), true, &mut rng)
}

/// CRS component for digit `d` of the relinearization key.
pub fn crs_relin(ctx: &Context, d: usize) -> RnsPoly {
    let label = format!("relin/{d}");
    let mut rng = sampler::crs_rng(&ctx.params().crs_seed, label.as_bytes());
    sampler::sample_uniform_ntt(ctx, ctx.max_level(), true, &mut rng)
}

// ---- collective encryption key --------------------------------------------

/// One party's long-lived key material.
#[derive(Clone)]
pub struct PartyKeys {
    pub party_id: u16,
    pub sk: SecretKey,
    /// p0_i = -a*s_i + e_i against the CRS `a`; the collective key is the sum.
    pub pk_share: RnsPoly,
}

pub fn keygen<R: Rng + ?Sized>(ctx: &Context, party_id: u16, rng: &mut R) -> PartyKeys {
    let params = ctx.params();
    let l = ctx.max_level();
    let s = sampler::sample_ternary(ctx, params.ternary_density, l, true, rng).to_ntt(ctx);
    let a = crs_cpk(ctx);
    let e = sampler::sample_gaussian(ctx, params.gaussian_sigma, l, false, rng).to_ntt(ctx);
    let s_chain = s.drop_special().expect("full-basis secret");
    let pk_share = a
        .mul(ctx, &s_chain)
        .expect("basis match")
        .neg(ctx)
        .add(ctx, &e)
        .expect("basis match");
    PartyKeys {
        party_id,
        sk: SecretKey { s },
        pk_share,
    }
}

/// Sums the key shares into the collective encryption key (p0, a).
pub fn aggregate_cpk(
    ctx: &Context,
    shares: &[Share<RnsPoly>],
    expected: usize,
) -> Result<PublicKey> {
    let bodies = validate_shares(ctx, shares, expected)?;
    let mut p0 = bodies[0].clone();
    for b in &bodies[1..] {
        p0.add_inplace(ctx, b)?;
    }
    Ok(PublicKey {
        p0,
        p1: crs_cpk(ctx),
    })
}

// ---- collective rotation keys (one round) ----------------------------------

/// Party i's share of the rotation key for `offset`: per digit d,
/// h_{i,d} = -a_d*s_i + e + P*u_d*sigma_g(s_i). Summing over parties yields a
/// switching key from sigma_g(s) to s.
pub fn rot_share<R: Rng + ?Sized>(
    ctx: &Context,
    sk: &SecretKey,
    offset: usize,
    rng: &mut R,
) -> Result<Vec<RnsPoly>> {
    let l = ctx.max_level();
    let sigma = ctx.params().gaussian_sigma;
    let g = ctx.galois_for_rotation(offset as i64);
    let s_rot = sk.s.automorphism(ctx, g)?;
    let mut out = Vec::with_capacity(l + 1);
    for d in 0..=l {
        let a_d = crs_rot(ctx, offset, d);
        let e = sampler::sample_gaussian(ctx, sigma, l, true, rng).to_ntt(ctx);
        let h = a_d
            .mul(ctx, &sk.s)?
            .neg(ctx)
            .add(ctx, &e)?
            .add(ctx, &s_rot.mul_p_gadget(ctx, d))?;
        out.push(h);
    }
    Ok(out)
}

/// Aggregates rotation-key shares for one offset into the collective key.
pub fn aggregate_rot(
    ctx: &Context,
    offset: usize,
    shares: &[Share<Vec<RnsPoly>>],
    expected: usize,
) -> Result<EvalKey> {
    let bodies = validate_shares(ctx, shares, expected)?;
    let digits = ctx.max_level() + 1;
    for b in &bodies {
        if b.len() != digits {
            return Err(Error::Protocol(format!(
                "rotation share has {} digits, expected {digits}",
                b.len()
            )));
        }
    }
    let mut pairs = Vec::with_capacity(digits);
    for d in 0..digits {
        let mut b_d = bodies[0][d].clone();
        for body in &bodies[1..] {
            b_d.add_inplace(ctx, &body[d])?;
        }
        pairs.push((b_d, crs_rot(ctx, offset, d)));
    }
    Ok(EvalKey { pairs })
}

// ---- collective relinearization key (two rounds) ---------------------------

/// Ephemeral state a party keeps between the two relinearization rounds.
pub struct RelinEphemeral {
    u: RnsPoly,
}

pub type RelinR1Share = Vec<(RnsPoly, RnsPoly)>;
pub type RelinR2Share = Vec<(RnsPoly, RnsPoly)>;

/// Round 1: with ephemeral u_i, per digit d emit
///   h0 = -u_i*a_d + e + P*u_d*s_i,   h1 = s_i*a_d + e'.
pub fn relin_share_round1<R: Rng + ?Sized>(
    ctx: &Context,
    sk: &SecretKey,
    rng: &mut R,
) -> Result<(RelinEphemeral, RelinR1Share)> {
    let params = ctx.params();
    let l = ctx.max_level();
    let u = sampler::sample_ternary(ctx, params.ternary_density, l, true, rng).to_ntt(ctx);
    let mut share = Vec::with_capacity(l + 1);
    for d in 0..=l {
        let a_d = crs_relin(ctx, d);
        let e0 = sampler::sample_gaussian(ctx, params.gaussian_sigma, l, true, rng).to_ntt(ctx);
        let e1 = sampler::sample_gaussian(ctx, params.gaussian_sigma, l, true, rng).to_ntt(ctx);
        let h0 = u
            .mul(ctx, &a_d)?
            .neg(ctx)
            .add(ctx, &e0)?
            .add(ctx, &sk.s.mul_p_gadget(ctx, d))?;
        let h1 = sk.s.mul(ctx, &a_d)?.add(ctx, &e1)?;
        share.push((h0, h1));
    }
    Ok((RelinEphemeral { u }, share))
}

/// Sums round-1 shares digit-wise.
pub fn relin_aggregate_r1(
    ctx: &Context,
    shares: &[Share<RelinR1Share>],
    expected: usize,
) -> Result<RelinR1Share> {
    let bodies = validate_shares(ctx, shares, expected)?;
    let digits = ctx.max_level() + 1;
    for b in &bodies {
        if b.len() != digits {
            return Err(Error::Protocol(format!(
                "relin round-1 share has {} digits, expected {digits}",
                b.len()
            )));
        }
    }
    let mut agg = Vec::with_capacity(digits);
    for d in 0..digits {
        let mut h0 = bodies[0][d].0.clone();
        let mut h1 = bodies[0][d].1.clone();
        for body in &bodies[1..] {
            h0.add_inplace(ctx, &body[d].0)?;
            h1.add_inplace(ctx, &body[d].1)?;
        }
        agg.push((h0, h1));
    }
    Ok(agg)
}

/// Round 2: against the aggregated round-1 values, per digit d emit
///   h0' = s_i*h0_d + e,   h1' = (u_i - s_i)*h1_d + e'.
pub fn relin_share_round2<R: Rng + ?Sized>(
    ctx: &Context,
    sk: &SecretKey,
    eph: &RelinEphemeral,
    agg_r1: &RelinR1Share,
    rng: &mut R,
) -> Result<RelinR2Share> {
    let params = ctx.params();
    let l = ctx.max_level();
    if agg_r1.len() != l + 1 {
        return Err(Error::Protocol(format!(
            "aggregated round-1 has {} digits, expected {}",
            agg_r1.len(),
            l + 1
        )));
    }
    let u_minus_s = eph.u.sub(ctx, &sk.s)?;
    let mut out = Vec::with_capacity(l + 1);
    for (h0_d, h1_d) in agg_r1 {
        let e0 = sampler::sample_gaussian(ctx, params.gaussian_sigma, l, true, rng).to_ntt(ctx);
        let e1 = sampler::sample_gaussian(ctx, params.gaussian_sigma, l, true, rng).to_ntt(ctx);
        let h0p = sk.s.mul(ctx, h0_d)?.add(ctx, &e0)?;
        let h1p = u_minus_s.mul(ctx, h1_d)?.add(ctx, &e1)?;
        out.push((h0p, h1p));
    }
    Ok(out)
}

/// Final aggregation: rlk_d = (sum_i h0'_{i,d} + sum_i h1'_{i,d}, h1_d).
/// The pair satisfies rlk.0 + rlk.1*s = P*u_d*s^2 + noise, the eval-key
/// identity relinearization needs.
pub fn relin_aggregate_r2(
    ctx: &Context,
    agg_r1: &RelinR1Share,
    shares: &[Share<RelinR2Share>],
    expected: usize,
) -> Result<EvalKey> {
    let bodies = validate_shares(ctx, shares, expected)?;
    let digits = ctx.max_level() + 1;
    for b in &bodies {
        if b.len() != digits {
            return Err(Error::Protocol(format!(
                "relin round-2 share has {} digits, expected {digits}",
                b.len()
            )));
        }
    }
    let mut pairs = Vec::with_capacity(digits);
    for d in 0..digits {
        let mut b_d = bodies[0][d].0.clone();
        b_d.add_inplace(ctx, &bodies[0][d].1)?;
        for body in &bodies[1..] {
            b_d.add_inplace(ctx, &body[d].0)?;
            b_d.add_inplace(ctx, &body[d].1)?;
        }
        pairs.push((b_d, agg_r1[d].1.clone()));
    }
    Ok(EvalKey { pairs })
}

// ---- distributed decryption -------------------------------------------------

/// Decryption share: pd_i = c1*s_i + e_smudge. The smudging noise drowns the
/// information a curious aggregator could extract about s_i from the share.
pub fn dec_share<R: Rng + ?Sized>(
    ctx: &Context,
    sk: &SecretKey,
    ct: &Ciphertext,
    rng: &mut R,
) -> Result<RnsPoly> {
    let params = ctx.params();
    let s = sk.s.drop_level(ct.level)?.drop_special()?;
    let e = sampler::sample_gaussian(ctx, params.smudge_sigma, ct.level, false, rng).to_ntt(ctx);
    ct.c1.mul(ctx, &s)?.add(ctx, &e)
}

/// Combines c0 with all decryption shares: m = c0 + sum_i pd_i.
pub fn dec_aggregate(
    ctx: &Context,
    ct: &Ciphertext,
    shares: &[Share<RnsPoly>],
    expected: usize,
) -> Result<Plaintext> {
    let bodies = validate_shares(ctx, shares, expected)?;
    let mut m = ct.c0.clone();
    for b in bodies {
        m.add_inplace(ctx, b)?;
    }
    Ok(Plaintext {
        poly: m,
        scale: ct.scale,
        level: ct.level,
    })
}

// ---- public key switch (re-encryption to a target key) ----------------------

/// Share of a switch from the collective key to a target public key:
///   h0 = c1*s_i + u_i*tpk.p0 + e_smudge,   h1 = u_i*tpk.p1 + e.
/// The sum re-encrypts the ciphertext under the target key without anyone
/// decrypting.
pub fn pcks_share<R: Rng + ?Sized>(
    ctx: &Context,
    sk: &SecretKey,
    tpk: &PublicKey,
    ct: &Ciphertext,
    rng: &mut R,
) -> Result<(RnsPoly, RnsPoly)> {
    let params = ctx.params();
    let level = ct.level;
    let s = sk.s.drop_level(level)?.drop_special()?;
    let u = sampler::sample_ternary(ctx, params.ternary_density, level, false, rng).to_ntt(ctx);
    let e0 = sampler::sample_gaussian(ctx, params.smudge_sigma, level, false, rng).to_ntt(ctx);
    let e1 = sampler::sample_gaussian(ctx, params.gaussian_sigma, level, false, rng).to_ntt(ctx);
    let p0 = tpk.p0.drop_level(level)?;
    let p1 = tpk.p1.drop_level(level)?;
    let h0 = ct.c1.mul(ctx, &s)?.add(ctx, &u.mul(ctx, &p0)?)?.add(ctx, &e0)?;
    let h1 = u.mul(ctx, &p1)?.add(ctx, &e1)?;
    Ok((h0, h1))
}

/// Aggregates switch shares: (c0 + sum h0_i, sum h1_i), decryptable by the
/// target secret key.
pub fn pcks_aggregate(
    ctx: &Context,
    ct: &Ciphertext,
    shares: &[Share<(RnsPoly, RnsPoly)>],
    expected: usize,
) -> Result<Ciphertext> {
    let bodies = validate_shares(ctx, shares, expected)?;
    let mut c0 = ct.c0.clone();
    let mut c1 = bodies[0].1.clone();
    c0.add_inplace(ctx, &bodies[0].0)?;
    for b in &bodies[1..] {
        c0.add_inplace(ctx, &b.0)?;
        c1.add_inplace(ctx, &b.1)?;
    }
    Ok(Ciphertext {
        c0,
        c1,
        scale: ct.scale,
        level: ct.level,
    })
}
