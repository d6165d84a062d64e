//! Precomputed state shared by every operation: NTT tables for each chain
//! prime and the derived special prime, rescaling inverses, CRT lift tables
//! for decoding, and the canonical-embedding twiddles.

use num_bigint::BigUint;
use num_complex::Complex64;
use num_traits::One;

use crate::error::{Error, Result};
use crate::ring::ntt::NttTable;
use crate::ring::params::CryptoParams;
use crate::ring::zq;

/// Mixed-radix lift tables for one level: everything needed to reconstruct
/// centered big-integer coefficients from RNS residues.
struct CrtLift {
    q_big: BigUint,
    q_half: BigUint,
    /// punctured[i] = Q / q_i
    punctured: Vec<BigUint>,
    /// inv[i] = (Q / q_i)^{-1} mod q_i
    inv: Vec<u64>,
}

/// Twiddles for the canonical embedding (encode/decode FFT).
pub struct EmbedTables {
    /// rot_group[i] = 5^i mod 2N; enumerates the Galois orbit of slots.
    pub rot_group: Vec<usize>,
    /// ksi_pows[j] = exp(2*pi*i * j / 2N), j in 0..=2N.
    pub ksi_pows: Vec<Complex64>,
}

pub struct Context {
    params: CryptoParams,
    hash: [u8; 32],
    chain: Vec<NttTable>,
    special: NttTable,
    special_q: u64,
    /// basis_plain[l] = chain moduli 0..=l; basis_special[l] additionally
    /// ends with the special prime.
    basis_plain: Vec<Vec<u64>>,
    basis_special: Vec<Vec<u64>>,
    /// inv_chain[j][i] = q_j^{-1} mod q_i, for i < j (rescale by q_j).
    inv_chain: Vec<Vec<u64>>,
    /// inv_special[i] = P^{-1} mod q_i.
    inv_special: Vec<u64>,
    /// p_mod_chain[i] = P mod q_i.
    p_mod_chain: Vec<u64>,
    crt: Vec<CrtLift>,
    embed: EmbedTables,
}

impl Context {
    pub fn new(params: CryptoParams) -> Result<Self> {
        params.validate()?;
        let n = params.ring_degree;
        let hash = params.params_hash();

        let chain: Vec<NttTable> = params
            .moduli
            .iter()
            .map(|&q| NttTable::new(q, n))
            .collect::<Result<_>>()?;

        // The special prime rides along only inside key material and gets
        // divided out again, so it just has to clear every chain prime with
        // margin; twice the largest keeps the key-switching rounding error
        // below a single bit of the result.
        let q_max = *params.moduli.iter().max().unwrap();
        let special_q = zq::next_ntt_prime(2 * q_max + 1, 2 * n as u64)
            .ok_or_else(|| Error::InvalidParams("no special prime above the chain".into()))?;
        let special = NttTable::new(special_q, n)?;

        let l_max = params.moduli.len() - 1;
        let mut basis_plain = Vec::with_capacity(l_max + 1);
        let mut basis_special = Vec::with_capacity(l_max + 1);
        for l in 0..=l_max {
            let plain: Vec<u64> = params.moduli[0..=l].to_vec();
            let mut sp = plain.clone();
            sp.push(special_q);
            basis_plain.push(plain);
            basis_special.push(sp);
        }

        let mut inv_chain = Vec::with_capacity(l_max + 1);
        for j in 0..=l_max {
            let mut row = Vec::with_capacity(j);
            for i in 0..j {
                let qi = params.moduli[i];
                row.push(zq::inv_mod(params.moduli[j] % qi, qi));
            }
            inv_chain.push(row);
        }
        let inv_special: Vec<u64> = params
            .moduli
            .iter()
            .map(|&qi| zq::inv_mod(special_q % qi, qi))
            .collect();
        let p_mod_chain: Vec<u64> = params.moduli.iter().map(|&qi| special_q % qi).collect();

        let mut crt = Vec::with_capacity(l_max + 1);
        for l in 0..=l_max {
            let mut q_big = BigUint::one();
            for &q in &params.moduli[0..=l] {
                q_big *= q;
            }
            let mut punctured = Vec::with_capacity(l + 1);
            let mut inv = Vec::with_capacity(l + 1);
            for &q in &params.moduli[0..=l] {
                let punc = &q_big / q;
                let punc_mod = (&punc % q).to_u64_digits();
                let punc_mod = if punc_mod.is_empty() { 0 } else { punc_mod[0] };
                inv.push(zq::inv_mod(punc_mod, q));
                punctured.push(punc);
            }
            crt.push(CrtLift {
                q_half: &q_big >> 1,
                q_big,
                punctured,
                inv,
            });
        }

        let slots = n / 2;
        let two_n = 2 * n;
        let mut rot_group = Vec::with_capacity(slots);
        let mut five_pow = 1usize;
        for _ in 0..slots {
            rot_group.push(five_pow);
            five_pow = (five_pow * 5) % two_n;
        }
        let mut ksi_pows = Vec::with_capacity(two_n + 1);
        for j in 0..=two_n {
            let angle = 2.0 * std::f64::consts::PI * j as f64 / two_n as f64;
            ksi_pows.push(Complex64::new(angle.cos(), angle.sin()));
        }

        Ok(Context {
            params,
            hash,
            chain,
            special,
            special_q,
            basis_plain,
            basis_special,
            inv_chain,
            inv_special,
            p_mod_chain,
            crt,
            embed: EmbedTables {
                rot_group,
                ksi_pows,
            },
        })
    }

    pub fn params(&self) -> &CryptoParams {
        &self.params
    }

    pub fn params_hash(&self) -> [u8; 32] {
        self.hash
    }

    pub fn degree(&self) -> usize {
        self.params.ring_degree
    }

    pub fn slots(&self) -> usize {
        self.params.ring_degree / 2
    }

    pub fn max_level(&self) -> usize {
        self.params.moduli.len() - 1
    }

    pub fn scale(&self) -> f64 {
        self.params.scale()
    }

    pub fn chain_modulus(&self, idx: usize) -> u64 {
        self.params.moduli[idx]
    }

    pub fn special_modulus(&self) -> u64 {
        self.special_q
    }

    pub fn basis(&self, level: usize, special: bool) -> &[u64] {
        if special {
            &self.basis_special[level]
        } else {
            &self.basis_plain[level]
        }
    }

    pub fn chain_table(&self, idx: usize) -> &NttTable {
        &self.chain[idx]
    }

    pub fn special_table(&self) -> &NttTable {
        &self.special
    }

    /// Table for residue slot `idx` of a poly at (level, special).
    pub fn table_at(&self, idx: usize, level: usize, special: bool) -> &NttTable {
        if special && idx == level + 1 {
            &self.special
        } else {
            debug_assert!(idx <= level);
            &self.chain[idx]
        }
    }

    /// q_drop^{-1} mod q_target, for rescaling by chain prime `drop`.
    pub fn inv_chain_mod(&self, drop: usize, target: usize) -> u64 {
        self.inv_chain[drop][target]
    }

    /// P^{-1} mod q_target.
    pub fn inv_special_mod(&self, target: usize) -> u64 {
        self.inv_special[target]
    }

    /// P mod q_target.
    pub fn p_mod_chain(&self, target: usize) -> u64 {
        self.p_mod_chain[target]
    }

    pub fn embed(&self) -> &EmbedTables {
        &self.embed
    }

    /// Product of chain moduli 0..=level.
    pub fn modulus_product(&self, level: usize) -> &BigUint {
        &self.crt[level].q_big
    }

    /// Centered CRT lift of one coefficient from its residues at `level`.
    /// `residues[i]` must be the coefficient's value mod chain prime i.
    pub fn crt_lift_centered(&self, level: usize, residues: &[u64]) -> num_bigint::BigInt {
        let pre = &self.crt[level];
        debug_assert_eq!(residues.len(), level + 1);
        let mut acc = BigUint::ZERO;
        for i in 0..=level {
            let q = self.params.moduli[i];
            let scaled = zq::mul_mod(residues[i], pre.inv[i], q);
            acc += &pre.punctured[i] * scaled;
        }
        acc %= &pre.q_big;
        if acc > pre.q_half {
            num_bigint::BigInt::from(acc) - num_bigint::BigInt::from(pre.q_big.clone())
        } else {
            num_bigint::BigInt::from(acc)
        }
    }

    /// Galois element implementing a left rotation by `k` slots.
    pub fn galois_for_rotation(&self, k: i64) -> u64 {
        let slots = self.slots() as i64;
        let two_n = 2 * self.degree() as u64;
        let r = k.rem_euclid(slots) as u64;
        let mut g = 1u64;
        for _ in 0..r {
            g = (g * 5) % two_n;
        }
        g
    }

    /// Checks a serialized header's parameter hash against this context.
    pub fn check_hash(&self, other: &[u8; 32], sender: u16) -> Result<()> {
        if &self.hash != other {
            return Err(Error::ParamsHashMismatch { sender });
        }
        Ok(())
    }
}
