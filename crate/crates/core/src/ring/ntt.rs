//! Negacyclic number-theoretic transform over Z_q[X]/(X^n + 1).
//!
//! The forward transform evaluates a polynomial at the odd powers of a
//! primitive 2n-th root of unity psi, so pointwise multiplication of two
//! transformed polynomials is multiplication mod X^n + 1. Twiddle factors are
//! stored in bit-reversed order with Shoup companions; the forward pass uses
//! Cooley-Tukey butterflies, the inverse Gentleman-Sande.

use super::zq::{add_mod, inv_mod, mul_shoup, pow_mod, shoup, sub_mod};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct NttTable {
    pub q: u64,
    pub n: usize,
    psi_br: Vec<u64>,
    psi_br_shoup: Vec<u64>,
    ipsi_br: Vec<u64>,
    ipsi_br_shoup: Vec<u64>,
    n_inv: u64,
    n_inv_shoup: u64,
}

fn bit_reverse(x: usize, bits: u32) -> usize {
    x.reverse_bits() >> (usize::BITS - bits)
}

/// Finds a primitive 2n-th root of unity mod q. Requires q = 1 mod 2n.
fn primitive_root_2n(q: u64, n: usize) -> Result<u64> {
    let two_n = 2 * n as u64;
    if (q - 1) % two_n != 0 {
        return Err(Error::InvalidParams(format!(
            "modulus {q} is not 1 mod {two_n}"
        )));
    }
    let exp = (q - 1) / two_n;
    for c in 2..u64::MAX {
        let psi = pow_mod(c, exp, q);
        // n is a power of two, so psi^n = -1 iff psi has exact order 2n.
        if pow_mod(psi, n as u64, q) == q - 1 {
            return Ok(psi);
        }
    }
    unreachable!()
}

impl NttTable {
    pub fn new(q: u64, n: usize) -> Result<Self> {
        if !n.is_power_of_two() || n < 2 {
            return Err(Error::InvalidParams(format!(
                "ring degree {n} is not a power of two >= 2"
            )));
        }
        let psi = primitive_root_2n(q, n)?;
        let psi_inv = inv_mod(psi, q);
        let bits = n.trailing_zeros();
        let mut psi_br = vec![0u64; n];
        let mut ipsi_br = vec![0u64; n];
        let mut pw: u64 = 1;
        let mut ipw: u64 = 1;
        let mut psi_pows = vec![0u64; n];
        let mut ipsi_pows = vec![0u64; n];
        for i in 0..n {
            psi_pows[i] = pw;
            ipsi_pows[i] = ipw;
            pw = super::zq::mul_mod(pw, psi, q);
            ipw = super::zq::mul_mod(ipw, psi_inv, q);
        }
        for i in 0..n {
            psi_br[i] = psi_pows[bit_reverse(i, bits)];
            ipsi_br[i] = ipsi_pows[bit_reverse(i, bits)];
        }
        let psi_br_shoup = psi_br.iter().map(|&w| shoup(w, q)).collect();
        let ipsi_br_shoup = ipsi_br.iter().map(|&w| shoup(w, q)).collect();
        let n_inv = inv_mod(n as u64, q);
        Ok(Self {
            q,
            n,
            psi_br,
            psi_br_shoup,
            ipsi_br,
            ipsi_br_shoup,
            n_inv,
            n_inv_shoup: shoup(n_inv, q),
        })
    }

    /// In-place forward negacyclic NTT. Input in standard coefficient order.
    pub fn forward(&self, a: &mut [u64]) {
        debug_assert_eq!(a.len(), self.n);
        let q = self.q;
        let n = self.n;
        let mut t = n;
        let mut m = 1;
        while m < n {
            t >>= 1;
            for i in 0..m {
                let w = self.psi_br[m + i];
                let ws = self.psi_br_shoup[m + i];
                let j1 = 2 * i * t;
                for j in j1..j1 + t {
                    let u = a[j];
                    let v = mul_shoup(a[j + t], w, ws, q);
                    a[j] = add_mod(u, v, q);
                    a[j + t] = sub_mod(u, v, q);
                }
            }
            m <<= 1;
        }
    }

    /// In-place inverse of `forward`.
    pub fn inverse(&self, a: &mut [u64]) {
        debug_assert_eq!(a.len(), self.n);
        let q = self.q;
        let n = self.n;
        let mut t = 1;
        let mut m = n;
        while m > 1 {
            let h = m >> 1;
            let mut j1 = 0;
            for i in 0..h {
                let w = self.ipsi_br[h + i];
                let ws = self.ipsi_br_shoup[h + i];
                for j in j1..j1 + t {
                    let u = a[j];
                    let v = a[j + t];
                    a[j] = add_mod(u, v, q);
                    a[j + t] = mul_shoup(sub_mod(u, v, q), w, ws, q);
                }
                j1 += 2 * t;
            }
            t <<= 1;
            m = h;
        }
        for x in a.iter_mut() {
            *x = mul_shoup(*x, self.n_inv, self.n_inv_shoup, q);
        }
    }
}
