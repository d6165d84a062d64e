//! Polynomials in R_Q = Z_Q[X]/(X^N + 1), stored as per-prime residue
//! vectors (RNS). A poly carries the chain residues for primes 0..=level and,
//! for key material, one extra residue for the derived special prime.

use crate::error::{Error, Result};
use crate::ring::context::Context;
use crate::ring::zq;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Form {
    Coeff,
    Ntt,
}

impl Form {
    pub fn name(self) -> &'static str {
        match self {
            Form::Coeff => "coeff",
            Form::Ntt => "ntt",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RnsPoly {
    pub level: usize,
    pub special: bool,
    pub form: Form,
    /// residues[0..=level] follow the chain order; the special-prime residue,
    /// if present, is last.
    residues: Vec<Vec<u64>>,
}

impl RnsPoly {
    pub fn zero(n: usize, level: usize, special: bool, form: Form) -> Self {
        let count = level + 1 + special as usize;
        RnsPoly {
            level,
            special,
            form,
            residues: vec![vec![0u64; n]; count],
        }
    }

    /// Builds a polynomial from small signed coefficients, reduced per prime.
    /// Output is in coefficient form.
    pub fn from_signed(ctx: &Context, coeffs: &[i64], level: usize, special: bool) -> Result<Self> {
        if coeffs.len() != ctx.degree() {
            return Err(Error::InvalidParams(format!(
                "coefficient count {} != ring degree {}",
                coeffs.len(),
                ctx.degree()
            )));
        }
        let mut p = Self::zero(ctx.degree(), level, special, Form::Coeff);
        for (idx, &q) in ctx.basis(level, special).iter().enumerate() {
            let res = &mut p.residues[idx];
            for (r, &c) in res.iter_mut().zip(coeffs) {
                *r = zq::reduce_i64(c, q);
            }
        }
        Ok(p)
    }

    pub fn num_residues(&self) -> usize {
        self.residues.len()
    }

    pub fn degree(&self) -> usize {
        self.residues[0].len()
    }

    pub fn residue(&self, idx: usize) -> &[u64] {
        &self.residues[idx]
    }

    pub fn residue_mut(&mut self, idx: usize) -> &mut [u64] {
        &mut self.residues[idx]
    }

    fn check_match(&self, rhs: &Self) -> Result<()> {
        if self.level != rhs.level || self.special != rhs.special {
            return Err(Error::LevelMismatch(format!(
                "lhs level {} (special {}) vs rhs level {} (special {})",
                self.level, self.special, rhs.level, rhs.special
            )));
        }
        if self.form != rhs.form {
            return Err(Error::FormMismatch {
                expected: self.form.name(),
                got: rhs.form.name(),
            });
        }
        Ok(())
    }

    pub fn ntt_inplace(&mut self, ctx: &Context) {
        assert_eq!(self.form, Form::Coeff, "poly already in NTT form");
        for idx in 0..self.num_residues() {
            ctx.table_at(idx, self.level, self.special)
                .forward(&mut self.residues[idx]);
        }
        self.form = Form::Ntt;
    }

    pub fn intt_inplace(&mut self, ctx: &Context) {
        assert_eq!(self.form, Form::Ntt, "poly already in coefficient form");
        for idx in 0..self.num_residues() {
            ctx.table_at(idx, self.level, self.special)
                .inverse(&mut self.residues[idx]);
        }
        self.form = Form::Coeff;
    }

    pub fn to_ntt(mut self, ctx: &Context) -> Self {
        if self.form == Form::Coeff {
            self.ntt_inplace(ctx);
        }
        self
    }

    pub fn to_coeff(mut self, ctx: &Context) -> Self {
        if self.form == Form::Ntt {
            self.intt_inplace(ctx);
        }
        self
    }

    pub fn add(&self, ctx: &Context, rhs: &Self) -> Result<Self> {
        let mut out = self.clone();
        out.add_inplace(ctx, rhs)?;
        Ok(out)
    }

    pub fn add_inplace(&mut self, ctx: &Context, rhs: &Self) -> Result<()> {
        self.check_match(rhs)?;
        for (idx, &q) in ctx.basis(self.level, self.special).iter().enumerate() {
            let a = &mut self.residues[idx];
            let b = &rhs.residues[idx];
            for (x, &y) in a.iter_mut().zip(b) {
                *x = zq::add_mod(*x, y, q);
            }
        }
        Ok(())
    }

    pub fn sub(&self, ctx: &Context, rhs: &Self) -> Result<Self> {
        let mut out = self.clone();
        out.sub_inplace(ctx, rhs)?;
        Ok(out)
    }

    pub fn sub_inplace(&mut self, ctx: &Context, rhs: &Self) -> Result<()> {
        self.check_match(rhs)?;
        for (idx, &q) in ctx.basis(self.level, self.special).iter().enumerate() {
            let a = &mut self.residues[idx];
            let b = &rhs.residues[idx];
            for (x, &y) in a.iter_mut().zip(b) {
                *x = zq::sub_mod(*x, y, q);
            }
        }
        Ok(())
    }

    pub fn neg(&self, ctx: &Context) -> Self {
        let mut out = self.clone();
        for (idx, &q) in ctx.basis(self.level, self.special).iter().enumerate() {
            for x in out.residues[idx].iter_mut() {
                *x = zq::neg_mod(*x, q);
            }
        }
        out
    }

    /// Pointwise product; both operands must be in NTT form.
    pub fn mul(&self, ctx: &Context, rhs: &Self) -> Result<Self> {
        let mut out = self.clone();
        out.mul_inplace(ctx, rhs)?;
        Ok(out)
    }

    pub fn mul_inplace(&mut self, ctx: &Context, rhs: &Self) -> Result<()> {
        self.check_match(rhs)?;
        if self.form != Form::Ntt {
            return Err(Error::FormMismatch {
                expected: "ntt",
                got: self.form.name(),
            });
        }
        for (idx, &q) in ctx.basis(self.level, self.special).iter().enumerate() {
            let a = &mut self.residues[idx];
            let b = &rhs.residues[idx];
            for (x, &y) in a.iter_mut().zip(b) {
                *x = zq::mul_mod(*x, y, q);
            }
        }
        Ok(())
    }

    /// Multiply-accumulate: self += a * b. Saves a temporary in inner loops.
    pub fn mul_acc_inplace(&mut self, ctx: &Context, a: &Self, b: &Self) -> Result<()> {
        self.check_match(a)?;
        self.check_match(b)?;
        if self.form != Form::Ntt {
            return Err(Error::FormMismatch {
                expected: "ntt",
                got: self.form.name(),
            });
        }
        for (idx, &q) in ctx.basis(self.level, self.special).iter().enumerate() {
            let acc = &mut self.residues[idx];
            let x = &a.residues[idx];
            let y = &b.residues[idx];
            for i in 0..acc.len() {
                acc[i] = zq::add_mod(acc[i], zq::mul_mod(x[i], y[i], q), q);
            }
        }
        Ok(())
    }

    /// Multiplies by the gadget constant P*u_d, where u_d is the CRT
    /// idempotent for chain prime d (u_d = 1 mod q_d, 0 mod the others).
    /// Only residue d survives, scaled by P mod q_d; the special residue is
    /// annihilated by the factor P. Requires the full key basis in NTT form.
    pub fn mul_p_gadget(&self, ctx: &Context, d: usize) -> Self {
        debug_assert!(self.special);
        debug_assert_eq!(self.form, Form::Ntt);
        debug_assert!(d <= self.level);
        let mut out = Self::zero(self.degree(), self.level, true, Form::Ntt);
        let q_d = ctx.chain_modulus(d);
        let p_mod = ctx.p_mod_chain(d);
        let src = &self.residues[d];
        let dst = &mut out.residues[d];
        for (o, &x) in dst.iter_mut().zip(src) {
            *o = zq::mul_mod(x, p_mod, q_d);
        }
        out
    }

    /// self += dig * key, where self and dig sit at (level, special) and key
    /// at the full key basis. Chain residues align by index; the special
    /// residue of key is its last. Lets key switching skip cloning truncated
    /// keys.
    pub(crate) fn mul_acc_trunc_inplace(&mut self, ctx: &Context, dig: &Self, key: &Self) {
        debug_assert!(self.special && dig.special && key.special);
        debug_assert_eq!(self.level, dig.level);
        debug_assert!(key.level >= self.level);
        debug_assert!(self.form == Form::Ntt && dig.form == Form::Ntt && key.form == Form::Ntt);
        let l = self.level;
        for idx in 0..=l {
            let q = ctx.chain_modulus(idx);
            let acc = &mut self.residues[idx];
            let x = &dig.residues[idx];
            let y = &key.residues[idx];
            for i in 0..acc.len() {
                acc[i] = zq::add_mod(acc[i], zq::mul_mod(x[i], y[i], q), q);
            }
        }
        let p = ctx.special_modulus();
        let acc = &mut self.residues[l + 1];
        let x = &dig.residues[l + 1];
        let y = &key.residues[key.level + 1];
        for i in 0..acc.len() {
            acc[i] = zq::add_mod(acc[i], zq::mul_mod(x[i], y[i], p), p);
        }
    }

    /// Applies the Galois automorphism X -> X^g (g odd). Coefficient i moves
    /// to i*g mod 2N, negated when the product falls in [N, 2N).
    pub fn automorphism(&self, ctx: &Context, g: u64) -> Result<Self> {
        let n = self.degree();
        let two_n = 2 * n as u64;
        if g % 2 == 0 || g >= two_n {
            return Err(Error::InvalidParams(format!("galois element {g} not odd in [1, 2N)")));
        }
        let was_ntt = self.form == Form::Ntt;
        let src = if was_ntt {
            self.clone().to_coeff(ctx)
        } else {
            self.clone()
        };
        let mut out = Self::zero(n, self.level, self.special, Form::Coeff);
        let basis = ctx.basis(self.level, self.special);
        for i in 0..n {
            let j = (i as u64 * g) % two_n;
            let (dst, negate) = if j < n as u64 {
                (j as usize, false)
            } else {
                ((j - n as u64) as usize, true)
            };
            for (idx, &q) in basis.iter().enumerate() {
                let v = src.residues[idx][i];
                out.residues[idx][dst] = if negate { zq::neg_mod(v, q) } else { v };
            }
        }
        if was_ntt {
            out.ntt_inplace(ctx);
        }
        Ok(out)
    }

    /// Truncates the chain to new_level. Residue truncation is reduction
    /// mod the shorter prime product, so the represented value follows.
    pub fn drop_level(&self, new_level: usize) -> Result<Self> {
        if new_level > self.level {
            return Err(Error::LevelMismatch(format!(
                "cannot raise level {} to {}",
                self.level, new_level
            )));
        }
        let mut residues = self.residues[0..=new_level].to_vec();
        if self.special {
            residues.push(self.residues[self.level + 1].clone());
        }
        Ok(RnsPoly {
            level: new_level,
            special: self.special,
            form: self.form,
            residues,
        })
    }

    pub fn drop_special(&self) -> Result<Self> {
        if !self.special {
            return Err(Error::LevelMismatch("poly has no special residue".into()));
        }
        Ok(RnsPoly {
            level: self.level,
            special: false,
            form: self.form,
            residues: self.residues[0..=self.level].to_vec(),
        })
    }

    /// Divides by the last chain prime with rounding and drops it.
    /// Computes round(x / q_last) via the centered remainder, the RNS form of
    /// CKKS rescaling. Requires NTT form and no special residue.
    pub fn div_round_last(&self, ctx: &Context) -> Result<Self> {
        if self.special {
            return Err(Error::LevelMismatch("rescale on key-basis poly".into()));
        }
        if self.level == 0 {
            return Err(Error::DepthExhausted);
        }
        self.div_round_dropping(ctx, self.level, false)
    }

    /// Divides by the special prime with rounding and drops its residue.
    /// Final step of key switching.
    pub fn div_round_special(&self, ctx: &Context) -> Result<Self> {
        if !self.special {
            return Err(Error::LevelMismatch("poly has no special residue".into()));
        }
        self.div_round_dropping(ctx, self.level + 1, true)
    }

    fn div_round_dropping(&self, ctx: &Context, drop_idx: usize, special: bool) -> Result<Self> {
        if self.form != Form::Ntt {
            return Err(Error::FormMismatch {
                expected: "ntt",
                got: self.form.name(),
            });
        }
        let n = self.degree();
        let q_drop = if special {
            ctx.special_modulus()
        } else {
            ctx.chain_modulus(drop_idx)
        };
        // Centered remainder of the dropped residue, in coefficient form.
        let mut rem = self.residues[drop_idx].clone();
        let drop_table = if special {
            ctx.special_table()
        } else {
            ctx.chain_table(drop_idx)
        };
        drop_table.inverse(&mut rem);
        let rem_centered: Vec<i64> = rem.iter().map(|&r| zq::center(r, q_drop)).collect();

        let new_level = if special { self.level } else { self.level - 1 };
        let mut out = Self::zero(n, new_level, false, Form::Ntt);
        let mut scratch = vec![0u64; n];
        for idx in 0..=new_level {
            let q = ctx.chain_modulus(idx);
            let inv = if special {
                ctx.inv_special_mod(idx)
            } else {
                ctx.inv_chain_mod(drop_idx, idx)
            };
            for (s, &c) in scratch.iter_mut().zip(&rem_centered) {
                *s = zq::reduce_i64(c, q);
            }
            ctx.chain_table(idx).forward(&mut scratch);
            let dst = &mut out.residues[idx];
            let src = &self.residues[idx];
            for i in 0..n {
                dst[i] = zq::mul_mod(zq::sub_mod(src[i], scratch[i], q), inv, q);
            }
        }
        Ok(out)
    }
}
