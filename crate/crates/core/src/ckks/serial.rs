//! Byte-level serialization for ciphertexts and keys. Fixed little-endian
//! layout, versioned; readers validate every structural field against the
//! active context before touching residue data.

use crate::ckks::{Ciphertext, EvalKey, PublicKey};
use crate::error::{Error, Result};
use crate::ring::context::Context;
use crate::ring::poly::{Form, RnsPoly};

pub const FORMAT_VERSION: u32 = 1;

pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Serialization(format!(
                "truncated: wanted {} bytes at offset {}, have {}",
                n,
                self.pos,
                self.buf.len()
            )));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn bytes(&mut self, n: usize) -> Result<&'a [u8]> {
        self.take(n)
    }

    pub fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::Serialization(format!(
                "{} trailing bytes",
                self.buf.len() - self.pos
            )));
        }
        Ok(())
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }
}

pub(crate) fn put_poly(out: &mut Vec<u8>, p: &RnsPoly) {
    out.extend_from_slice(&(p.level as u32).to_le_bytes());
    out.push(p.special as u8);
    out.push(matches!(p.form, Form::Ntt) as u8);
    for idx in 0..p.num_residues() {
        for &v in p.residue(idx) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
}

pub(crate) fn get_poly(ctx: &Context, r: &mut Reader) -> Result<RnsPoly> {
    let level = r.u32()? as usize;
    if level > ctx.max_level() {
        return Err(Error::Serialization(format!(
            "poly level {} above max {}",
            level,
            ctx.max_level()
        )));
    }
    let special = match r.u8()? {
        0 => false,
        1 => true,
        v => return Err(Error::Serialization(format!("bad special flag {v}"))),
    };
    let form = match r.u8()? {
        0 => Form::Coeff,
        1 => Form::Ntt,
        v => return Err(Error::Serialization(format!("bad form byte {v}"))),
    };
    let n = ctx.degree();
    let basis = ctx.basis(level, special);
    let mut p = RnsPoly::zero(n, level, special, form);
    for (idx, &q) in basis.iter().enumerate() {
        let raw = r.bytes(n * 8)?;
        let res = p.residue_mut(idx);
        for (i, chunk) in raw.chunks_exact(8).enumerate() {
            let v = u64::from_le_bytes(chunk.try_into().unwrap());
            if v >= q {
                return Err(Error::Serialization(format!(
                    "residue {v} out of range for modulus {q}"
                )));
            }
            res[i] = v;
        }
    }
    Ok(p)
}

/// Ciphertext wire format: version, level, form, scale, ring degree, then
/// the two component polys' residues (chain primes only, no special).
pub fn ct_to_bytes(ct: &Ciphertext) -> Vec<u8> {
    let mut out = Vec::with_capacity(21 + 2 * (ct.level + 1) * ct.c0.degree() * 8);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(ct.level as u32).to_le_bytes());
    out.push(matches!(ct.c0.form, Form::Ntt) as u8);
    out.extend_from_slice(&ct.scale.to_le_bytes());
    out.extend_from_slice(&(ct.c0.degree() as u32).to_le_bytes());
    for p in [&ct.c0, &ct.c1] {
        for idx in 0..p.num_residues() {
            for &v in p.residue(idx) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    out
}

pub fn ct_from_bytes(ctx: &Context, bytes: &[u8]) -> Result<Ciphertext> {
    let mut r = Reader::new(bytes);
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::Serialization(format!("unknown format version {version}")));
    }
    let level = r.u32()? as usize;
    if level > ctx.max_level() {
        return Err(Error::Serialization(format!(
            "ciphertext level {} above max {}",
            level,
            ctx.max_level()
        )));
    }
    let form = match r.u8()? {
        0 => Form::Coeff,
        1 => Form::Ntt,
        v => return Err(Error::Serialization(format!("bad form byte {v}"))),
    };
    let scale = r.f64()?;
    if !scale.is_finite() || scale <= 0.0 {
        return Err(Error::Serialization(format!("bad scale {scale}")));
    }
    let degree = r.u32()? as usize;
    if degree != ctx.degree() {
        return Err(Error::Serialization(format!(
            "ring degree {} does not match context {}",
            degree,
            ctx.degree()
        )));
    }
    let mut polys = Vec::with_capacity(2);
    for _ in 0..2 {
        let n = ctx.degree();
        let mut p = RnsPoly::zero(n, level, false, form);
        for idx in 0..=level {
            let q = ctx.chain_modulus(idx);
            let raw = r.bytes(n * 8)?;
            let res = p.residue_mut(idx);
            for (i, chunk) in raw.chunks_exact(8).enumerate() {
                let v = u64::from_le_bytes(chunk.try_into().unwrap());
                if v >= q {
                    return Err(Error::Serialization(format!(
                        "residue {v} out of range for modulus {q}"
                    )));
                }
                res[i] = v;
            }
        }
        polys.push(p);
    }
    r.finish()?;
    let c1 = polys.pop().unwrap();
    let c0 = polys.pop().unwrap();
    Ok(Ciphertext { c0, c1, scale, level })
}

pub fn pubkey_to_bytes(pk: &PublicKey) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    put_poly(&mut out, &pk.p0);
    put_poly(&mut out, &pk.p1);
    out
}

pub fn pubkey_from_bytes(ctx: &Context, bytes: &[u8]) -> Result<PublicKey> {
    let mut r = Reader::new(bytes);
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::Serialization(format!("unknown format version {version}")));
    }
    let p0 = get_poly(ctx, &mut r)?;
    let p1 = get_poly(ctx, &mut r)?;
    r.finish()?;
    Ok(PublicKey { p0, p1 })
}

pub fn evalkey_to_bytes(key: &EvalKey) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(key.pairs.len() as u32).to_le_bytes());
    for (b, a) in &key.pairs {
        put_poly(&mut out, b);
        put_poly(&mut out, a);
    }
    out
}

pub fn evalkey_from_bytes(ctx: &Context, bytes: &[u8]) -> Result<EvalKey> {
    let mut r = Reader::new(bytes);
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::Serialization(format!("unknown format version {version}")));
    }
    let count = r.u32()? as usize;
    if count > ctx.max_level() + 1 {
        return Err(Error::Serialization(format!("eval key digit count {count} too large")));
    }
    let mut pairs = Vec::with_capacity(count);
    for _ in 0..count {
        let b = get_poly(ctx, &mut r)?;
        let a = get_poly(ctx, &mut r)?;
        pairs.push((b, a));
    }
    r.finish()?;
    Ok(EvalKey { pairs })
}
