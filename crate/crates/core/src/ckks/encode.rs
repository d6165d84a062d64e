//! Canonical-embedding encoding: N/2 complex slots <-> integer coefficients
//! of R. Slot-wise products of vectors correspond to ring products of their
//! encodings, which is what makes SIMD evaluation work.

use num_complex::Complex64;
use num_traits::ToPrimitive;

use crate::ckks::Plaintext;
use crate::error::{Error, Result};
use crate::ring::context::Context;
use crate::ring::poly::RnsPoly;

fn bit_reverse(vals: &mut [Complex64]) {
    let n = vals.len();
    let mut j = 0usize;
    for i in 1..n {
        let mut bit = n >> 1;
        while j & bit != 0 {
            j ^= bit;
            bit >>= 1;
        }
        j |= bit;
        if i < j {
            vals.swap(i, j);
        }
    }
}

/// Slot values -> embedding preimage (the inverse special FFT). Input length
/// must be a power of two.
fn special_fft_inv(ctx: &Context, vals: &mut [Complex64]) {
    let size = vals.len();
    let two_n = 2 * ctx.degree();
    let embed = ctx.embed();
    let mut len = size;
    while len >= 2 {
        let lenh = len >> 1;
        let lenq = len << 2;
        let mut i = 0;
        while i < size {
            for j in 0..lenh {
                let idx = (lenq - (embed.rot_group[j] % lenq)) * two_n / lenq;
                let u = vals[i + j] + vals[i + j + lenh];
                let v = (vals[i + j] - vals[i + j + lenh]) * embed.ksi_pows[idx];
                vals[i + j] = u;
                vals[i + j + lenh] = v;
            }
            i += len;
        }
        len >>= 1;
    }
    bit_reverse(vals);
    let scale = 1.0 / size as f64;
    for v in vals.iter_mut() {
        *v *= scale;
    }
}

/// Embedding preimage -> slot values (the forward special FFT).
fn special_fft(ctx: &Context, vals: &mut [Complex64]) {
    let size = vals.len();
    let two_n = 2 * ctx.degree();
    let embed = ctx.embed();
    bit_reverse(vals);
    let mut len = 2;
    while len <= size {
        let lenh = len >> 1;
        let lenq = len << 2;
        let mut i = 0;
        while i < size {
            for j in 0..lenh {
                let idx = (embed.rot_group[j] % lenq) * two_n / lenq;
                let u = vals[i + j];
                let v = vals[i + j + lenh] * embed.ksi_pows[idx];
                vals[i + j] = u + v;
                vals[i + j + lenh] = u - v;
            }
            i += len;
        }
        len <<= 1;
    }
}

/// Encodes up to N/2 reals into a plaintext at the given level and scale.
/// Shorter inputs are zero-padded to the full slot count.
pub fn encode(ctx: &Context, values: &[f64], level: usize, scale: f64) -> Result<Plaintext> {
    let slots = ctx.slots();
    if values.len() > slots {
        return Err(Error::Encoding(format!(
            "{} values exceed {} slots",
            values.len(),
            slots
        )));
    }
    if !scale.is_finite() || scale <= 0.0 {
        return Err(Error::Encoding(format!("bad scale {scale}")));
    }
    if level > ctx.max_level() {
        return Err(Error::LevelMismatch(format!(
            "encode level {} above max {}",
            level,
            ctx.max_level()
        )));
    }
    let mut buf: Vec<Complex64> = values
        .iter()
        .map(|&v| Complex64::new(v, 0.0))
        .chain(std::iter::repeat(Complex64::new(0.0, 0.0)))
        .take(slots)
        .collect();
    special_fft_inv(ctx, &mut buf);

    let n = ctx.degree();
    let mut coeffs = vec![0i64; n];
    // The full modulus at any level exceeds 2^60; round-off must stay far
    // inside it or the value wraps.
    let limit = (1i64 << 62) as f64;
    for (i, c) in buf.iter().enumerate() {
        let re = (c.re * scale).round();
        let im = (c.im * scale).round();
        if re.abs() >= limit || im.abs() >= limit {
            return Err(Error::Encoding(format!(
                "scaled coefficient {re} overflows the modulus"
            )));
        }
        coeffs[i] = re as i64;
        coeffs[i + slots] = im as i64;
    }
    let poly = RnsPoly::from_signed(ctx, &coeffs, level, false)?.to_ntt(ctx);
    Ok(Plaintext { poly, scale, level })
}

/// Decodes a plaintext back to N/2 reals (slot real parts).
pub fn decode(ctx: &Context, pt: &Plaintext) -> Result<Vec<f64>> {
    let poly = pt.poly.clone().to_coeff(ctx);
    let slots = ctx.slots();
    let level = pt.level;
    let mut residues = vec![0u64; level + 1];
    let mut buf = vec![Complex64::new(0.0, 0.0); slots];
    for i in 0..slots {
        for idx in 0..=level {
            residues[idx] = poly.residue(idx)[i];
        }
        let re = ctx.crt_lift_centered(level, &residues).to_f64().unwrap_or(f64::MAX);
        for idx in 0..=level {
            residues[idx] = poly.residue(idx)[i + slots];
        }
        let im = ctx.crt_lift_centered(level, &residues).to_f64().unwrap_or(f64::MAX);
        buf[i] = Complex64::new(re / pt.scale, im / pt.scale);
    }
    special_fft(ctx, &mut buf);
    Ok(buf.into_iter().map(|c| c.re).collect())
}
