//! Evaluation of compiled models on packed ciphertexts.

use std::collections::BTreeMap;

use crate::ckks::{self, Ciphertext, EvalKey, RotKeys};
use crate::error::{Error, Result};
use crate::ring::{Context, Form, RnsPoly};

use super::compile::{CompiledModel, CompiledOp, Group, Weight};

/// Evaluation keys the computing party holds. Rotation keys must cover the
/// model manifest; the relinearization key is required for activations and
/// for encrypted-weight models.
pub struct InferKeys<'a> {
    pub rot: &'a RotKeys,
    pub relin: Option<&'a EvalKey>,
}

/// One line of the evaluation trace: operation name and output level.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TraceEntry {
    pub op: String,
    pub level: usize,
}

pub fn infer(
    ctx: &Context,
    model: &CompiledModel,
    input: &Ciphertext,
    keys: &InferKeys,
) -> Result<Ciphertext> {
    infer_traced(ctx, model, input, keys).map(|(ct, _)| ct)
}

pub fn infer_traced(
    ctx: &Context,
    model: &CompiledModel,
    input: &Ciphertext,
    keys: &InferKeys,
) -> Result<(Ciphertext, Vec<TraceEntry>)> {
    let expected = ctx.scale();
    let rel = (input.scale - expected).abs() / expected;
    if rel > 1e-3 {
        return Err(Error::ScaleMismatch { a: input.scale, b: expected, rel });
    }
    let mut x = match input.level.cmp(&model.input_level) {
        std::cmp::Ordering::Greater => ckks::mod_switch_to(ctx, input, model.input_level)?,
        std::cmp::Ordering::Equal => input.clone(),
        std::cmp::Ordering::Less => {
            return Err(Error::LevelMismatch(format!(
                "input at level {}, model compiled for {}",
                input.level, model.input_level
            )))
        }
    };

    // Tile the first D slots over the whole vector so slot rotations below D
    // act on the logical D-vector.
    for &off in &model.replicate_offsets {
        let shifted = ckks::hrot(ctx, &x, off as i64, keys.rot)?;
        x = ckks::hadd(ctx, &x, &shifted)?;
    }
    let mut trace = vec![TraceEntry { op: "replicate".into(), level: x.level }];

    for (idx, op) in model.ops.iter().enumerate() {
        x = apply_op(ctx, op, &x, keys).map_err(|e| match e {
            Error::Model { .. } => e,
            other => Error::Model { layer: idx, reason: other.to_string() },
        })?;
        trace.push(TraceEntry { op: op.name().into(), level: x.level });
    }
    Ok((x, trace))
}

fn relin_key<'a>(keys: &InferKeys<'a>) -> Result<&'a EvalKey> {
    keys.relin
        .ok_or_else(|| Error::InvalidParams("relinearization key required".into()))
}

fn apply_op(
    ctx: &Context,
    op: &CompiledOp,
    x: &Ciphertext,
    keys: &InferKeys,
) -> Result<Ciphertext> {
    match op {
        CompiledOp::Matvec { groups, bias, .. } => matvec(ctx, groups, bias, x, keys),
        CompiledOp::Square { .. } => {
            let rlk = relin_key(keys)?;
            ckks::hmul(ctx, x, x, rlk)
        }
        CompiledOp::Poly { terms, constant, out_level, .. } => {
            poly(ctx, terms, constant.as_ref(), *out_level, x, keys)
        }
    }
}

/// Degree-2 ciphertext accumulator for encrypted-weight products: the three
/// tensor components are summed across a giant group and relinearized once.
struct Tri {
    c0: RnsPoly,
    c1: RnsPoly,
    c2: RnsPoly,
    scale: f64,
    level: usize,
}

fn tri_mul(ctx: &Context, a: &Ciphertext, w: &Ciphertext) -> Result<Tri> {
    if a.level != w.level {
        return Err(Error::LevelMismatch(format!(
            "operand levels {} and {}",
            a.level, w.level
        )));
    }
    Ok(Tri {
        c0: a.c0.mul(ctx, &w.c0)?,
        c1: a.c0.mul(ctx, &w.c1)?.add(ctx, &a.c1.mul(ctx, &w.c0)?)?,
        c2: a.c1.mul(ctx, &w.c1)?,
        scale: a.scale * w.scale,
        level: a.level,
    })
}

fn tri_add_assign(ctx: &Context, acc: &mut Tri, t: &Tri) -> Result<()> {
    acc.c0.add_inplace(ctx, &t.c0)?;
    acc.c1.add_inplace(ctx, &t.c1)?;
    acc.c2.add_inplace(ctx, &t.c2)?;
    Ok(())
}

fn tri_relin(ctx: &Context, t: Tri, rlk: &EvalKey) -> Result<Ciphertext> {
    let (k0, k1) = ckks::key_switch(ctx, &t.c2, rlk)?;
    Ok(Ciphertext {
        c0: t.c0.add(ctx, &k0)?,
        c1: t.c1.add(ctx, &k1)?,
        scale: t.scale,
        level: t.level,
    })
}

fn matvec(
    ctx: &Context,
    groups: &[Group],
    bias: &Weight,
    x: &Ciphertext,
    keys: &InferKeys,
) -> Result<Ciphertext> {
    let mut rotated: BTreeMap<usize, Ciphertext> = BTreeMap::new();
    let mut acc: Option<Ciphertext> = None;
    for group in groups {
        let inner = group_inner(ctx, group, x, keys, &mut rotated)?;
        let part = ckks::hrot(ctx, &inner, group.giant as i64, keys.rot)?;
        acc = Some(match acc {
            None => part,
            Some(a) => ckks::hadd(ctx, &a, &part)?,
        });
    }
    let summed = match acc {
        Some(a) => a,
        // Structurally empty matrix: the product is identically zero.
        None => {
            let zero = RnsPoly::zero(ctx.degree(), x.level, false, Form::Ntt);
            Ciphertext {
                c0: zero.clone(),
                c1: zero,
                scale: x.scale * ctx.chain_modulus(x.level) as f64,
                level: x.level,
            }
        }
    };
    let y = ckks::rescale(ctx, &summed)?;
    match bias {
        Weight::Plain(pt) => ckks::hadd_plain(ctx, &y, pt),
        Weight::Enc(ct) => ckks::hadd(ctx, &y, ct),
    }
}

fn group_inner(
    ctx: &Context,
    group: &Group,
    x: &Ciphertext,
    keys: &InferKeys,
    rotated: &mut BTreeMap<usize, Ciphertext>,
) -> Result<Ciphertext> {
    let mut plain_acc: Option<Ciphertext> = None;
    let mut enc_acc: Option<Tri> = None;
    for (i, w) in &group.terms {
        if !rotated.contains_key(i) {
            let xi = ckks::hrot(ctx, x, *i as i64, keys.rot)?;
            rotated.insert(*i, xi);
        }
        let xi = &rotated[i];
        match w {
            Weight::Plain(pt) => {
                let term = ckks::hmul_plain_noscale(ctx, xi, pt)?;
                plain_acc = Some(match plain_acc {
                    None => term,
                    Some(a) => ckks::hadd(ctx, &a, &term)?,
                });
            }
            Weight::Enc(ct) => {
                let term = tri_mul(ctx, xi, ct)?;
                enc_acc = Some(match enc_acc {
                    None => term,
                    Some(mut a) => {
                        tri_add_assign(ctx, &mut a, &term)?;
                        a
                    }
                });
            }
        }
    }
    match (plain_acc, enc_acc) {
        (Some(p), None) => Ok(p),
        (None, Some(t)) => tri_relin(ctx, t, relin_key(keys)?),
        (Some(p), Some(t)) => {
            let e = tri_relin(ctx, t, relin_key(keys)?);
            ckks::hadd(ctx, &p, &e?)
        }
        (None, None) => unreachable!("groups are built non-empty"),
    }
}

fn poly(
    ctx: &Context,
    terms: &[(u32, Weight)],
    constant: Option<&Weight>,
    out_level: usize,
    x: &Ciphertext,
    keys: &InferKeys,
) -> Result<Ciphertext> {
    let deg = terms.iter().map(|(k, _)| *k).max().unwrap_or(1);
    let x2 = if deg >= 2 {
        Some(ckks::hmul(ctx, x, x, relin_key(keys)?)?)
    } else {
        None
    };
    let x3 = match (&x2, deg >= 3) {
        (Some(x2), true) => {
            let xm = ckks::mod_switch_to(ctx, x, x2.level)?;
            Some(ckks::hmul(ctx, x2, &xm, relin_key(keys)?)?)
        }
        _ => None,
    };
    let mut acc: Option<Ciphertext> = None;
    for (k, w) in terms {
        let xk = match k {
            1 => x,
            2 => x2.as_ref().unwrap(),
            3 => x3.as_ref().unwrap(),
            other => {
                return Err(Error::InvalidParams(format!(
                    "unsupported activation power {other}"
                )))
            }
        };
        let t = match w {
            Weight::Plain(pt) => ckks::hmul_plain(ctx, xk, pt)?,
            Weight::Enc(ct) => ckks::hmul(ctx, xk, ct, relin_key(keys)?)?,
        };
        let t = ckks::mod_switch_to(ctx, &t, out_level)?;
        acc = Some(match acc {
            None => t,
            Some(a) => ckks::hadd(ctx, &a, &t)?,
        });
    }
    let y = acc.expect("polynomial has at least one power term");
    match constant {
        None => Ok(y),
        Some(Weight::Plain(pt)) => ckks::hadd_plain(ctx, &y, pt),
        Some(Weight::Enc(ct)) => ckks::hadd(ctx, &y, ct),
    }
}

impl CompiledModel {
    /// Reads the logical output vector out of decoded slot values.
    pub fn read_output(&self, slot_values: &[f64]) -> Vec<f64> {
        slot_values[..self.output_len.min(slot_values.len())].to_vec()
    }
}
