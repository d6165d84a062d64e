//! Model compilation for packed-ciphertext evaluation.
//!
//! Every linear layer (conv via an implicit im2col matrix, dense directly)
//! becomes a generalized-diagonal matrix-vector product over a common padded
//! width D: the smallest power of two covering every inter-layer vector. The
//! working vector is kept D-periodic across all slots, so a slot rotation by
//! k < D acts as a rotation of the logical D-vector and the baby-step
//! giant-step identity applies:
//!
//!   M x = sum_j rot_{jb}( sum_i rot_{-jb}(diag_{jb+i}) * rot_i(x) )
//!
//! Diagonals are pre-rotated by -jb at compile time, encoded at the exact
//! level and scale the layer executes at. Which diagonals exist is decided
//! from layer shapes alone, never weight values, so input parties can derive
//! the rotation-key manifest from the weight-free model structure.

use std::collections::BTreeSet;

use rand::Rng;

use crate::ckks::{self, Ciphertext, Plaintext, PublicKey};
use crate::error::{Error, Result};
use crate::ring::Context;

use super::{poly_degree, LayerSpec, LayerStructure, ModelSpec, ModelStructure, Shape};

/// Whether layer weights ride along as plaintexts or as ciphertexts under
/// the collective key.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WeightForm {
    Plain,
    Encrypted,
}

#[derive(Clone, Debug)]
pub enum Weight {
    Plain(Plaintext),
    Enc(Ciphertext),
}

impl Weight {
    pub fn level(&self) -> usize {
        match self {
            Weight::Plain(pt) => pt.level,
            Weight::Enc(ct) => ct.level,
        }
    }
}

/// One giant-step group: terms are (baby offset i, pre-rotated diagonal).
#[derive(Clone, Debug)]
pub struct Group {
    pub giant: usize,
    pub terms: Vec<(usize, Weight)>,
}

#[derive(Clone, Debug)]
pub enum CompiledOp {
    /// Linear layer; consumes one level. `name` is "conv2d" or "dense".
    Matvec {
        name: &'static str,
        out_len: usize,
        baby: usize,
        groups: Vec<Group>,
        bias: Weight,
        level_in: usize,
    },
    /// x^2 via one ciphertext square; consumes one level.
    Square { level_in: usize },
    /// General polynomial of degree 1..=3; consumes `out_level - level_in`
    /// levels. Terms hold the coefficient plaintexts, scale-aligned so every
    /// product lands on `out_scale`.
    Poly {
        terms: Vec<(u32, Weight)>,
        constant: Option<Weight>,
        level_in: usize,
        out_level: usize,
        out_scale: f64,
    },
}

impl CompiledOp {
    pub fn name(&self) -> &'static str {
        match self {
            CompiledOp::Matvec { name, .. } => name,
            CompiledOp::Square { .. } => "square",
            CompiledOp::Poly { .. } => "poly",
        }
    }
}

#[derive(Clone, Debug)]
pub struct CompiledModel {
    pub d: usize,
    pub input_len: usize,
    pub output_len: usize,
    pub input_level: usize,
    pub output_level: usize,
    pub output_scale: f64,
    /// Left-rotation offsets that tile the input D-periodically, in order.
    pub replicate_offsets: Vec<usize>,
    /// Every rotation offset evaluation can touch; equals
    /// `rotation_manifest` of the model structure.
    pub manifest: BTreeSet<usize>,
    pub ops: Vec<CompiledOp>,
    pub weight_form: WeightForm,
}

fn next_pow2(n: usize) -> usize {
    n.next_power_of_two()
}

/// Common padded width: covers every vector that flows between layers.
fn common_width(shapes: &[Shape]) -> usize {
    next_pow2(shapes.iter().map(Shape::len).max().unwrap_or(1))
}

/// Doubling offsets that fill all slots with D-periodic copies of the first
/// D entries: x += rot(x, slots - D), then slots - 2D, ...
fn replicate_offsets(slots: usize, d: usize) -> Vec<usize> {
    let mut offsets = Vec::new();
    let mut span = d;
    while span < slots {
        offsets.push(slots - span);
        span *= 2;
    }
    offsets
}

/// Marks which generalized diagonals of a layer's matrix can be nonzero,
/// from shapes alone. Diagonal k holds entries M[j][(j+k) mod D].
fn structural_mask(layer: &LayerStructure, in_shape: Shape, d: usize) -> Result<Vec<bool>> {
    let mut mask = vec![false; d];
    match layer {
        LayerStructure::Dense { rows, cols } => {
            for j in 0..*rows {
                for i in 0..*cols {
                    mask[(i + d - (j % d)) % d] = true;
                }
            }
        }
        LayerStructure::Conv2d { kernel, stride, in_channels, out_channels } => {
            let (h, w) = match in_shape {
                Shape::Spatial { height, width, .. } => (height, width),
                Shape::Flat { .. } => {
                    return Err(Error::Model {
                        layer: 0,
                        reason: "convolution after flattening".into(),
                    })
                }
            };
            let oh = (h - kernel) / stride + 1;
            let ow = (w - kernel) / stride + 1;
            for oc in 0..*out_channels {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let o = oc * oh * ow + oy * ow + ox;
                        for ic in 0..*in_channels {
                            for ky in 0..*kernel {
                                for kx in 0..*kernel {
                                    let i = ic * h * w + (oy * stride + ky) * w
                                        + (ox * stride + kx);
                                    mask[(i + d - (o % d)) % d] = true;
                                }
                            }
                        }
                    }
                }
            }
        }
        LayerStructure::Activation { .. } => unreachable!("not a matvec layer"),
    }
    Ok(mask)
}

fn baby_count(d: usize) -> usize {
    // Power-of-two split with baby >= giant-count, so b = 2^ceil(log2(d)/2).
    1 << (d.trailing_zeros() as usize).div_ceil(2)
}

/// Rotation offsets a model needs, derivable by any party from the
/// weight-free structure: replication offsets plus baby/giant steps of every
/// linear layer.
pub fn rotation_manifest(structure: &ModelStructure, slots: usize) -> Result<BTreeSet<usize>> {
    let shapes = structure.shape_trace()?;
    let d = common_width(&shapes);
    if d > slots {
        return Err(Error::Capacity { need: d, have: slots });
    }
    let b = baby_count(d);
    let mut manifest: BTreeSet<usize> = replicate_offsets(slots, d).into_iter().collect();
    for (idx, layer) in structure.layers.iter().enumerate() {
        if matches!(layer, LayerStructure::Activation { .. }) {
            continue;
        }
        for (k, hit) in structural_mask(layer, shapes[idx], d)?.iter().enumerate() {
            if !hit {
                continue;
            }
            let giant = (k / b) * b;
            let baby = k % b;
            if giant != 0 {
                manifest.insert(giant);
            }
            if baby != 0 {
                manifest.insert(baby);
            }
        }
    }
    Ok(manifest)
}

/// Materializes the layer's matrix (row-major out_len x in_len) and bias.
fn weight_matrix(layer: &LayerSpec, in_shape: Shape) -> (usize, usize, Vec<f64>, Vec<f64>) {
    match layer {
        LayerSpec::Dense { rows, cols, weights, bias } => {
            (*rows, *cols, weights.clone(), bias.clone())
        }
        LayerSpec::Conv2d { kernel, stride, in_channels, out_channels, weights, bias } => {
            let (h, w) = match in_shape {
                Shape::Spatial { height, width, .. } => (height, width),
                Shape::Flat { .. } => unreachable!("validated"),
            };
            let oh = (h - kernel) / stride + 1;
            let ow = (w - kernel) / stride + 1;
            let out_len = out_channels * oh * ow;
            let in_len = in_channels * h * w;
            let mut m = vec![0.0; out_len * in_len];
            let mut bias_vec = vec![0.0; out_len];
            for oc in 0..*out_channels {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let o = oc * oh * ow + oy * ow + ox;
                        bias_vec[o] = bias[oc];
                        for ic in 0..*in_channels {
                            for ky in 0..*kernel {
                                for kx in 0..*kernel {
                                    let i = ic * h * w + (oy * stride + ky) * w
                                        + (ox * stride + kx);
                                    m[o * in_len + i] = weights[oc][ic][ky][kx];
                                }
                            }
                        }
                    }
                }
            }
            (out_len, in_len, m, bias_vec)
        }
        LayerSpec::Activation { .. } => unreachable!("not a matvec layer"),
    }
}

pub fn compile(ctx: &Context, spec: &ModelSpec, input_level: usize) -> Result<CompiledModel> {
    spec.validate()?;
    let structure = spec.structure();
    let shapes = structure.shape_trace()?;
    structure.check_depth(input_level)?;
    if input_level > ctx.max_level() {
        return Err(Error::InvalidParams(format!(
            "input level {input_level} above chain top {}",
            ctx.max_level()
        )));
    }
    let slots = ctx.slots();
    let d = common_width(&shapes);
    if d > slots {
        return Err(Error::Capacity { need: d, have: slots });
    }
    let b = baby_count(d);
    let manifest = rotation_manifest(&structure, slots)?;

    let mut ops = Vec::with_capacity(spec.layers.len());
    let mut level = input_level;
    // Scale tracking mirrors the evaluator's arithmetic operation for
    // operation, so encoded biases match the running ciphertext scale
    // exactly.
    let mut scale = ctx.scale();

    for (idx, layer) in spec.layers.iter().enumerate() {
        match layer {
            LayerSpec::Conv2d { .. } | LayerSpec::Dense { .. } => {
                let name = if matches!(layer, LayerSpec::Dense { .. }) { "dense" } else { "conv2d" };
                let (out_len, in_len, m, bias_vec) = weight_matrix(layer, shapes[idx]);
                let mask = structural_mask(&structure.layers[idx], shapes[idx], d)?;
                let q_l = ctx.chain_modulus(level) as f64;
                let mut groups: Vec<Group> = Vec::new();
                for k in 0..d {
                    if !mask[k] {
                        continue;
                    }
                    let giant = (k / b) * b;
                    // diag[j] = M[j][(j+k) mod d], zero outside the matrix.
                    let mut diag = vec![0.0; d];
                    let mut any = false;
                    for (j, slot) in diag.iter_mut().enumerate().take(out_len.min(d)) {
                        let i = (j + k) % d;
                        if i < in_len {
                            *slot = m[j * in_len + i];
                            any |= *slot != 0.0;
                        }
                    }
                    if !any {
                        continue;
                    }
                    // Tile D-periodically over all slots, pre-rotated right
                    // by the giant step.
                    let full: Vec<f64> = (0..slots)
                        .map(|t| diag[(t + d - giant) % d])
                        .collect();
                    let pt = ckks::encode(ctx, &full, level, q_l)?;
                    match groups.last_mut() {
                        Some(g) if g.giant == giant => g.terms.push((k % b, Weight::Plain(pt))),
                        _ => groups.push(Group { giant, terms: vec![(k % b, Weight::Plain(pt))] }),
                    }
                }
                scale = (scale * q_l) / q_l;
                level -= 1;
                let bias_full: Vec<f64> = (0..slots)
                    .map(|t| if t % d < out_len { bias_vec[t % d] } else { 0.0 })
                    .collect();
                let bias = Weight::Plain(ckks::encode(ctx, &bias_full, level, scale)?);
                ops.push(CompiledOp::Matvec { name, out_len, baby: b, groups, bias, level_in: level + 1 });
            }
            LayerSpec::Activation { coeffs } => {
                if super::is_pure_square(coeffs) {
                    ops.push(CompiledOp::Square { level_in: level });
                    scale = scale * scale / ctx.chain_modulus(level) as f64;
                    level -= 1;
                    continue;
                }
                let deg = poly_degree(coeffs);
                let out_level = level - deg;
                let out_scale = scale;
                // Scales of x, x^2 = mul(x,x), x^3 = mul(x^2, x).
                let s1 = scale;
                let s2 = s1 * s1 / ctx.chain_modulus(level) as f64;
                let s3 = s2 * s1 / ctx.chain_modulus(level.saturating_sub(1)) as f64;
                let power_scale = [s1, s2, s3];
                let mut terms = Vec::new();
                for (k, &c) in coeffs.iter().enumerate().skip(1).take(deg) {
                    if c == 0.0 {
                        continue;
                    }
                    let lvl_k = level - (k - 1);
                    let q_k = ctx.chain_modulus(lvl_k) as f64;
                    // Align so s_k * pt_scale / q_k == out_scale.
                    let pt_scale = q_k * out_scale / power_scale[k - 1];
                    let pt = ckks::encode(ctx, &vec![c; slots], lvl_k, pt_scale)?;
                    terms.push((k as u32, Weight::Plain(pt)));
                }
                let constant = if coeffs[0] != 0.0 {
                    Some(Weight::Plain(ckks::encode(
                        ctx,
                        &vec![coeffs[0]; slots],
                        out_level,
                        out_scale,
                    )?))
                } else {
                    None
                };
                ops.push(CompiledOp::Poly { terms, constant, level_in: level, out_level, out_scale });
                level = out_level;
                scale = out_scale;
            }
        }
    }

    Ok(CompiledModel {
        d,
        input_len: shapes[0].len(),
        output_len: shapes.last().unwrap().len(),
        input_level,
        output_level: level,
        output_scale: scale,
        replicate_offsets: replicate_offsets(slots, d),
        manifest,
        ops,
        weight_form: WeightForm::Plain,
    })
}

/// Re-issues every weight as a ciphertext under `pk`. Levels and scales are
/// preserved, so evaluation follows the identical level schedule.
pub fn encrypt_model<R: Rng + ?Sized>(
    ctx: &Context,
    model: &CompiledModel,
    pk: &PublicKey,
    rng: &mut R,
) -> Result<CompiledModel> {
    let mut out = model.clone();
    out.weight_form = WeightForm::Encrypted;
    for op in &mut out.ops {
        match op {
            CompiledOp::Matvec { groups, bias, .. } => {
                for group in groups {
                    for (_, w) in &mut group.terms {
                        *w = encrypt_weight(ctx, pk, w, rng)?;
                    }
                }
                *bias = encrypt_weight(ctx, pk, bias, rng)?;
            }
            CompiledOp::Square { .. } => {}
            CompiledOp::Poly { terms, constant, .. } => {
                for (_, w) in terms {
                    *w = encrypt_weight(ctx, pk, w, rng)?;
                }
                if let Some(c) = constant {
                    *c = encrypt_weight(ctx, pk, c, rng)?;
                }
            }
        }
    }
    Ok(out)
}

fn encrypt_weight<R: Rng + ?Sized>(
    ctx: &Context,
    pk: &PublicKey,
    w: &Weight,
    rng: &mut R,
) -> Result<Weight> {
    match w {
        Weight::Plain(pt) => Ok(Weight::Enc(ckks::encrypt(ctx, pk, pt, rng)?)),
        Weight::Enc(_) => Err(Error::InvalidParams("model weights already encrypted".into())),
    }
}
