//! Encrypted neural-network inference. A model is a sequence of conv /
//! dense / polynomial-activation layers evaluated on a packed ciphertext:
//! linear layers become diagonal matrix-vector products (baby-step
//! giant-step), activations become low-degree polynomial evaluation.
//!
//! Tensor flattening is channel-major throughout: index = ch*(H*W) + y*W + x.
//! For the single-channel input this coincides with the row-major feature
//! matrix the packing layer produces.

pub mod compile;
pub mod exec;
pub mod fixtures;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct InputShape {
    pub rows: usize,
    pub cols: usize,
}

/// Per-feature affine preprocessing clients apply before packing:
/// x' = (x + shift) * scale, indexed by the flat feature position.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct Normalization {
    pub scale: Vec<f64>,
    pub shift: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "camelCase", deny_unknown_fields)]
pub enum LayerSpec {
    /// 2-D convolution, valid padding. weights[oc][ic][ky][kx].
    Conv2d {
        kernel: usize,
        stride: usize,
        in_channels: usize,
        out_channels: usize,
        weights: Vec<Vec<Vec<Vec<f64>>>>,
        bias: Vec<f64>,
    },
    /// Fully connected: rows outputs, cols inputs, weights row-major.
    Dense {
        rows: usize,
        cols: usize,
        weights: Vec<f64>,
        bias: Vec<f64>,
    },
    /// Element-wise polynomial sum_k coeffs[k] * x^k, degree 1..=3.
    Activation { coeffs: Vec<f64> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct ModelSpec {
    pub input_shape: InputShape,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normalization: Option<Normalization>,
    pub layers: Vec<LayerSpec>,
}

/// Tensor shape flowing between layers.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Shape {
    Spatial { channels: usize, height: usize, width: usize },
    Flat { len: usize },
}

impl Shape {
    pub fn len(&self) -> usize {
        match *self {
            Shape::Spatial { channels, height, width } => channels * height * width,
            Shape::Flat { len } => len,
        }
    }
}

/// Structure-only view of a layer: everything needed to derive shapes,
/// depth, and the rotation manifest, but no weight values. This is what
/// input-holding parties receive.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "camelCase", deny_unknown_fields)]
pub enum LayerStructure {
    Conv2d {
        kernel: usize,
        stride: usize,
        in_channels: usize,
        out_channels: usize,
    },
    Dense { rows: usize, cols: usize },
    Activation { degree: usize, square: bool },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct ModelStructure {
    pub input_shape: InputShape,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normalization: Option<Normalization>,
    pub layers: Vec<LayerStructure>,
}

impl LayerSpec {
    fn structure(&self) -> LayerStructure {
        match self {
            LayerSpec::Conv2d { kernel, stride, in_channels, out_channels, .. } => {
                LayerStructure::Conv2d {
                    kernel: *kernel,
                    stride: *stride,
                    in_channels: *in_channels,
                    out_channels: *out_channels,
                }
            }
            LayerSpec::Dense { rows, cols, .. } => LayerStructure::Dense {
                rows: *rows,
                cols: *cols,
            },
            LayerSpec::Activation { coeffs } => LayerStructure::Activation {
                degree: poly_degree(coeffs),
                square: is_pure_square(coeffs),
            },
        }
    }
}

pub(crate) fn poly_degree(coeffs: &[f64]) -> usize {
    coeffs
        .iter()
        .rposition(|&c| c != 0.0)
        .unwrap_or(0)
}

pub(crate) fn is_pure_square(coeffs: &[f64]) -> bool {
    poly_degree(coeffs) == 2 && coeffs[0] == 0.0 && coeffs[1] == 0.0 && coeffs[2] == 1.0
}

/// Multiplicative depth of one structural layer.
pub fn layer_depth(layer: &LayerStructure) -> usize {
    match layer {
        LayerStructure::Conv2d { .. } | LayerStructure::Dense { .. } => 1,
        LayerStructure::Activation { degree, square } => {
            if *square {
                1
            } else {
                *degree
            }
        }
    }
}

impl ModelStructure {
    /// Shape after each layer; index 0 is the input shape.
    pub fn shape_trace(&self) -> Result<Vec<Shape>> {
        let mut shapes = Vec::with_capacity(self.layers.len() + 1);
        let mut cur = Shape::Spatial {
            channels: 1,
            height: self.input_shape.rows,
            width: self.input_shape.cols,
        };
        shapes.push(cur);
        for (idx, layer) in self.layers.iter().enumerate() {
            cur = match layer {
                LayerStructure::Conv2d { kernel, stride, in_channels, out_channels } => {
                    let (c, h, w) = match cur {
                        Shape::Spatial { channels, height, width } => (channels, height, width),
                        Shape::Flat { .. } => {
                            return Err(Error::Model {
                                layer: idx,
                                reason: "convolution after flattening".into(),
                            })
                        }
                    };
                    if c != *in_channels {
                        return Err(Error::Model {
                            layer: idx,
                            reason: format!("expects {in_channels} channels, input has {c}"),
                        });
                    }
                    if *kernel == 0 || *stride == 0 || *out_channels == 0 {
                        return Err(Error::Model {
                            layer: idx,
                            reason: "kernel, stride, and channels must be positive".into(),
                        });
                    }
                    if h < *kernel || w < *kernel {
                        return Err(Error::Model {
                            layer: idx,
                            reason: format!("kernel {kernel} larger than input {h}x{w}"),
                        });
                    }
                    Shape::Spatial {
                        channels: *out_channels,
                        height: (h - kernel) / stride + 1,
                        width: (w - kernel) / stride + 1,
                    }
                }
                LayerStructure::Dense { rows, cols } => {
                    if cur.len() != *cols {
                        return Err(Error::Model {
                            layer: idx,
                            reason: format!(
                                "dense expects {cols} inputs, previous layer produces {}",
                                cur.len()
                            ),
                        });
                    }
                    if *rows == 0 {
                        return Err(Error::Model {
                            layer: idx,
                            reason: "dense output dimension is zero".into(),
                        });
                    }
                    Shape::Flat { len: *rows }
                }
                LayerStructure::Activation { degree, .. } => {
                    if *degree == 0 || *degree > 3 {
                        return Err(Error::Model {
                            layer: idx,
                            reason: format!("activation degree {degree} outside 1..=3"),
                        });
                    }
                    cur
                }
            };
            shapes.push(cur);
        }
        Ok(shapes)
    }

    /// Total multiplicative depth, with per-layer attribution against a
    /// budget: errors on the first layer whose cumulative depth exceeds it.
    pub fn check_depth(&self, budget: usize) -> Result<usize> {
        let mut used = 0usize;
        for (idx, layer) in self.layers.iter().enumerate() {
            used += layer_depth(layer);
            if used > budget {
                return Err(Error::DepthOverflow {
                    layer: idx,
                    need: used,
                    have: budget,
                });
            }
        }
        Ok(used)
    }

    pub fn depth(&self) -> usize {
        self.layers.iter().map(layer_depth).sum()
    }

    pub fn input_len(&self) -> usize {
        self.input_shape.rows * self.input_shape.cols
    }

    pub fn output_len(&self) -> Result<usize> {
        Ok(self.shape_trace()?.last().unwrap().len())
    }
}

impl ModelSpec {
    pub fn structure(&self) -> ModelStructure {
        ModelStructure {
            input_shape: self.input_shape,
            normalization: self.normalization.clone(),
            layers: self.layers.iter().map(LayerSpec::structure).collect(),
        }
    }

    /// Structural and numeric validation: shapes compose, weight arrays have
    /// exactly the advertised dimensions, all values finite.
    pub fn validate(&self) -> Result<()> {
        if self.input_shape.rows == 0 || self.input_shape.cols == 0 {
            return Err(Error::Model {
                layer: 0,
                reason: "empty input shape".into(),
            });
        }
        if self.layers.is_empty() {
            return Err(Error::Model {
                layer: 0,
                reason: "model has no layers".into(),
            });
        }
        if let Some(norm) = &self.normalization {
            let n = self.input_shape.rows * self.input_shape.cols;
            if norm.scale.len() != n || norm.shift.len() != n {
                return Err(Error::Model {
                    layer: 0,
                    reason: format!(
                        "normalization length {}/{} != input size {n}",
                        norm.scale.len(),
                        norm.shift.len()
                    ),
                });
            }
            if norm.scale.iter().chain(&norm.shift).any(|v| !v.is_finite()) {
                return Err(Error::Model {
                    layer: 0,
                    reason: "non-finite normalization entry".into(),
                });
            }
        }
        let structure = self.structure();
        structure.shape_trace()?;

        for (idx, layer) in self.layers.iter().enumerate() {
            match layer {
                LayerSpec::Conv2d { kernel, in_channels, out_channels, weights, bias, .. } => {
                    if weights.len() != *out_channels {
                        return Err(Error::Model {
                            layer: idx,
                            reason: format!(
                                "weights have {} output channels, expected {out_channels}",
                                weights.len()
                            ),
                        });
                    }
                    for oc in weights {
                        if oc.len() != *in_channels
                            || oc.iter().any(|ic| {
                                ic.len() != *kernel || ic.iter().any(|row| row.len() != *kernel)
                            })
                        {
                            return Err(Error::Model {
                                layer: idx,
                                reason: "kernel tensor shape mismatch".into(),
                            });
                        }
                    }
                    if bias.len() != *out_channels {
                        return Err(Error::Model {
                            layer: idx,
                            reason: format!(
                                "bias has {} entries, expected {out_channels}",
                                bias.len()
                            ),
                        });
                    }
                    let flat = weights
                        .iter()
                        .flatten()
                        .flatten()
                        .flatten()
                        .chain(bias.iter());
                    if flat.clone().any(|v| !v.is_finite()) {
                        return Err(Error::Model {
                            layer: idx,
                            reason: "non-finite weight".into(),
                        });
                    }
                }
                LayerSpec::Dense { rows, cols, weights, bias } => {
                    if weights.len() != rows * cols {
                        return Err(Error::Model {
                            layer: idx,
                            reason: format!(
                                "weight matrix has {} entries, expected {}",
                                weights.len(),
                                rows * cols
                            ),
                        });
                    }
                    if bias.len() != *rows {
                        return Err(Error::Model {
                            layer: idx,
                            reason: format!("bias has {} entries, expected {rows}", bias.len()),
                        });
                    }
                    if weights.iter().chain(bias.iter()).any(|v| !v.is_finite()) {
                        return Err(Error::Model {
                            layer: idx,
                            reason: "non-finite weight".into(),
                        });
                    }
                }
                LayerSpec::Activation { coeffs } => {
                    if coeffs.is_empty() || coeffs.len() > 4 {
                        return Err(Error::Model {
                            layer: idx,
                            reason: format!(
                                "activation has {} coefficients, expected 1..=4",
                                coeffs.len()
                            ),
                        });
                    }
                    if coeffs.iter().any(|v| !v.is_finite()) {
                        return Err(Error::Model {
                            layer: idx,
                            reason: "non-finite coefficient".into(),
                        });
                    }
                    let deg = poly_degree(coeffs);
                    if deg == 0 {
                        return Err(Error::Model {
                            layer: idx,
                            reason: "activation degree is zero".into(),
                        });
                    }
                }
            }
        }
        Ok(())
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| match l {
                LayerSpec::Conv2d { kernel, in_channels, out_channels, bias, .. } => {
                    out_channels * in_channels * kernel * kernel + bias.len()
                }
                LayerSpec::Dense { rows, cols, bias, .. } => rows * cols + bias.len(),
                LayerSpec::Activation { .. } => 0,
            })
            .sum()
    }

    /// Applies the per-feature preprocessing to a raw flat input.
    pub fn normalize(&self, raw: &[f64]) -> Result<Vec<f64>> {
        let n = self.input_shape.rows * self.input_shape.cols;
        if raw.len() != n {
            return Err(Error::Model {
                layer: 0,
                reason: format!("input has {} features, expected {n}", raw.len()),
            });
        }
        match &self.normalization {
            None => Ok(raw.to_vec()),
            Some(norm) => Ok(raw
                .iter()
                .enumerate()
                .map(|(i, &x)| (x + norm.shift[i]) * norm.scale[i])
                .collect()),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let spec: ModelSpec = serde_json::from_str(s)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        Ok(std::fs::write(path, self.to_json())?)
    }

    /// Loads and validates; with a depth budget, also checks the model fits.
    pub fn load(path: &std::path::Path, max_depth: Option<usize>) -> Result<Self> {
        let spec = Self::from_json(&std::fs::read_to_string(path)?)?;
        if let Some(budget) = max_depth {
            spec.structure().check_depth(budget)?;
        }
        Ok(spec)
    }
}

/// Reference evaluation on plain (already normalized) inputs. Convolutions
/// run as direct nested loops, deliberately not sharing code with the
/// diagonal-matrix path the encrypted evaluator uses.
pub fn infer_clear(spec: &ModelSpec, input: &[f64]) -> Result<Vec<f64>> {
    let structure = spec.structure();
    let shapes = structure.shape_trace()?;
    if input.len() != shapes[0].len() {
        return Err(Error::Model {
            layer: 0,
            reason: format!(
                "input has {} values, model expects {}",
                input.len(),
                shapes[0].len()
            ),
        });
    }
    let mut cur = input.to_vec();
    for (idx, layer) in spec.layers.iter().enumerate() {
        cur = match layer {
            LayerSpec::Conv2d { kernel, stride, in_channels, out_channels, weights, bias } => {
                let (h, w) = match shapes[idx] {
                    Shape::Spatial { height, width, .. } => (height, width),
                    Shape::Flat { .. } => unreachable!("validated"),
                };
                let oh = (h - kernel) / stride + 1;
                let ow = (w - kernel) / stride + 1;
                let mut out = vec![0.0; out_channels * oh * ow];
                for oc in 0..*out_channels {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let mut acc = bias[oc];
                            for ic in 0..*in_channels {
                                for ky in 0..*kernel {
                                    for kx in 0..*kernel {
                                        let iy = oy * stride + ky;
                                        let ix = ox * stride + kx;
                                        acc += weights[oc][ic][ky][kx]
                                            * cur[ic * h * w + iy * w + ix];
                                    }
                                }
                            }
                            out[oc * oh * ow + oy * ow + ox] = acc;
                        }
                    }
                }
                out
            }
            LayerSpec::Dense { rows, cols, weights, bias } => {
                let mut out = vec![0.0; *rows];
                for r in 0..*rows {
                    let mut acc = bias[r];
                    for c in 0..*cols {
                        acc += weights[r * cols + c] * cur[c];
                    }
                    out[r] = acc;
                }
                out
            }
            LayerSpec::Activation { coeffs } => cur
                .iter()
                .map(|&x| {
                    let mut acc = 0.0;
                    for &c in coeffs.iter().rev() {
                        acc = acc * x + c;
                    }
                    acc
                })
                .collect(),
        };
    }
    Ok(cur)
}
