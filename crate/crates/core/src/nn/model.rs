//! Declarative model specifications, parameter layout and initialization,
//! and the forward pass for the three patch/vector classifiers.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::tape::{sigmoid, ConvGeom, Tape, Tensor, Var};
use super::NnError;
use crate::util::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    Cnn1d,
    Cnn2d,
    Vit,
}

impl Arch {
    pub const ALL: [Arch; 3] = [Arch::Cnn1d, Arch::Cnn2d, Arch::Vit];

    pub fn name(&self) -> &'static str {
        match self {
            Arch::Cnn1d => "cnn1d",
            Arch::Cnn2d => "cnn2d",
            Arch::Vit => "vit",
        }
    }

    /// Whether the model consumes a spatial window rather than a single cell.
    pub fn uses_patches(&self) -> bool {
        !matches!(self, Arch::Cnn1d)
    }
}

impl std::fmt::Display for Arch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    None,
    Relu,
    Gelu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    Same,
    Valid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Layer {
    /// Convolution along the sequence axis of an `(len, 1, ch)` activation.
    Conv1d {
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        padding: Padding,
        activation: Activation,
    },
    Conv2d {
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        padding: Padding,
        activation: Activation,
    },
    MaxPool2d {
        size: usize,
    },
    GlobalAvgPool,
    /// Affine map of the channel axis, applied to every position.
    Dense {
        inputs: usize,
        outputs: usize,
        activation: Activation,
    },
    /// Flattens positions into a token sequence and adds a learned embedding per token.
    PositionalEmbedding {
        tokens: usize,
        dim: usize,
    },
    /// Prepends a learned classification token.
    ClassToken {
        dim: usize,
    },
    LayerNorm {
        dim: usize,
    },
    MultiHeadAttention {
        dim: usize,
        heads: usize,
    },
    /// Pre-norm transformer block: x + MHA(LN(x)), then x + FFN(LN(x)).
    EncoderBlock {
        dim: usize,
        heads: usize,
        ffn_dim: usize,
    },
    /// Keeps only the first token.
    TakeClassToken,
}

/// Activation shape: an `h x w` grid of `c`-channel positions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shape {
    pub h: usize,
    pub w: usize,
    pub c: usize,
}

impl Shape {
    pub fn rows(&self) -> usize {
        self.h * self.w
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({}, {}, {})", self.h, self.w, self.c)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    HeUniform { fan_in: usize },
    GlorotUniform { fan_in: usize, fan_out: usize },
    Normal { std: f64 },
    Zeros,
    Ones,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParamSpec {
    pub rows: usize,
    pub cols: usize,
    pub init: Init,
}

impl ParamSpec {
    fn len(&self) -> usize {
        self.rows * self.cols
    }
}

fn weight_init(fan_in: usize, fan_out: usize, act: Activation) -> Init {
    match act {
        Activation::Relu => Init::HeUniform { fan_in },
        _ => Init::GlorotUniform { fan_in, fan_out },
    }
}

fn p(rows: usize, cols: usize, init: Init) -> ParamSpec {
    ParamSpec { rows, cols, init }
}

impl Layer {
    /// Parameter tensors in declaration order.
    pub fn params(&self) -> Vec<ParamSpec> {
        match *self {
            Layer::Conv1d {
                in_ch,
                out_ch,
                kernel,
                activation,
                ..
            } => vec![
                p(
                    kernel * in_ch,
                    out_ch,
                    weight_init(kernel * in_ch, kernel * out_ch, activation),
                ),
                p(1, out_ch, Init::Zeros),
            ],
            Layer::Conv2d {
                in_ch,
                out_ch,
                kernel,
                activation,
                ..
            } => {
                let k2 = kernel * kernel;
                vec![
                    p(k2 * in_ch, out_ch, weight_init(k2 * in_ch, k2 * out_ch, activation)),
                    p(1, out_ch, Init::Zeros),
                ]
            }
            Layer::Dense {
                inputs,
                outputs,
                activation,
            } => vec![
                p(inputs, outputs, weight_init(inputs, outputs, activation)),
                p(1, outputs, Init::Zeros),
            ],
            Layer::PositionalEmbedding { tokens, dim } => {
                vec![p(tokens, dim, Init::Normal { std: 0.02 })]
            }
            Layer::ClassToken { dim } => vec![p(1, dim, Init::Normal { std: 0.02 })],
            Layer::LayerNorm { dim } => vec![p(1, dim, Init::Ones), p(1, dim, Init::Zeros)],
            Layer::MultiHeadAttention { dim, .. } => attention_params(dim),
            Layer::EncoderBlock { dim, ffn_dim, .. } => {
                let mut v = vec![p(1, dim, Init::Ones), p(1, dim, Init::Zeros)];
                v.extend(attention_params(dim));
                v.extend([p(1, dim, Init::Ones), p(1, dim, Init::Zeros)]);
                v.extend([
                    p(
                        dim,
                        ffn_dim,
                        Init::GlorotUniform {
                            fan_in: dim,
                            fan_out: ffn_dim,
                        },
                    ),
                    p(1, ffn_dim, Init::Zeros),
                    p(
                        ffn_dim,
                        dim,
                        Init::GlorotUniform {
                            fan_in: ffn_dim,
                            fan_out: dim,
                        },
                    ),
                    p(1, dim, Init::Zeros),
                ]);
                v
            }
            Layer::MaxPool2d { .. } | Layer::GlobalAvgPool | Layer::TakeClassToken => vec![],
        }
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(ParamSpec::len).sum()
    }

    /// Output shape for a given input shape, or a description of the mismatch.
    pub fn output_shape(&self, s: Shape) -> Result<Shape, String> {
        let need_ch = |c: usize| {
            if s.c == c {
                Ok(())
            } else {
                Err(format!("expects {c} channels, got {}", s.c))
            }
        };
        match *self {
            Layer::Conv1d {
                in_ch,
                out_ch,
                kernel,
                padding,
                ..
            } => {
                need_ch(in_ch)?;
                if s.w != 1 {
                    return Err(format!("expects a sequence (w = 1), got {s}"));
                }
                let len = conv_out(s.h, kernel, padding)?;
                Ok(Shape { h: len, w: 1, c: out_ch })
            }
            Layer::Conv2d {
                in_ch,
                out_ch,
                kernel,
                padding,
                ..
            } => {
                need_ch(in_ch)?;
                Ok(Shape {
                    h: conv_out(s.h, kernel, padding)?,
                    w: conv_out(s.w, kernel, padding)?,
                    c: out_ch,
                })
            }
            Layer::MaxPool2d { size } => {
                if s.h < size || s.w < size {
                    return Err(format!("pool {size} larger than input {s}"));
                }
                Ok(Shape {
                    h: s.h / size,
                    w: s.w / size,
                    c: s.c,
                })
            }
            Layer::GlobalAvgPool => Ok(Shape { h: 1, w: 1, c: s.c }),
            Layer::Dense { inputs, outputs, .. } => {
                need_ch(inputs)?;
                Ok(Shape { c: outputs, ..s })
            }
            Layer::PositionalEmbedding { tokens, dim } => {
                need_ch(dim)?;
                if s.rows() != tokens {
                    return Err(format!("expects {tokens} tokens, got {}", s.rows()));
                }
                Ok(Shape { h: tokens, w: 1, c: dim })
            }
            Layer::ClassToken { dim } => {
                need_ch(dim)?;
                Ok(Shape {
                    h: s.rows() + 1,
                    w: 1,
                    c: dim,
                })
            }
            Layer::LayerNorm { dim } => {
                need_ch(dim)?;
                Ok(s)
            }
            Layer::MultiHeadAttention { dim, heads } | Layer::EncoderBlock { dim, heads, .. } => {
                need_ch(dim)?;
                if heads == 0 || dim % heads != 0 {
                    return Err(format!("{heads} heads do not divide dim {dim}"));
                }
                Ok(Shape { h: s.rows(), w: 1, c: dim })
            }
            Layer::TakeClassToken => Ok(Shape { h: 1, w: 1, c: s.c }),
        }
    }
}

fn attention_params(dim: usize) -> Vec<ParamSpec> {
    vec![
        p(
            dim,
            3 * dim,
            Init::GlorotUniform {
                fan_in: dim,
                fan_out: dim,
            },
        ),
        p(1, 3 * dim, Init::Zeros),
        p(
            dim,
            dim,
            Init::GlorotUniform {
                fan_in: dim,
                fan_out: dim,
            },
        ),
        p(1, dim, Init::Zeros),
    ]
}

fn conv_out(n: usize, kernel: usize, padding: Padding) -> Result<usize, String> {
    match padding {
        Padding::Same => {
            if kernel % 2 == 0 {
                Err(format!("same padding needs an odd kernel, got {kernel}"))
            } else {
                Ok(n)
            }
        }
        Padding::Valid => {
            if n < kernel {
                Err(format!("kernel {kernel} larger than input {n}"))
            } else {
                Ok(n + 1 - kernel)
            }
        }
    }
}

/// Declarative architecture: input shape (`[p]` or `[h, w, p]`), layers, init seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub arch: Arch,
    pub input_shape: Vec<usize>,
    pub layers: Vec<Layer>,
    pub seed: u64,
}

impl ModelSpec {
    pub fn input_activation_shape(&self) -> Result<Shape, NnError> {
        match self.input_shape.as_slice() {
            &[p] if p > 0 => Ok(Shape { h: p, w: 1, c: 1 }),
            &[h, w, p] if h > 0 && w > 0 && p > 0 => Ok(Shape { h, w, c: p }),
            other => Err(NnError::Spec(format!("unsupported input shape {other:?}"))),
        }
    }

    /// Checks that layer shapes compose and end in a single logit.
    pub fn validate(&self) -> Result<Shape, NnError> {
        let mut s = self.input_activation_shape()?;
        for (i, layer) in self.layers.iter().enumerate() {
            s = layer
                .output_shape(s)
                .map_err(|e| NnError::Spec(format!("layer {i} ({layer:?}): {e}")))?;
        }
        if s != (Shape { h: 1, w: 1, c: 1 }) {
            return Err(NnError::Spec(format!("final output must be one logit, got {s}")));
        }
        Ok(s)
    }

    /// Activation shapes after each layer.
    pub fn shapes(&self) -> Result<Vec<Shape>, NnError> {
        let mut s = self.input_activation_shape()?;
        let mut out = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            s = layer.output_shape(s).map_err(NnError::Spec)?;
            out.push(s);
        }
        Ok(out)
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    /// Seeded initial weights, rounded to single precision.
    pub fn init_weights(&self) -> Vec<f64> {
        let mut rng = rng(self.seed);
        let mut w = Vec::with_capacity(self.param_count());
        for layer in &self.layers {
            for ps in layer.params() {
                for _ in 0..ps.len() {
                    let v = match ps.init {
                        Init::HeUniform { fan_in } => {
                            let lim = (6.0 / fan_in as f64).sqrt();
                            rng.random_range(-lim..lim)
                        }
                        Init::GlorotUniform { fan_in, fan_out } => {
                            let lim = (6.0 / (fan_in + fan_out) as f64).sqrt();
                            rng.random_range(-lim..lim)
                        }
                        Init::Normal { std } => Normal::new(0.0, std).unwrap().sample(&mut rng),
                        Init::Zeros => 0.0,
                        Init::Ones => 1.0,
                    };
                    w.push(v as f32 as f64);
                }
            }
        }
        w
    }

    pub fn check_input(&self, input: &Tensor) -> Result<(), NnError> {
        if input.shape != self.input_shape {
            return Err(NnError::ShapeMismatch {
                expected: self.input_shape.clone(),
                actual: input.shape.clone(),
            });
        }
        Ok(())
    }
}

/// Default CNN1D over a length-`p` feature sequence.
pub fn build_cnn1d(p: usize, seed: u64) -> ModelSpec {
    ModelSpec {
        arch: Arch::Cnn1d,
        input_shape: vec![p],
        layers: vec![
            Layer::Conv1d {
                in_ch: 1,
                out_ch: 32,
                kernel: 3,
                padding: Padding::Same,
                activation: Activation::Relu,
            },
            Layer::Conv1d {
                in_ch: 32,
                out_ch: 64,
                kernel: 3,
                padding: Padding::Same,
                activation: Activation::Relu,
            },
            Layer::GlobalAvgPool,
            Layer::Dense {
                inputs: 64,
                outputs: 64,
                activation: Activation::Relu,
            },
            Layer::Dense {
                inputs: 64,
                outputs: 1,
                activation: Activation::None,
            },
        ],
        seed,
    }
}

/// Default CNN2D over an `h x w x p` window.
pub fn build_cnn2d(h: usize, w: usize, p: usize, seed: u64) -> Result<ModelSpec, NnError> {
    if h < 3 || w < 3 {
        return Err(NnError::Spec(format!("CNN2D needs a window of at least 3x3, got {h}x{w}")));
    }
    let conv = |in_ch, out_ch| Layer::Conv2d {
        in_ch,
        out_ch,
        kernel: 3,
        padding: Padding::Same,
        activation: Activation::Relu,
    };
    Ok(ModelSpec {
        arch: Arch::Cnn2d,
        input_shape: vec![h, w, p],
        layers: vec![
            conv(p, 32),
            conv(32, 64),
            Layer::MaxPool2d { size: 2 },
            conv(64, 64),
            Layer::GlobalAvgPool,
            Layer::Dense {
                inputs: 64,
                outputs: 64,
                activation: Activation::Relu,
            },
            Layer::Dense {
                inputs: 64,
                outputs: 1,
                activation: Activation::None,
            },
        ],
        seed,
    })
}

pub const VIT_DIM: usize = 64;
pub const VIT_HEADS: usize = 4;
pub const VIT_FFN: usize = 128;
pub const VIT_BLOCKS: usize = 2;

/// Default pixel-token ViT over an `h x w x p` window.
pub fn build_vit(h: usize, w: usize, p: usize, seed: u64) -> ModelSpec {
    let mut layers = vec![
        Layer::Dense {
            inputs: p,
            outputs: VIT_DIM,
            activation: Activation::None,
        },
        Layer::PositionalEmbedding {
            tokens: h * w,
            dim: VIT_DIM,
        },
        Layer::ClassToken { dim: VIT_DIM },
    ];
    layers.extend((0..VIT_BLOCKS).map(|_| Layer::EncoderBlock {
        dim: VIT_DIM,
        heads: VIT_HEADS,
        ffn_dim: VIT_FFN,
    }));
    layers.extend([
        Layer::TakeClassToken,
        Layer::Dense {
            inputs: VIT_DIM,
            outputs: 1,
            activation: Activation::None,
        },
    ]);
    ModelSpec {
        arch: Arch::Vit,
        input_shape: vec![h, w, p],
        layers,
        seed,
    }
}

// ---------------------------------------------------------------------------
// forward pass

struct ParamCursor<'a> {
    weights: &'a [f64],
    offset: usize,
}

impl ParamCursor<'_> {
    fn take(&mut self, tape: &mut Tape, rows: usize, cols: usize) -> Var {
        let v = tape.param(self.weights, self.offset, rows, cols);
        self.offset += rows * cols;
        v
    }
}

fn activate(tape: &mut Tape, x: Var, act: Activation) -> Var {
    match act {
        Activation::None => x,
        Activation::Relu => tape.relu(x),
        Activation::Gelu => tape.gelu(x),
    }
}

fn attention(tape: &mut Tape, x: Var, dim: usize, heads: usize, cur: &mut ParamCursor) -> Var {
    let wqkv = cur.take(tape, dim, 3 * dim);
    let bqkv = cur.take(tape, 1, 3 * dim);
    let wo = cur.take(tape, dim, dim);
    let bo = cur.take(tape, 1, dim);
    let qkv = tape.matmul(x, wqkv);
    let qkv = tape.add_bias(qkv, bqkv);
    let dh = dim / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let outs: Vec<Var> = (0..heads)
        .map(|h| {
            let q = tape.slice_cols(qkv, h * dh, dh);
            let k = tape.slice_cols(qkv, dim + h * dh, dh);
            let v = tape.slice_cols(qkv, 2 * dim + h * dh, dh);
            let s = tape.matmul_t(q, k);
            let s = tape.scale(s, scale);
            let a = tape.softmax_rows(s);
            tape.matmul(a, v)
        })
        .collect();
    let o = tape.concat_cols(&outs);
    let o = tape.matmul(o, wo);
    tape.add_bias(o, bo)
}

fn layer_norm(tape: &mut Tape, x: Var, dim: usize, cur: &mut ParamCursor) -> Var {
    let g = cur.take(tape, 1, dim);
    let b = cur.take(tape, 1, dim);
    tape.layer_norm(x, g, b)
}

/// Records the forward pass on `tape` and returns the `[1, 1]` logit node.
/// Also returns the input leaf so callers can read input adjoints.
pub fn forward_on_tape(
    spec: &ModelSpec,
    weights: &[f64],
    input: &Tensor,
    tape: &mut Tape,
) -> Result<(Var, Var), NnError> {
    spec.check_input(input)?;
    if weights.len() != spec.param_count() {
        return Err(NnError::WeightCount {
            expected: spec.param_count(),
            actual: weights.len(),
        });
    }
    let mut s = spec.input_activation_shape()?;
    let x_in = tape.input(s.rows(), s.c, input.data.clone());
    let mut x = x_in;
    let mut cur = ParamCursor { weights, offset: 0 };
    for layer in &spec.layers {
        let out = layer.output_shape(s).map_err(NnError::Spec)?;
        x = match *layer {
            Layer::Conv1d {
                in_ch,
                out_ch,
                kernel,
                padding,
                activation,
            } => {
                let pad = if padding == Padding::Same { kernel / 2 } else { 0 };
                let geom = ConvGeom {
                    h: s.h,
                    w: 1,
                    c: in_ch,
                    kh: kernel,
                    kw: 1,
                    pad_h: pad,
                    pad_w: 0,
                };
                let w = cur.take(tape, kernel * in_ch, out_ch);
                let b = cur.take(tape, 1, out_ch);
                let cols = tape.im2col(x, geom);
                let y = tape.matmul(cols, w);
                let y = tape.add_bias(y, b);
                activate(tape, y, activation)
            }
            Layer::Conv2d {
                in_ch,
                out_ch,
                kernel,
                padding,
                activation,
            } => {
                let pad = if padding == Padding::Same { kernel / 2 } else { 0 };
                let geom = ConvGeom {
                    h: s.h,
                    w: s.w,
                    c: in_ch,
                    kh: kernel,
                    kw: kernel,
                    pad_h: pad,
                    pad_w: pad,
                };
                let w = cur.take(tape, kernel * kernel * in_ch, out_ch);
                let b = cur.take(tape, 1, out_ch);
                let cols = tape.im2col(x, geom);
                let y = tape.matmul(cols, w);
                let y = tape.add_bias(y, b);
                activate(tape, y, activation)
            }
            Layer::MaxPool2d { size } => tape.max_pool(x, s.h, s.w, size),
            Layer::GlobalAvgPool => tape.mean_rows(x),
            Layer::Dense {
                inputs,
                outputs,
                activation,
            } => {
                let w = cur.take(tape, inputs, outputs);
                let b = cur.take(tape, 1, outputs);
                let y = tape.matmul(x, w);
                let y = tape.add_bias(y, b);
                activate(tape, y, activation)
            }
            Layer::PositionalEmbedding { tokens, dim } => {
                let pe = cur.take(tape, tokens, dim);
                tape.add(x, pe)
            }
            Layer::ClassToken { dim } => {
                let cls = cur.take(tape, 1, dim);
                tape.concat_rows(cls, x)
            }
            Layer::LayerNorm { dim } => layer_norm(tape, x, dim, &mut cur),
            Layer::MultiHeadAttention { dim, heads } => attention(tape, x, dim, heads, &mut cur),
            Layer::EncoderBlock {
                dim,
                heads,
                ffn_dim,
            } => {
                let h = layer_norm(tape, x, dim, &mut cur);
                let a = attention(tape, h, dim, heads, &mut cur);
                let x1 = tape.add(x, a);
                let h2 = layer_norm(tape, x1, dim, &mut cur);
                let w1 = cur.take(tape, dim, ffn_dim);
                let b1 = cur.take(tape, 1, ffn_dim);
                let w2 = cur.take(tape, ffn_dim, dim);
                let b2 = cur.take(tape, 1, dim);
                let f = tape.matmul(h2, w1);
                let f = tape.add_bias(f, b1);
                let f = tape.gelu(f);
                let f = tape.matmul(f, w2);
                let f = tape.add_bias(f, b2);
                tape.add(x1, f)
            }
            Layer::TakeClassToken => tape.row(x, 0),
        };
        s = out;
    }
    Ok((x, x_in))
}

pub fn logit(spec: &ModelSpec, weights: &[f64], input: &Tensor) -> Result<f64, NnError> {
    let mut tape = Tape::new();
    let (z, _) = forward_on_tape(spec, weights, input, &mut tape)?;
    Ok(tape.value(z)[0])
}

/// Probability of the positive class.
pub fn forward(spec: &ModelSpec, weights: &[f64], input: &Tensor) -> Result<f64, NnError> {
    logit(spec, weights, input).map(sigmoid)
}

/// Binary cross-entropy loss and its gradient with respect to every weight.
pub fn backward(
    spec: &ModelSpec,
    weights: &[f64],
    input: &Tensor,
    label: u8,
) -> Result<(f64, Vec<f64>), NnError> {
    let mut grad = vec![0.0; weights.len()];
    let loss = accumulate_gradient(spec, weights, input, label, 1.0, &mut grad)?;
    Ok((loss, grad))
}

/// Adds `scale * dLoss/dw` into `grad` and returns the unscaled loss.
pub fn accumulate_gradient(
    spec: &ModelSpec,
    weights: &[f64],
    input: &Tensor,
    label: u8,
    scale: f64,
    grad: &mut [f64],
) -> Result<f64, NnError> {
    let mut tape = Tape::new();
    let (z, _) = forward_on_tape(spec, weights, input, &mut tape)?;
    let l = tape.bce_with_logits(z, label as f64);
    let loss = tape.value(l)[0];
    if !loss.is_finite() {
        return Err(NnError::NonFiniteLoss);
    }
    let grads = tape.backward(l, scale);
    tape.accumulate_param_grads(&grads, grad);
    Ok(loss)
}
