//! Per-frame MLP, sinusoidal positional encoding, stacked self/cross linear
//! attention shared by both sequences, and the projection head.
//!
//! Row convention: a sequence is an `M x d` matrix and linear maps multiply on
//! the right (`x · W + b`). One attention layer updates both sequences:
//!
//! ```text
//! a ← a + SelfAttn(a, a)          b ← b + SelfAttn(b, b)
//! a ← a + CrossAttn(a, b)         b ← b + CrossAttn(b, a)   (simultaneous)
//! ```
//!
//! The outputs are the embeddings `U`; `Z = ReLU(U · W¹ + b¹) · W² + b²`.

mod attention;
mod checkpoint;

pub use attention::{linear_attention, linear_attention_tape};
pub use checkpoint::{Checkpoint, CHECKPOINT_FORMAT_VERSION};

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numeric::{substream, Matrix, NumericError, Tape, Var};
use crate::skeleton::SkeletonSequence;

pub const POSITIONAL_BASE: f64 = 5000.0;
pub const DEFAULT_ATTENTION_LAYERS: usize = 4;
pub const DEFAULT_TEMPERATURE: f64 = 0.1;

#[derive(Debug, Error)]
pub enum EncoderError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("input width {found} does not match model input_dim {expected}")]
    InputDim { expected: usize, found: usize },
    #[error("parameter {name}: {reason}")]
    BadParameter { name: String, reason: String },
    #[error("time step {t} out of range for {len} frames")]
    IndexOutOfRange { t: usize, len: usize },
    #[error("empty sequence")]
    EmptySequence,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Numeric(#[from] NumericError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Per-frame feature width `d = 3·J`; also the embedding width.
    pub input_dim: usize,
    pub num_attention_layers: usize,
    pub num_heads: usize,
    /// Temperature of the matching softmax the model is trained with.
    pub temperature: f64,
    pub projection_hidden_dim: usize,
    pub positional_base: f64,
}

impl ModelConfig {
    /// Defaults for a `J`-joint skeleton: `d = 3J`, one 3-wide head per joint.
    pub fn for_joints(joint_count: usize) -> Self {
        let d = 3 * joint_count;
        Self {
            input_dim: d,
            num_attention_layers: DEFAULT_ATTENTION_LAYERS,
            num_heads: joint_count.max(1),
            temperature: DEFAULT_TEMPERATURE,
            projection_hidden_dim: d,
            positional_base: POSITIONAL_BASE,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.input_dim / self.num_heads
    }

    pub fn validate(&self) -> Result<(), EncoderError> {
        let bad = |s: &str| Err(EncoderError::InvalidConfig(s.to_string()));
        if self.input_dim == 0 {
            return bad("input_dim must be positive");
        }
        if self.num_heads == 0 || self.input_dim % self.num_heads != 0 {
            return bad("num_heads must divide input_dim");
        }
        if self.num_attention_layers == 0 {
            return bad("num_attention_layers must be at least 1");
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return bad("temperature must be positive");
        }
        if self.projection_hidden_dim == 0 {
            return bad("projection_hidden_dim must be positive");
        }
        if self.positional_base != POSITIONAL_BASE {
            return bad("positional_base is fixed at 5000");
        }
        Ok(())
    }

    /// Every trainable tensor with its shape, in a fixed order.
    pub fn parameter_shapes(&self) -> Vec<(String, (usize, usize))> {
        let d = self.input_dim;
        let h = self.projection_hidden_dim;
        let mut out = vec![
            ("mlp.w1".to_string(), (d, d)),
            ("mlp.b1".to_string(), (1, d)),
            ("mlp.w2".to_string(), (d, d)),
            ("mlp.b2".to_string(), (1, d)),
        ];
        for l in 0..self.num_attention_layers {
            for kind in ["self", "cross"] {
                for m in ["q", "k", "v", "o"] {
                    out.push((format!("attn.{l}.{kind}.w{m}"), (d, d)));
                    out.push((format!("attn.{l}.{kind}.b{m}"), (1, d)));
                }
            }
        }
        out.extend([
            ("head.w1".to_string(), (d, h)),
            ("head.b1".to_string(), (1, h)),
            ("head.w2".to_string(), (h, d)),
            ("head.b2".to_string(), (1, d)),
        ]);
        out
    }
}

/// Named trainable tensors of the encoder and projection head.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ModelParams {
    tensors: BTreeMap<String, Matrix>,
}

impl ModelParams {
    /// Uniform `[−1/√fan_in, 1/√fan_in]` for every weight and bias, where
    /// `fan_in` is the input width of the linear map.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self, EncoderError> {
        cfg.validate()?;
        let mut rng = substream(seed, &[0x1217]);
        let mut tensors = BTreeMap::new();
        let mut fan_in = cfg.input_dim;
        for (name, (r, c)) in cfg.parameter_shapes() {
            if !name.contains(".b") {
                fan_in = r;
            }
            let bound = 1.0 / (fan_in as f64).sqrt();
            let m = Matrix::from_fn(r, c, |_, _| rng.random_range(-bound..=bound));
            tensors.insert(name, m);
        }
        Ok(Self { tensors })
    }

    pub fn from_tensors(tensors: BTreeMap<String, Matrix>, cfg: &ModelConfig) -> Result<Self, EncoderError> {
        let p = Self { tensors };
        p.check(cfg)?;
        Ok(p)
    }

    /// Verifies names, shapes and finiteness against `cfg`.
    pub fn check(&self, cfg: &ModelConfig) -> Result<(), EncoderError> {
        cfg.validate()?;
        let shapes = cfg.parameter_shapes();
        for (name, shape) in &shapes {
            let m = self.tensors.get(name).ok_or_else(|| EncoderError::BadParameter {
                name: name.clone(),
                reason: "missing".into(),
            })?;
            if m.shape() != *shape || m.data().len() != shape.0 * shape.1 {
                return Err(EncoderError::BadParameter {
                    name: name.clone(),
                    reason: format!("expected shape {shape:?}, found {:?}", m.shape()),
                });
            }
            if !m.is_finite() {
                return Err(EncoderError::BadParameter { name: name.clone(), reason: "non-finite entry".into() });
            }
        }
        if self.tensors.len() != shapes.len() {
            let extra = self.tensors.keys().find(|k| !shapes.iter().any(|(n, _)| n == *k)).cloned();
            return Err(EncoderError::BadParameter {
                name: extra.unwrap_or_default(),
                reason: "unexpected parameter".into(),
            });
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Matrix> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Matrix> {
        self.tensors.get_mut(name)
    }

    /// Tensors in name order.
    pub fn iter(&self) -> impl Iterator<Item = (&String, &Matrix)> {
        self.tensors.iter()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        self.tensors.values_mut().collect()
    }

    pub fn shapes(&self) -> Vec<(usize, usize)> {
        self.tensors.values().map(Matrix::shape).collect()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors.values().map(|m| m.data().len()).sum()
    }

    pub fn into_tensors(self) -> BTreeMap<String, Matrix> {
        self.tensors
    }

    /// Puts every tensor on `tape` (trainable or constant), in name order.
    pub fn register(&self, tape: &mut Tape, trainable: bool) -> NetVars {
        let vars: Vec<Var> = self
            .tensors
            .values()
            .map(|m| if trainable { tape.param(m.clone()) } else { tape.constant(m.clone()) })
            .collect();
        self.bind(&vars)
    }

    /// Groups tape handles given in name order (as from [`ModelParams::iter`]).
    ///
    /// # Panics
    /// If `vars` does not have one handle per tensor.
    pub fn bind(&self, vars: &[Var]) -> NetVars {
        assert_eq!(vars.len(), self.tensors.len(), "one tape variable per tensor");
        let named: BTreeMap<&str, Var> = self.tensors.keys().map(String::as_str).zip(vars.iter().copied()).collect();
        let v = |n: String| named[n.as_str()];
        let linear = |p: &str, s: &str| Linear { w: v(format!("{p}.w{s}")), b: v(format!("{p}.b{s}")) };
        let attn = |p: String| Attention {
            q: linear(&p, "q"),
            k: linear(&p, "k"),
            v: linear(&p, "v"),
            o: linear(&p, "o"),
        };
        let layers = (0..)
            .take_while(|l| named.contains_key(format!("attn.{l}.self.wq").as_str()))
            .map(|l| (attn(format!("attn.{l}.self")), attn(format!("attn.{l}.cross"))))
            .collect();
        NetVars {
            mlp: [linear("mlp", "1"), linear("mlp", "2")],
            layers,
            head: [linear("head", "1"), linear("head", "2")],
            ordered: vars.to_vec(),
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct Linear {
    w: Var,
    b: Var,
}

impl Linear {
    fn apply(&self, tape: &mut Tape, x: Var) -> Result<Var, NumericError> {
        let xw = tape.matmul(x, self.w)?;
        tape.add_row_broadcast(xw, self.b)
    }
}

#[derive(Clone, Copy, Debug)]
struct Attention {
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
}

impl Attention {
    fn apply(&self, tape: &mut Tape, x_q: Var, x_kv: Var, heads: usize) -> Result<Var, NumericError> {
        let q = self.q.apply(tape, x_q)?;
        let k = self.k.apply(tape, x_kv)?;
        let v = self.v.apply(tape, x_kv)?;
        let att = linear_attention_tape(tape, q, k, v, heads)?;
        self.o.apply(tape, att)
    }
}

/// Tape handles of every model tensor, grouped by layer.
#[derive(Clone, Debug)]
pub struct NetVars {
    mlp: [Linear; 2],
    layers: Vec<(Attention, Attention)>,
    head: [Linear; 2],
    ordered: Vec<Var>,
}

impl NetVars {
    /// Handles in the same (name) order as [`ModelParams::iter`].
    pub fn ordered(&self) -> &[Var] {
        &self.ordered
    }
}

/// Tape handles of the embeddings of one sequence.
#[derive(Clone, Copy, Debug)]
pub struct EmbeddingVars {
    pub u: Var,
    pub z: Var,
}

/// Per-frame embeddings: `u` before and `z` after the projection head.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingSequence {
    pub u: Matrix,
    pub z: Matrix,
}

impl EmbeddingSequence {
    pub fn len(&self) -> usize {
        self.u.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.u.rows() == 0
    }

    fn read(tape: &Tape, v: EmbeddingVars) -> Self {
        Self { u: tape.value(v.u).clone(), z: tape.value(v.z).clone() }
    }
}

/// `PE[i][2l] = sin(w_l·i)`, `PE[i][2l+1] = cos(w_l·i)`, `w_l = 5000^(−2l/d)`.
///
/// For odd `d` the encoding is computed at width `d + 1` and the last column
/// dropped.
pub fn positional_encoding(m: usize, d: usize) -> Matrix {
    let width = d + d % 2;
    Matrix::from_fn(m, d, |i, c| {
        let l = c / 2;
        let w = POSITIONAL_BASE.powf(-(2.0 * l as f64) / width as f64);
        let x = w * i as f64;
        if c % 2 == 0 {
            x.sin()
        } else {
            x.cos()
        }
    })
}

fn embed_input(tape: &mut Tape, net: &NetVars, x: &Matrix) -> Result<Var, NumericError> {
    let xv = tape.constant(x.clone());
    let h = net.mlp[0].apply(tape, xv)?;
    let h = tape.relu(h);
    let h = net.mlp[1].apply(tape, h)?;
    let pe = tape.constant(positional_encoding(x.rows(), x.cols()));
    tape.add(h, pe)
}

fn project(tape: &mut Tape, net: &NetVars, u: Var) -> Result<Var, NumericError> {
    let h = net.head[0].apply(tape, u)?;
    let h = tape.relu(h);
    net.head[1].apply(tape, h)
}

fn check_input(cfg: &ModelConfig, x: &Matrix) -> Result<(), EncoderError> {
    if x.cols() != cfg.input_dim {
        return Err(EncoderError::InputDim { expected: cfg.input_dim, found: x.cols() });
    }
    if x.rows() == 0 {
        return Err(EncoderError::EmptySequence);
    }
    Ok(())
}

/// Records the paired forward pass of two flattened sequences on `tape`.
pub fn forward_pair(
    tape: &mut Tape,
    net: &NetVars,
    cfg: &ModelConfig,
    xa: &Matrix,
    xb: &Matrix,
) -> Result<(EmbeddingVars, EmbeddingVars), EncoderError> {
    check_input(cfg, xa)?;
    check_input(cfg, xb)?;
    let heads = cfg.num_heads;
    let mut a = embed_input(tape, net, xa)?;
    let mut b = embed_input(tape, net, xb)?;
    for (self_attn, cross_attn) in &net.layers {
        let da = self_attn.apply(tape, a, a, heads)?;
        a = tape.add(a, da)?;
        let db = self_attn.apply(tape, b, b, heads)?;
        b = tape.add(b, db)?;
        let ca = cross_attn.apply(tape, a, b, heads)?;
        let cb = cross_attn.apply(tape, b, a, heads)?;
        a = tape.add(a, ca)?;
        b = tape.add(b, cb)?;
    }
    let za = project(tape, net, a)?;
    let zb = project(tape, net, b)?;
    Ok((EmbeddingVars { u: a, z: za }, EmbeddingVars { u: b, z: zb }))
}

/// Forward pass of one sequence paired with itself. Produces exactly the
/// first output of [`forward_pair`]`(x, x)` while evaluating one stream.
pub fn forward_single(tape: &mut Tape, net: &NetVars, cfg: &ModelConfig, x: &Matrix) -> Result<EmbeddingVars, EncoderError> {
    check_input(cfg, x)?;
    let heads = cfg.num_heads;
    let mut a = embed_input(tape, net, x)?;
    for (self_attn, cross_attn) in &net.layers {
        let da = self_attn.apply(tape, a, a, heads)?;
        a = tape.add(a, da)?;
        let ca = cross_attn.apply(tape, a, a, heads)?;
        a = tape.add(a, ca)?;
    }
    let z = project(tape, net, a)?;
    Ok(EmbeddingVars { u: a, z })
}

fn inference_tape(params: &ModelParams, cfg: &ModelConfig) -> Result<(Tape, NetVars), EncoderError> {
    params.check(cfg)?;
    let mut tape = Tape::new();
    let net = params.register(&mut tape, false);
    Ok((tape, net))
}

/// Embeddings of two flattened (`M x d`, `N x d`) sequences.
pub fn encode_pair_matrices(
    xa: &Matrix,
    xb: &Matrix,
    params: &ModelParams,
    cfg: &ModelConfig,
) -> Result<(EmbeddingSequence, EmbeddingSequence), EncoderError> {
    let (mut tape, net) = inference_tape(params, cfg)?;
    let (a, b) = forward_pair(&mut tape, &net, cfg, xa, xb)?;
    Ok((EmbeddingSequence::read(&tape, a), EmbeddingSequence::read(&tape, b)))
}

pub fn encode_single_matrix(x: &Matrix, params: &ModelParams, cfg: &ModelConfig) -> Result<EmbeddingSequence, EncoderError> {
    let (mut tape, net) = inference_tape(params, cfg)?;
    let a = forward_single(&mut tape, &net, cfg, x)?;
    Ok(EmbeddingSequence::read(&tape, a))
}

/// Embeddings of two normalized sequences.
pub fn encode_pair(
    a: &SkeletonSequence,
    b: &SkeletonSequence,
    params: &ModelParams,
    cfg: &ModelConfig,
) -> Result<(EmbeddingSequence, EmbeddingSequence), EncoderError> {
    encode_pair_matrices(&a.to_matrix(), &b.to_matrix(), params, cfg)
}

/// Inference-time embedding of one sequence (cross-attention attends to itself).
pub fn encode_single(a: &SkeletonSequence, params: &ModelParams, cfg: &ModelConfig) -> Result<EmbeddingSequence, EncoderError> {
    encode_single_matrix(&a.to_matrix(), params, cfg)
}

/// [`encode_pair`] on the prefix `A[0..=t]` and the full `B`.
pub fn encode_causal(
    a: &SkeletonSequence,
    b: &SkeletonSequence,
    params: &ModelParams,
    cfg: &ModelConfig,
    t: usize,
) -> Result<(EmbeddingSequence, EmbeddingSequence), EncoderError> {
    if t >= a.len() {
        return Err(EncoderError::IndexOutOfRange { t, len: a.len() });
    }
    encode_pair(&a.prefix(t + 1), b, params, cfg)
}
