//! The detector network.
//!
//! Each of the three similarity matrices is read as a sequence of `T` tokens
//! (token `i` is row `i`, i.e. frame `i`'s similarity to every frame). A
//! learned linear map lifts the `T`-wide tokens to `d_model`, then a
//! dedicated post-norm Transformer encoder processes each branch:
//!
//! ```text
//! x = LN(x + MHA(x, x, x))
//! x = LN(x + W2 relu(W1 x))
//! ```
//!
//! Fusion runs three cross-attention blocks, each `LN(q + MHA(q, kv, kv))`:
//!
//! | block  | query | keys / values          |
//! |--------|-------|------------------------|
//! | `t->v` | `H_v` | `H_t`                  |
//! | `v->t` | `H_t` | `H_v`                  |
//! | cross  | `H_c` | `[H_v; H_t]` (`2T` rows) |
//!
//! Each block is mean-pooled over time and the three pooled vectors are
//! concatenated in that order into `z` of width `3 d_model`. The head is
//! `softmax(W_out relu(W_hidden z))`, giving `[p_real, p_fake]`.
//!
//! There is no positional encoding and no dropout; a forward pass is a
//! deterministic function of the parameters and the input.

mod checkpoint;
mod params;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC};
pub use params::Parameter;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::ndauto::{Tape, Tensor, TensorError, TensorId};
use crate::simlat::{SimilarityTriplet, SquareMatrix};
use params::{build_layout, init_tensor, Bound, Layout};

/// `eps` inside every layer norm's square root.
pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model configuration: {0}")]
    InvalidConfig(String),
    #[error("model expects {expected} frames, input has {found}")]
    FrameMismatch { expected: usize, found: usize },
    #[error("expected a [{frames}, {width}] branch encoding, got {shape:?}")]
    EncodingShape {
        frames: usize,
        width: usize,
        shape: Vec<usize>,
    },
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("checkpoint: bad magic")]
    BadMagic,
    #[error("checkpoint: unsupported version {0}")]
    UnsupportedVersion(u16),
    #[error("checkpoint: truncated")]
    Truncated,
    #[error("checkpoint: expected parameter {expected:?} {expected_shape:?}, found {found:?} {found_shape:?}")]
    UnexpectedParameter {
        expected: String,
        expected_shape: Vec<usize>,
        found: String,
        found_shape: Vec<usize>,
    },
    #[error("checkpoint: trailing bytes after the last parameter")]
    TrailingBytes,
    #[error("parameter {0} has a non-finite value")]
    NonFiniteParameter(String),
}

/// Size of each Transformer encoder (and of the fusion blocks).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EncoderConfig {
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_model: usize,
    pub d_ff: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            n_layers: 2,
            n_heads: 4,
            d_model: 32,
            d_ff: 32,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let c = self;
        if c.n_layers == 0 || c.n_heads == 0 || c.d_model == 0 || c.d_ff == 0 {
            return Err(ModelError::InvalidConfig(format!("all sizes must be positive: {c:?}")));
        }
        if !c.d_model.is_multiple_of(c.n_heads) {
            return Err(ModelError::InvalidConfig(format!(
                "d_model {} is not divisible by n_heads {}",
                c.d_model, c.n_heads
            )));
        }
        if c.n_layers > u16::MAX as usize
            || c.n_heads > u16::MAX as usize
            || c.d_model > u32::MAX as usize
            || c.d_ff > u32::MAX as usize
        {
            return Err(ModelError::InvalidConfig("sizes exceed checkpoint field widths".into()));
        }
        Ok(())
    }
}

/// One of the three similarity branches.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Branch {
    Visual = 0,
    Textual = 1,
    Cross = 2,
}

impl Branch {
    pub const ALL: [Branch; 3] = [Branch::Visual, Branch::Textual, Branch::Cross];

    pub fn name(self) -> &'static str {
        match self {
            Branch::Visual => "visual",
            Branch::Textual => "textual",
            Branch::Cross => "cross",
        }
    }

    fn matrix(self, triplet: &SimilarityTriplet) -> &SquareMatrix {
        triplet.matrices()[self as usize]
    }
}

/// Class probabilities for one video.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Prediction {
    pub p_real: f64,
    pub p_fake: f64,
}

/// All learnable parameters plus the layout that gives them meaning.
#[derive(Clone, Debug)]
pub struct AtssModel {
    config: EncoderConfig,
    frames: usize,
    params: Vec<Parameter>,
    layout: Layout,
}

impl PartialEq for AtssModel {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config && self.frames == other.frames && self.params == other.params
    }
}

/// Tape handles produced by one recorded forward pass.
#[derive(Debug)]
pub struct ForwardGraph {
    /// Leaf id of each parameter, in [`AtssModel::parameters`] order.
    pub params: Vec<TensorId>,
    /// Encoder outputs `H_v`, `H_t`, `H_c`, each `[T, d_model]`.
    pub encoded: [TensorId; 3],
    /// Pooled fusion outputs `z_(t->v)`, `z_(v->t)`, `z_c`, each `[d_model]`.
    pub pooled: [TensorId; 3],
    /// `z`, `[3 d_model]`.
    pub fused: TensorId,
    /// `[p_real, p_fake]`.
    pub probs: TensorId,
    /// Per-head self-attention weights of each branch's last encoder layer.
    pub attention: [Vec<TensorId>; 3],
    /// Per-head cross-attention weights of the `t->v`, `v->t` and cross
    /// fusion blocks; the cross block's are `[T, 2T]`.
    pub fusion_attention: [Vec<TensorId>; 3],
}

impl AtssModel {
    /// Xavier-uniform weights, zero biases, unit layer-norm gains. The same
    /// seed always yields bit-identical parameters.
    pub fn init(config: EncoderConfig, frames: usize, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        if frames == 0 || frames > u16::MAX as usize {
            return Err(ModelError::InvalidConfig(format!("frame count {frames} out of range")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (layout, params) = build_layout(&config, frames, |_, shape, init| init_tensor(&mut rng, shape, init));
        Ok(Self {
            config,
            frames,
            params,
            layout,
        })
    }

    /// Rebuilds a model from parameters listed in layout order.
    pub fn from_parameters(config: EncoderConfig, frames: usize, params: Vec<Parameter>) -> Result<Self, ModelError> {
        let mut model = Self::init(config, frames, 0)?;
        if params.len() != model.params.len() {
            return Err(ModelError::InvalidConfig(format!(
                "expected {} parameters, got {}",
                model.params.len(),
                params.len()
            )));
        }
        for (expected, found) in model.params.iter().zip(&params) {
            if expected.name != found.name || expected.value.shape() != found.value.shape() {
                return Err(ModelError::UnexpectedParameter {
                    expected: expected.name.clone(),
                    expected_shape: expected.value.shape().to_vec(),
                    found: found.name.clone(),
                    found_shape: found.value.shape().to_vec(),
                });
            }
            if !found.value.is_finite() {
                return Err(ModelError::NonFiniteParameter(found.name.clone()));
            }
        }
        model.params = params;
        Ok(model)
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn parameters(&self) -> &[Parameter] {
        &self.params
    }

    pub fn parameters_mut(&mut self) -> &mut [Parameter] {
        &mut self.params
    }

    pub fn parameter(&self, name: &str) -> Option<&Parameter> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn parameter_mut(&mut self, name: &str) -> Option<&mut Parameter> {
        self.params.iter_mut().find(|p| p.name == name)
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    fn check_frames(&self, found: usize) -> Result<(), ModelError> {
        if found != self.frames {
            return Err(ModelError::FrameMismatch {
                expected: self.frames,
                found,
            });
        }
        Ok(())
    }

    fn bind(&self, tape: &mut Tape, trainable: bool) -> Vec<TensorId> {
        self.params
            .iter()
            .map(|p| {
                if trainable {
                    tape.param(p.value.clone())
                } else {
                    tape.constant(p.value.clone())
                }
            })
            .collect()
    }

    fn record_encoder(
        &self,
        tape: &mut Tape,
        ids: &[TensorId],
        branch: Branch,
        input: &SquareMatrix,
    ) -> Result<(TensorId, Vec<TensorId>), ModelError> {
        self.check_frames(input.size())?;
        let p = Bound(ids);
        let slot = &self.layout.branches[branch as usize];
        let t = self.frames;
        let tokens = tape.constant(Tensor::new(vec![t, t], input.data().to_vec())?);
        let mut x = tape.linear(tokens, &p.linear(slot.input_proj))?;
        let mut last_attention = Vec::new();
        for layer in &slot.layers {
            let attn = tape.multi_head_attention(x, x, x, &p.attention(layer.attn), self.config.n_heads)?;
            let res = tape.add(x, attn.output)?;
            let (g, b) = p.norm(layer.norm1);
            x = tape.layer_norm(res, g, b, LAYER_NORM_EPS)?;

            let h = tape.linear(x, &p.linear(layer.ff1))?;
            let h = tape.relu(h)?;
            let h = tape.linear(h, &p.linear(layer.ff2))?;
            let res = tape.add(x, h)?;
            let (g, b) = p.norm(layer.norm2);
            x = tape.layer_norm(res, g, b, LAYER_NORM_EPS)?;
            last_attention = attn.weights;
        }
        Ok((x, last_attention))
    }

    #[allow(clippy::type_complexity)]
    fn record_fusion(
        &self,
        tape: &mut Tape,
        ids: &[TensorId],
        encoded: [TensorId; 3],
    ) -> Result<([TensorId; 3], [Vec<TensorId>; 3]), ModelError> {
        let p = Bound(ids);
        let [hv, ht, hc] = encoded;
        let joint = tape.concat_rows(&[hv, ht])?;
        let plan = [(hv, ht), (ht, hv), (hc, joint)];
        let mut pooled = [hv; 3];
        let mut weights: [Vec<TensorId>; 3] = Default::default();
        for (i, (query, kv)) in plan.into_iter().enumerate() {
            let slot = self.layout.fusion[i];
            let attn = tape.multi_head_attention(query, kv, kv, &p.attention(slot.attn), self.config.n_heads)?;
            let res = tape.add(query, attn.output)?;
            let (g, b) = p.norm(slot.norm);
            let refined = tape.layer_norm(res, g, b, LAYER_NORM_EPS)?;
            pooled[i] = tape.mean_pool_rows(refined)?;
            weights[i] = attn.weights;
        }
        Ok((pooled, weights))
    }

    /// Records the full network on `tape`. With `trainable`, parameters are
    /// gradient-collecting leaves.
    pub fn record_forward(
        &self,
        tape: &mut Tape,
        triplet: &SimilarityTriplet,
        trainable: bool,
    ) -> Result<ForwardGraph, ModelError> {
        self.check_frames(triplet.frames())?;
        let ids = self.bind(tape, trainable);
        let mut encoded = [ids[0]; 3];
        let mut attention: [Vec<TensorId>; 3] = Default::default();
        for branch in Branch::ALL {
            let (h, attn) = self.record_encoder(tape, &ids, branch, branch.matrix(triplet))?;
            encoded[branch as usize] = h;
            attention[branch as usize] = attn;
        }
        let (pooled, fusion_attention) = self.record_fusion(tape, &ids, encoded)?;
        let fused = tape.concat_channels(&pooled)?;
        let probs = self.record_head(tape, &ids, fused)?;
        Ok(ForwardGraph {
            params: ids,
            encoded,
            pooled,
            fused,
            probs,
            attention,
            fusion_attention,
        })
    }

    fn record_head(&self, tape: &mut Tape, ids: &[TensorId], fused: TensorId) -> Result<TensorId, ModelError> {
        let p = Bound(ids);
        let width = 3 * self.config.d_model;
        let z = tape.reshape(fused, &[1, width])?;
        let h = tape.linear(z, &p.linear(self.layout.head_hidden))?;
        let h = tape.relu(h)?;
        let logits = tape.linear(h, &p.linear(self.layout.head_out))?;
        let probs = tape.softmax_rows(logits)?;
        Ok(tape.reshape(probs, &[2])?)
    }

    /// `H_m` for one branch: `[T, d_model]`, row `i` belonging to frame `i`.
    pub fn encode_branch(&self, branch: Branch, input: &SquareMatrix) -> Result<Tensor, ModelError> {
        let mut tape = Tape::new();
        let ids = self.bind(&mut tape, false);
        let (h, _) = self.record_encoder(&mut tape, &ids, branch, input)?;
        Ok(tape.value(h).clone())
    }

    /// Cross-attentive fusion of three branch encodings into `z`
    /// (`[3 d_model]`, ordered `t->v`, `v->t`, cross).
    pub fn fuse(&self, h_visual: &Tensor, h_textual: &Tensor, h_cross: &Tensor) -> Result<Tensor, ModelError> {
        let want = [self.frames, self.config.d_model];
        for h in [h_visual, h_textual, h_cross] {
            if h.shape() != want {
                return Err(ModelError::EncodingShape {
                    frames: want[0],
                    width: want[1],
                    shape: h.shape().to_vec(),
                });
            }
        }
        let mut tape = Tape::new();
        let ids = self.bind(&mut tape, false);
        let encoded = [h_visual, h_textual, h_cross].map(|h| tape.constant(h.clone()));
        let (pooled, _) = self.record_fusion(&mut tape, &ids, encoded)?;
        let z = tape.concat_channels(&pooled)?;
        Ok(tape.value(z).clone())
    }

    pub fn forward(&self, triplet: &SimilarityTriplet) -> Result<Prediction, ModelError> {
        let mut tape = Tape::new();
        let graph = self.record_forward(&mut tape, triplet, false)?;
        Ok(prediction_from(tape.value(graph.probs)))
    }

    /// Loss and its gradient with respect to every parameter, in
    /// [`AtssModel::parameters`] order.
    pub fn loss_and_gradient(&self, triplet: &SimilarityTriplet, label: usize) -> Result<(f64, Vec<Vec<f64>>), ModelError> {
        let mut tape = Tape::new();
        let graph = self.record_forward(&mut tape, triplet, true)?;
        let loss = tape.cross_entropy(graph.probs, label)?;
        tape.backward(loss)?;
        let grads = graph
            .params
            .iter()
            .zip(&self.params)
            .map(|(&id, p)| tape.grad(id).map_or_else(|| vec![0.0; p.value.len()], <[f64]>::to_vec))
            .collect();
        Ok((tape.value(loss).item().expect("scalar loss"), grads))
    }

    /// Head-averaged self-attention of each branch's last encoder layer.
    pub fn export_attention_density(&self, triplet: &SimilarityTriplet) -> Result<[BranchAttention; 3], ModelError> {
        let mut tape = Tape::new();
        let graph = self.record_forward(&mut tape, triplet, false)?;
        let t = self.frames;
        Ok(graph.attention.map(|heads| {
            let heads: Vec<SquareMatrix> = heads
                .iter()
                .map(|&id| SquareMatrix::new(t, tape.value(id).data().to_vec()).expect("[T, T] attention"))
                .collect();
            BranchAttention::from_heads(heads)
        }))
    }
}

fn prediction_from(probs: &Tensor) -> Prediction {
    let p = probs.data();
    Prediction {
        p_real: p[0],
        p_fake: p[1],
    }
}

/// Cross-entropy of a prediction against `label` (0 real, 1 fake).
pub fn loss(pred: &Prediction, label: usize) -> Result<f64, ModelError> {
    let mut tape = Tape::new();
    let probs = tape.leaf(Tensor::vector(vec![pred.p_real, pred.p_fake]), false)?;
    let l = tape.cross_entropy(probs, label)?;
    Ok(tape.value(l).item().expect("scalar loss"))
}

/// Attention summary of one branch.
#[derive(Clone, Debug)]
pub struct BranchAttention {
    /// Raw per-head `[T, T]` weights.
    pub heads: Vec<SquareMatrix>,
    /// Mean over heads.
    pub averaged: SquareMatrix,
    /// Column means of `averaged`: how much attention each frame receives,
    /// averaged over query frames. Sums to 1.
    pub density: Vec<f64>,
}

impl BranchAttention {
    fn from_heads(heads: Vec<SquareMatrix>) -> Self {
        let t = heads[0].size();
        let inv = 1.0 / heads.len() as f64;
        let averaged = SquareMatrix::from_fn(t, |i, j| heads.iter().map(|h| h.get(i, j)).sum::<f64>() * inv);
        let density = (0..t)
            .map(|j| (0..t).map(|i| averaged.get(i, j)).sum::<f64>() / t as f64)
            .collect();
        Self {
            heads,
            averaged,
            density,
        }
    }
}

/// CSV rendering of [`AtssModel::export_attention_density`]: for each branch
/// an `ATTN_<BRANCH>` block of `T` rows followed by a one-row
/// `DENSITY_<BRANCH>` block.
pub fn attention_to_csv(maps: &[BranchAttention; 3]) -> String {
    use std::fmt::Write as _;
    let mut out = String::new();
    let join = |row: &[f64]| row.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
    for (branch, map) in Branch::ALL.iter().zip(maps) {
        let tag = branch.name().to_uppercase();
        writeln!(out, "ATTN_{tag}").unwrap();
        for i in 0..map.averaged.size() {
            writeln!(out, "{}", join(map.averaged.row(i))).unwrap();
        }
        writeln!(out, "DENSITY_{tag}").unwrap();
        writeln!(out, "{}", join(&map.density)).unwrap();
    }
    out
}
