//! Parameter naming, ordering and Xavier initialization.
//!
//! The layout is a pure function of the configuration, so the checkpoint
//! reader can rebuild the expected name/shape sequence without storing it.

use rand::Rng;

use super::{Branch, EncoderConfig};
use crate::ndauto::{AttentionParams, LinearParams, Tensor, TensorId};

/// A named model tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
}

#[derive(Clone, Copy, Debug)]
pub(crate) enum Init {
    /// Uniform in `+-sqrt(6 / (fan_in + fan_out))`.
    Xavier { fan_in: usize, fan_out: usize },
    Zeros,
    Ones,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct LinearSlot {
    pub weight: usize,
    pub bias: usize,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct NormSlot {
    pub gamma: usize,
    pub beta: usize,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct AttentionSlot {
    pub query: LinearSlot,
    pub key: LinearSlot,
    pub value: LinearSlot,
    pub output: LinearSlot,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct EncoderLayerSlot {
    pub attn: AttentionSlot,
    pub norm1: NormSlot,
    pub ff1: LinearSlot,
    pub ff2: LinearSlot,
    pub norm2: NormSlot,
}

#[derive(Clone, Debug)]
pub(crate) struct BranchSlot {
    pub input_proj: LinearSlot,
    pub layers: Vec<EncoderLayerSlot>,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct FusionSlot {
    pub attn: AttentionSlot,
    pub norm: NormSlot,
}

#[derive(Clone, Debug)]
pub(crate) struct Layout {
    pub branches: [BranchSlot; 3],
    /// `t->v`, `v->t`, cross.
    pub fusion: [FusionSlot; 3],
    pub head_hidden: LinearSlot,
    pub head_out: LinearSlot,
}

/// Fusion block names, in concatenation order.
pub(crate) const FUSION_NAMES: [&str; 3] = ["fusion.t2v", "fusion.v2t", "fusion.cross"];

struct Builder<F> {
    make: F,
    params: Vec<Parameter>,
    d_model: usize,
}

impl<F: FnMut(&str, &[usize], Init) -> Tensor> Builder<F> {
    fn push(&mut self, name: String, shape: &[usize], init: Init) -> usize {
        let value = (self.make)(&name, shape, init);
        self.params.push(Parameter { name, value });
        self.params.len() - 1
    }

    fn linear(&mut self, prefix: &str, fan_in: usize, fan_out: usize) -> LinearSlot {
        LinearSlot {
            weight: self.push(format!("{prefix}.weight"), &[fan_in, fan_out], Init::Xavier { fan_in, fan_out }),
            bias: self.push(format!("{prefix}.bias"), &[fan_out], Init::Zeros),
        }
    }

    fn norm(&mut self, prefix: &str) -> NormSlot {
        let dm = self.d_model;
        NormSlot {
            gamma: self.push(format!("{prefix}.gamma"), &[dm], Init::Ones),
            beta: self.push(format!("{prefix}.beta"), &[dm], Init::Zeros),
        }
    }

    fn attention(&mut self, prefix: &str) -> AttentionSlot {
        let dm = self.d_model;
        AttentionSlot {
            query: self.linear(&format!("{prefix}.query"), dm, dm),
            key: self.linear(&format!("{prefix}.key"), dm, dm),
            value: self.linear(&format!("{prefix}.value"), dm, dm),
            output: self.linear(&format!("{prefix}.output"), dm, dm),
        }
    }
}

/// Walks the parameter list in its fixed order, asking `make` for each
/// tensor. Returns the slot layout and the produced parameters.
pub(crate) fn build_layout<F>(config: &EncoderConfig, frames: usize, make: F) -> (Layout, Vec<Parameter>)
where
    F: FnMut(&str, &[usize], Init) -> Tensor,
{
    let dm = config.d_model;
    let mut b = Builder {
        make,
        params: Vec::new(),
        d_model: dm,
    };

    let branches = Branch::ALL.map(|branch| {
        let name = branch.name();
        let input_proj = b.linear(&format!("{name}.input_proj"), frames, dm);
        let layers = (0..config.n_layers)
            .map(|l| {
                let p = format!("{name}.layer{l}");
                EncoderLayerSlot {
                    attn: b.attention(&format!("{p}.attn")),
                    norm1: b.norm(&format!("{p}.norm1")),
                    ff1: b.linear(&format!("{p}.ff1"), dm, config.d_ff),
                    ff2: b.linear(&format!("{p}.ff2"), config.d_ff, dm),
                    norm2: b.norm(&format!("{p}.norm2")),
                }
            })
            .collect();
        BranchSlot { input_proj, layers }
    });
    let fusion = FUSION_NAMES.map(|prefix| FusionSlot {
        attn: b.attention(&format!("{prefix}.attn")),
        norm: b.norm(&format!("{prefix}.norm")),
    });
    let head_hidden = b.linear("head.hidden", 3 * dm, dm);
    let head_out = b.linear("head.out", dm, 2);

    let layout = Layout {
        branches,
        fusion,
        head_hidden,
        head_out,
    };
    (layout, b.params)
}

pub(crate) fn init_tensor(rng: &mut impl Rng, shape: &[usize], init: Init) -> Tensor {
    match init {
        Init::Xavier { fan_in, fan_out } => {
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let n = shape.iter().product();
            let data = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
            Tensor::new(shape.to_vec(), data).expect("shape matches data")
        }
        Init::Zeros => Tensor::zeros(shape),
        Init::Ones => Tensor::filled(shape, 1.0),
    }
}

/// Tape ids of every parameter, indexed like the model's parameter list.
pub(crate) struct Bound<'a>(pub &'a [TensorId]);

impl Bound<'_> {
    pub fn linear(&self, s: LinearSlot) -> LinearParams {
        LinearParams {
            weight: self.0[s.weight],
            bias: self.0[s.bias],
        }
    }

    pub fn attention(&self, s: AttentionSlot) -> AttentionParams {
        AttentionParams {
            query: self.linear(s.query),
            key: self.linear(s.key),
            value: self.linear(s.value),
            output: self.linear(s.output),
        }
    }

    pub fn norm(&self, s: NormSlot) -> (TensorId, TensorId) {
        (self.0[s.gamma], self.0[s.beta])
    }
}
