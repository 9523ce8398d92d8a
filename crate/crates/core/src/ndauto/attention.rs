//! Linear layers and scaled dot-product multi-head attention, composed from
//! the primitive tape operations.

use super::{Result, Tape, TensorError, TensorId};

/// Affine map `y = x W + b` with `W: [in, out]`, `b: [out]`.
#[derive(Clone, Copy, Debug)]
pub struct LinearParams {
    pub weight: TensorId,
    pub bias: TensorId,
}

/// Query, key, value and output projections of one attention block.
#[derive(Clone, Copy, Debug)]
pub struct AttentionParams {
    pub query: LinearParams,
    pub key: LinearParams,
    pub value: LinearParams,
    pub output: LinearParams,
}

#[derive(Clone, Debug)]
pub struct AttentionOutput {
    /// `[Tq, d_model]`
    pub output: TensorId,
    /// Per-head attention weights, each `[Tq, Tk]` with rows summing to 1.
    pub weights: Vec<TensorId>,
}

impl Tape {
    pub fn linear(&mut self, x: TensorId, params: &LinearParams) -> Result<TensorId> {
        let y = self.matmul(x, params.weight)?;
        self.add_bias(y, params.bias)
    }

    /// Multi-head attention: for each head `h`,
    /// `softmax(Q_h K_h^T / sqrt(d_model / heads)) V_h`, where `Q_h`, `K_h`,
    /// `V_h` are column blocks of the projected inputs. Heads are
    /// concatenated and passed through the output projection.
    pub fn multi_head_attention(
        &mut self,
        query: TensorId,
        key: TensorId,
        value: TensorId,
        params: &AttentionParams,
        heads: usize,
    ) -> Result<AttentionOutput> {
        let width = *self.value(params.query.weight).shape().last().unwrap_or(&0);
        if heads == 0 || !width.is_multiple_of(heads) {
            return Err(TensorError::HeadCount { width, heads });
        }
        if self.value(key).shape().first() != self.value(value).shape().first() {
            return Err(TensorError::ShapeMismatch {
                op: "multi_head_attention",
                left: self.value(key).shape().to_vec(),
                right: self.value(value).shape().to_vec(),
            });
        }
        let head_dim = width / heads;
        let scale = 1.0 / (head_dim as f64).sqrt();

        let q = self.linear(query, &params.query)?;
        let k = self.linear(key, &params.key)?;
        let v = self.linear(value, &params.value)?;

        let mut outputs = Vec::with_capacity(heads);
        let mut weights = Vec::with_capacity(heads);
        for h in 0..heads {
            let (lo, hi) = (h * head_dim, (h + 1) * head_dim);
            let (qh, kh, vh) = if heads == 1 {
                (q, k, v)
            } else {
                (
                    self.slice_cols(q, lo, hi)?,
                    self.slice_cols(k, lo, hi)?,
                    self.slice_cols(v, lo, hi)?,
                )
            };
            let kt = self.transpose(kh)?;
            let scores = self.matmul(qh, kt)?;
            let scores = self.scale(scores, scale)?;
            let attn = self.softmax_rows(scores)?;
            outputs.push(self.matmul(attn, vh)?);
            weights.push(attn);
        }
        let joined = if heads == 1 {
            outputs[0]
        } else {
            self.concat_channels(&outputs)?
        };
        let output = self.linear(joined, &params.output)?;
        Ok(AttentionOutput { output, weights })
    }
}
