//! BiLSTM sequence encoder with linear self-attention summarization.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, NodeId, ParamId, ParamStore};
use crate::error::{Error, Result};
use crate::model::{init_uniform, init_uniform_bound};
use crate::tensor::Tensor;

/// Samples an input dropout mask for a `[steps × width]` sequence.
///
/// A variational mask has shape `[width]` and is reused at every timestep;
/// otherwise every timestep gets its own row (`[steps × width]`). Kept
/// entries are scaled by `1 / (1 - rate)`.
pub fn sample_input_mask(
    rng: &mut ChaCha8Rng,
    steps: usize,
    width: usize,
    rate: f64,
    variational: bool,
) -> Tensor {
    let keep = 1.0 - rate;
    let mut draw = |n: usize| -> Vec<f64> {
        (0..n)
            .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect()
    };
    if variational {
        Tensor::vector(draw(width))
    } else {
        Tensor::matrix(steps, width, draw(steps * width)).expect("mask shape")
    }
}

/// The mask actually applied at timestep `t`.
pub fn mask_at_step(mask: &Tensor, t: usize) -> &[f64] {
    if mask.ndim() == 1 {
        mask.data()
    } else {
        mask.row(t)
    }
}

#[derive(Clone, Debug)]
struct Direction {
    weight: ParamId,
    bias: ParamId,
}

/// One BiLSTM plus its self-attention vector `w` and bias `b`.
#[derive(Clone, Debug)]
pub struct SeqEncoder {
    forward: Direction,
    backward: Direction,
    attn_weight: ParamId,
    attn_bias: ParamId,
    d_in: usize,
    hidden: usize,
}

impl SeqEncoder {
    pub fn register(
        store: &mut ParamStore,
        prefix: &str,
        d_in: usize,
        hidden: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let mut direction = |name: &str, rng: &mut ChaCha8Rng| -> Result<Direction> {
            let weight = store.add(
                format!("{prefix}.lstm.{name}.weight"),
                // Scaled by the hidden size, as common LSTM implementations do.
                init_uniform_bound(rng, &[4 * hidden, d_in + hidden], 1.0 / (hidden as f64).sqrt()),
                false,
            )?;
            let mut b = Tensor::zeros(&[4 * hidden]);
            b.data_mut()[hidden..2 * hidden].fill(1.0);
            let bias = store.add(format!("{prefix}.lstm.{name}.bias"), b, false)?;
            Ok(Direction { weight, bias })
        };
        let forward = direction("forward", rng)?;
        let backward = direction("backward", rng)?;
        let attn_weight = store.add(
            format!("{prefix}.attention.weight"),
            init_uniform(rng, &[2 * hidden]),
            false,
        )?;
        let attn_bias = store.add(format!("{prefix}.attention.bias"), Tensor::zeros(&[1]), false)?;
        Ok(Self {
            forward,
            backward,
            attn_weight,
            attn_bias,
            d_in,
            hidden,
        })
    }

    /// Looks up an encoder registered under `prefix` in an existing store.
    pub fn attach(store: &ParamStore, prefix: &str) -> Result<Self> {
        let id = |name: String| {
            store
                .id(&name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter `{name}`")))
        };
        let forward = Direction {
            weight: id(format!("{prefix}.lstm.forward.weight"))?,
            bias: id(format!("{prefix}.lstm.forward.bias"))?,
        };
        let backward = Direction {
            weight: id(format!("{prefix}.lstm.backward.weight"))?,
            bias: id(format!("{prefix}.lstm.backward.bias"))?,
        };
        let (rows, cols) = store
            .value(forward.weight)
            .dims2()
            .ok_or_else(|| Error::Checkpoint(format!("{prefix}: LSTM weight is not a matrix")))?;
        let hidden = rows / 4;
        Ok(Self {
            forward,
            backward,
            attn_weight: id(format!("{prefix}.attention.weight"))?,
            attn_bias: id(format!("{prefix}.attention.bias"))?,
            d_in: cols - hidden,
            hidden,
        })
    }

    pub fn d_in(&self) -> usize {
        self.d_in
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    /// Width of the encoded rows, both directions concatenated.
    pub fn d_rnn(&self) -> usize {
        2 * self.hidden
    }

    fn run(&self, g: &mut Graph<'_>, rows: &[NodeId], dir: &Direction, reverse: bool) -> Result<Vec<NodeId>> {
        let w = g.param(dir.weight);
        let b = g.param(dir.bias);
        let zero = g.constant(Tensor::zeros(&[self.hidden]));
        let (mut h, mut c) = (zero, zero);
        let mut out = vec![zero; rows.len()];
        let order: Vec<usize> = if reverse {
            (0..rows.len()).rev().collect()
        } else {
            (0..rows.len()).collect()
        };
        for t in order {
            let hc = g.lstm_cell(rows[t], h, c, w, b)?;
            h = g.slice(hc, 0, self.hidden)?;
            c = g.slice(hc, self.hidden, self.hidden)?;
            out[t] = h;
        }
        Ok(out)
    }

    /// BiLSTM over `x` (`[m × d_in]`) with an optional fixed input mask.
    /// Row `t` of the result is `[forward_t; backward_t]`.
    pub fn encode_with_mask(&self, g: &mut Graph<'_>, x: NodeId, mask: Option<&Tensor>) -> Result<NodeId> {
        let shape = g.value(x).shape().to_vec();
        let m = match shape.as_slice() {
            [m, d] if *d == self.d_in && *m >= 1 => *m,
            _ => {
                return Err(Error::Shape {
                    op: "encode",
                    left: shape,
                    right: vec![self.d_in],
                })
            }
        };
        let x = match mask {
            Some(mask) => g.dropout(x, mask)?,
            None => x,
        };
        let mut rows = Vec::with_capacity(m);
        for t in 0..m {
            rows.push(g.row(x, t)?);
        }
        let fwd = self.run(g, &rows, &self.forward, false)?;
        let bwd = self.run(g, &rows, &self.backward, true)?;
        let mut joined = Vec::with_capacity(m);
        for t in 0..m {
            joined.push(g.concat(&[fwd[t], bwd[t]])?);
        }
        g.stack(&joined)
    }

    /// Encodes `x`, sampling a fresh input mask when `dropout` is given.
    pub fn encode(
        &self,
        g: &mut Graph<'_>,
        x: NodeId,
        dropout: Option<(&mut ChaCha8Rng, f64, bool)>,
    ) -> Result<NodeId> {
        match dropout {
            Some((rng, rate, variational)) if rate > 0.0 => {
                let m = g.value(x).outer_len();
                let mask = sample_input_mask(rng, m, self.d_in, rate, variational);
                self.encode_with_mask(g, x, Some(&mask))
            }
            _ => self.encode_with_mask(g, x, None),
        }
    }

    /// `p = softmax(R w + b)`, `s = Rᵀ p`.
    pub fn self_attend(&self, g: &mut Graph<'_>, r: NodeId) -> Result<NodeId> {
        let w = g.param(self.attn_weight);
        let b = g.param(self.attn_bias);
        self_attend(g, r, w, b)
    }

    /// Encoding followed by summarization.
    pub fn summarize(&self, g: &mut Graph<'_>, x: NodeId, mask: Option<&Tensor>) -> Result<(NodeId, NodeId)> {
        let r = self.encode_with_mask(g, x, mask)?;
        let s = self.self_attend(g, r)?;
        Ok((r, s))
    }
}

/// Linear self-attention over the rows of `r` with weight vector `w` and
/// scalar bias `b`.
pub fn self_attend(g: &mut Graph<'_>, r: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
    let scores = g.matvec(r, w)?;
    let shifted = g.add_scalar(scores, b)?;
    let p = g.softmax(shifted)?;
    g.matvec_t(r, p)
}
