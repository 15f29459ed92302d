//! LSTM with forget gate.
//!
//! Gate order is fixed as (input `i`, forget `f`, candidate `g`, output `o`).
//! The four gates are stored side by side along the last axis of each weight
//! tensor, so one matmul produces all pre-activations:
//!
//! ```text
//! z  = x·W + h·U + b            W: [input, 4·hidden]  U: [hidden, 4·hidden]  b: [4·hidden]
//! i  = σ(z[0:H])   f = σ(z[H:2H])   g = tanh(z[2H:3H])   o = σ(z[3H:4H])
//! c' = f ⊙ c + i ⊙ g
//! h' = o ⊙ tanh(c')
//! ```

use crate::autodiff::{ops, Graph, NodeId};
use crate::error::{Error, Result};
use crate::tensor::{Precision, Tensor};

/// Weight tensors of one LSTM layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmWeights {
    pub input: Tensor,
    pub recurrent: Tensor,
    pub bias: Tensor,
}

impl LstmWeights {
    pub fn zeros(input: usize, hidden: usize, precision: Precision) -> Self {
        LstmWeights {
            input: Tensor::zeros(&[input, 4 * hidden], precision),
            recurrent: Tensor::zeros(&[hidden, 4 * hidden], precision),
            bias: Tensor::zeros(&[4 * hidden], precision),
        }
    }

    pub fn input_size(&self) -> usize {
        self.input.shape()[0]
    }

    pub fn hidden_size(&self) -> usize {
        self.recurrent.shape()[0]
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.input.rank() == 2
            && self.recurrent.rank() == 2
            && self.bias.rank() == 1
            && self.recurrent.shape()[1] == 4 * self.recurrent.shape()[0]
            && self.input.shape()[1] == self.recurrent.shape()[1]
            && self.bias.numel() == self.recurrent.shape()[1];
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "inconsistent LSTM weights: W {:?}, U {:?}, b {:?}",
                self.input.shape(),
                self.recurrent.shape(),
                self.bias.shape()
            )))
        }
    }

    /// Records the weights as graph variables.
    pub fn bind(&self, g: &mut Graph) -> LstmParams {
        LstmParams {
            input: g.variable(self.input.clone()),
            recurrent: g.variable(self.recurrent.clone()),
            bias: g.variable(self.bias.clone()),
        }
    }
}

/// Graph handles of an LSTM layer's weights.
#[derive(Debug, Clone, Copy)]
pub struct LstmParams {
    pub input: NodeId,
    pub recurrent: NodeId,
    pub bias: NodeId,
}

impl LstmParams {
    fn hidden(&self, g: &Graph) -> usize {
        g.value(self.recurrent).shape()[0]
    }
}

/// One step. `x: [N, input]`, `h, c: [N, hidden]`; returns `(h', c')`.
pub fn lstm_step(g: &mut Graph, x: NodeId, h: NodeId, c: NodeId, w: &LstmParams) -> Result<(NodeId, NodeId)> {
    let hidden = w.hidden(g);
    let (hs, cs) = (g.value(h).shape().to_vec(), g.value(c).shape().to_vec());
    if hs != cs || hs.len() != 2 || hs[1] != hidden || g.value(x).rank() != 2 || g.value(x).shape()[0] != hs[0] {
        return Err(Error::ShapeMismatch {
            op: "lstm_step",
            left: g.value(x).shape().to_vec(),
            right: hs,
        });
    }
    let zx = ops::matmul(g, x, w.input)?;
    let zh = ops::matmul(g, h, w.recurrent)?;
    let z = ops::add(g, zx, zh)?;
    let z = ops::add_bias(g, z, w.bias)?;
    let gate = |g: &mut Graph, k: usize| ops::narrow(g, z, 1, k * hidden, hidden);
    let i = gate(g, 0)?;
    let i = ops::sigmoid(g, i);
    let f = gate(g, 1)?;
    let f = ops::sigmoid(g, f);
    let cand = gate(g, 2)?;
    let cand = ops::tanh(g, cand);
    let o = gate(g, 3)?;
    let o = ops::sigmoid(g, o);
    let keep = ops::mul(g, f, c)?;
    let write = ops::mul(g, i, cand)?;
    let c_next = ops::add(g, keep, write)?;
    let squashed = ops::tanh(g, c_next);
    let h_next = ops::mul(g, o, squashed)?;
    Ok((h_next, c_next))
}

/// Unrolls over a sequence `xs: [N, T, input]` from zero state (or the
/// given state) and returns every hidden state as `[N, T, hidden]`.
pub fn lstm_layer(g: &mut Graph, xs: NodeId, w: &LstmParams, state: Option<(NodeId, NodeId)>) -> Result<NodeId> {
    let shape = g.value(xs).shape().to_vec();
    if shape.len() != 3 {
        return Err(Error::invalid(format!(
            "lstm_layer expects [N, T, input], got {shape:?}"
        )));
    }
    let (n, t, input) = (shape[0], shape[1], shape[2]);
    if t == 0 {
        return Err(Error::invalid("lstm_layer needs at least one timestep"));
    }
    let hidden = w.hidden(g);
    let precision = g.value(xs).precision();
    let (mut h, mut c) = match state {
        Some(s) => s,
        None => (
            g.constant(Tensor::zeros(&[n, hidden], precision)),
            g.constant(Tensor::zeros(&[n, hidden], precision)),
        ),
    };
    let mut outputs = Vec::with_capacity(t);
    for step in 0..t {
        let x = ops::narrow(g, xs, 1, step, 1)?;
        let x = ops::reshape(g, x, &[n, input])?;
        (h, c) = lstm_step(g, x, h, c, w)?;
        outputs.push(ops::reshape(g, h, &[n, 1, hidden])?);
    }
    ops::concat(g, &outputs, 1)
}

/// Unbatched convenience: `xs: [T, input] -> [T, hidden]`.
pub fn lstm_sequence(g: &mut Graph, xs: NodeId, w: &LstmParams) -> Result<NodeId> {
    let shape = g.value(xs).shape().to_vec();
    if shape.len() != 2 {
        return Err(Error::invalid(format!(
            "lstm_sequence expects [T, input], got {shape:?}"
        )));
    }
    let batched = ops::reshape(g, xs, &[1, shape[0], shape[1]])?;
    let out = lstm_layer(g, batched, w, None)?;
    let hidden = w.hidden(g);
    ops::reshape(g, out, &[shape[0], hidden])
}
