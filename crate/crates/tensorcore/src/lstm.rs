use rand::Rng;

use crate::error::{Result, TensorError};
use crate::param::{ParamId, ParamStore};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Gate blocks in the packed LSTM weights, in row order.
pub const GATE_ORDER: [&str; 4] = ["input", "forget", "output", "cell"];

/// Parameters of one LSTM layer.
///
/// The four gate matrices are packed row-wise in [`GATE_ORDER`]:
/// `input` holds `[W_i; W_f; W_o; W_g]` with shape `[4 * hidden, input_dim]`,
/// `recurrent` holds the matching `U` blocks `[4 * hidden, hidden]`, and
/// `bias` the `b` blocks `[4 * hidden]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LstmCell {
    pub input: ParamId,
    pub recurrent: ParamId,
    pub bias: ParamId,
    pub input_dim: usize,
    pub hidden: usize,
}

impl LstmCell {
    /// Registers `{prefix}.w`, `{prefix}.u`, `{prefix}.b`, initialized
    /// uniformly in `±1/sqrt(hidden)` with the forget-gate bias set to
    /// `forget_bias`.
    pub fn register<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        input_dim: usize,
        hidden: usize,
        forget_bias: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let bound = (1.0 / hidden as f64).sqrt();
        let input = store.add(format!("{prefix}.w"), Tensor::uniform(&[4 * hidden, input_dim], bound, rng)?)?;
        let recurrent = store.add(format!("{prefix}.u"), Tensor::uniform(&[4 * hidden, hidden], bound, rng)?)?;
        let mut b = Tensor::uniform(&[4 * hidden], bound, rng)?;
        b.data_mut()[hidden..2 * hidden].iter_mut().for_each(|v| *v = forget_bias);
        let bias = store.add(format!("{prefix}.b"), b)?;
        Ok(Self {
            input,
            recurrent,
            bias,
            input_dim,
            hidden,
        })
    }

    /// Looks up an already-registered layer by prefix.
    pub fn lookup(store: &ParamStore, prefix: &str) -> Result<Self> {
        let input = store.id(&format!("{prefix}.w"))?;
        let recurrent = store.id(&format!("{prefix}.u"))?;
        let bias = store.id(&format!("{prefix}.b"))?;
        let shape = store.get(input).value.shape().to_vec();
        if shape.len() != 2 || !shape[0].is_multiple_of(4) {
            return Err(TensorError::InvalidShape {
                shape,
                reason: "packed LSTM input weights must be [4 * hidden, input_dim]",
            });
        }
        Ok(Self {
            input,
            recurrent,
            bias,
            input_dim: shape[1],
            hidden: shape[0] / 4,
        })
    }

    /// One gated update; returns `(h', c')`.
    ///
    /// `i, f, o = logistic(W x + U h + b)`, `g = tanh(W x + U h + b)`,
    /// `c' = f * c + i * g`, `h' = o * tanh(c')`.
    pub fn step(&self, tape: &mut Tape, store: &ParamStore, x: Var, h: Var, c: Var) -> Result<(Var, Var)> {
        const OP: &str = "lstm_step";
        let dh = self.hidden;
        for (v, axis) in [(h, "hidden state"), (c, "cell state")] {
            let [_, d] = dims2(tape.value(v), OP)?;
            if d != dh {
                return Err(TensorError::Dimension {
                    op: OP,
                    axis,
                    expected: dh,
                    found: d,
                });
            }
        }
        let w = tape.param(store, self.input);
        let u = tape.param(store, self.recurrent);
        let b = tape.param(store, self.bias);
        let from_input = tape.linear(x, w, Some(b))?;
        let from_state = tape.linear(h, u, None)?;
        let pre = tape.add(from_input, from_state)?;
        let gi = tape.col_slice(pre, 0, dh)?;
        let gf = tape.col_slice(pre, dh, dh)?;
        let go = tape.col_slice(pre, 2 * dh, dh)?;
        let gg = tape.col_slice(pre, 3 * dh, dh)?;
        let i = tape.logistic(gi);
        let f = tape.logistic(gf);
        let o = tape.logistic(go);
        let g = tape.tanh(gg);
        let keep = tape.mul(f, c)?;
        let write = tape.mul(i, g)?;
        let c_next = tape.add(keep, write)?;
        let squashed = tape.tanh(c_next);
        let h_next = tape.mul(o, squashed)?;
        Ok((h_next, c_next))
    }
}

fn dims2(t: &Tensor, op: &'static str) -> Result<[usize; 2]> {
    match t.shape() {
        [a, b] => Ok([*a, *b]),
        _ => Err(TensorError::Dimension {
            op,
            axis: "rank",
            expected: 2,
            found: t.rank(),
        }),
    }
}
