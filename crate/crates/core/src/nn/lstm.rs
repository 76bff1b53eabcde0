use rand::Rng;

use super::params::{glorot_uniform, Bound, ParamId, ParamStore};
use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

/// Single-layer LSTM cell.
///
/// Every gate reads the concatenation `[x_t, h_{t-1}]`, so each weight is
/// `[hidden × (input + hidden)]`. The forget-gate bias starts at +1.
#[derive(Clone, Debug)]
pub struct LstmCell {
    pub w_input: ParamId,
    pub w_forget: ParamId,
    pub w_output: ParamId,
    pub w_candidate: ParamId,
    pub b_input: ParamId,
    pub b_forget: ParamId,
    pub b_output: ParamId,
    pub b_candidate: ParamId,
    input_dim: usize,
    hidden: usize,
}

impl LstmCell {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        input_dim: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        let cols = input_dim + hidden;
        let mut w = |gate: &str, rng: &mut R| {
            store.add(format!("{name}.w_{gate}"), glorot_uniform(rng, hidden, cols))
        };
        let w_input = w("input", rng);
        let w_forget = w("forget", rng);
        let w_output = w("output", rng);
        let w_candidate = w("candidate", rng);
        let b_input = store.add(format!("{name}.b_input"), Tensor::zeros([hidden]));
        let b_forget = store.add(format!("{name}.b_forget"), Tensor::full([hidden], 1.0));
        let b_output = store.add(format!("{name}.b_output"), Tensor::zeros([hidden]));
        let b_candidate = store.add(format!("{name}.b_candidate"), Tensor::zeros([hidden]));
        Self {
            w_input,
            w_forget,
            w_output,
            w_candidate,
            b_input,
            b_forget,
            b_output,
            b_candidate,
            input_dim,
            hidden,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn weight_ids(&self) -> [ParamId; 8] {
        [
            self.w_input,
            self.w_forget,
            self.w_output,
            self.w_candidate,
            self.b_input,
            self.b_forget,
            self.b_output,
            self.b_candidate,
        ]
    }

    /// One recurrence step on a batch: `x [B×input]`, `h, c [B×hidden]`.
    pub fn step(&self, tape: &mut Tape, p: &Bound, x: Var, h: Var, c: Var) -> Result<(Var, Var)> {
        let xs = tape.shape(x);
        if xs.len() != 2 || xs[1] != self.input_dim {
            return Err(Error::dim(
                "lstm_step",
                format!("input {:?} for cell with input_dim {}", xs, self.input_dim),
            ));
        }
        let batch = xs[0];
        for state in [h, c] {
            if tape.shape(state) != [batch, self.hidden] {
                return Err(Error::dim(
                    "lstm_step",
                    format!(
                        "state {:?}, expected [{batch}, {}]",
                        tape.shape(state),
                        self.hidden
                    ),
                ));
            }
        }
        let xh = tape.concat(&[x, h], 1)?;
        let i_pre = tape.linear(xh, p[self.w_input], Some(p[self.b_input]))?;
        let f_pre = tape.linear(xh, p[self.w_forget], Some(p[self.b_forget]))?;
        let o_pre = tape.linear(xh, p[self.w_output], Some(p[self.b_output]))?;
        let g_pre = tape.linear(xh, p[self.w_candidate], Some(p[self.b_candidate]))?;
        let i = tape.sigmoid(i_pre)?;
        let f = tape.sigmoid(f_pre)?;
        let o = tape.sigmoid(o_pre)?;
        let g = tape.tanh(g_pre)?;
        let keep = tape.mul(f, c)?;
        let write = tape.mul(i, g)?;
        let c_next = tape.add(keep, write)?;
        let squashed = tape.tanh(c_next)?;
        let h_next = tape.mul(o, squashed)?;
        Ok((h_next, c_next))
    }

    /// Runs the sequence `seq[t] : [B×input]` from zero state and returns
    /// the final hidden state `[B×hidden]`.
    pub fn encode(&self, tape: &mut Tape, p: &Bound, seq: &[Var]) -> Result<Var> {
        let first = *seq
            .first()
            .ok_or_else(|| Error::contract("lstm_encode on an empty sequence"))?;
        let batch = tape.shape(first).first().copied().unwrap_or(0);
        let mut h = tape.constant(Tensor::zeros([batch, self.hidden]));
        let mut c = tape.constant(Tensor::zeros([batch, self.hidden]));
        for &x in seq {
            (h, c) = self.step(tape, p, x, h, c)?;
        }
        Ok(h)
    }

    /// Encodes one unbatched sequence given as `[T × input]`, returning
    /// `[hidden]`.
    pub fn encode_matrix(&self, tape: &mut Tape, p: &Bound, seq: Var) -> Result<Var> {
        let s = tape.shape(seq).to_vec();
        if s.len() != 2 {
            return Err(Error::dim("lstm_encode", format!("sequence shape {s:?}")));
        }
        let steps = (0..s[0])
            .map(|t| tape.slice(seq, 0, t, 1))
            .collect::<Result<Vec<_>>>()?;
        let h = self.encode(tape, p, &steps)?;
        // [1×hidden] -> [hidden]; summing the unit axis keeps it on the tape.
        tape.sum(h, Some(0))
    }
}
