//! Shared oracles for the integration and acceptance targets.

use mlsgan::nn::{LstmCell, ParamStore};
use mlsgan::tensor::{Tape, Tensor};

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `w` is `[hidden × (input + hidden)]` acting on `[x, h]`.
fn affine(w: &Tensor, b: &Tensor, x: &[f64], h: &[f64], row: usize) -> f64 {
    let cols = x.len() + h.len();
    let mut acc = b.data()[row];
    for (j, v) in x.iter().chain(h).enumerate() {
        acc += w.data()[row * cols + j] * v;
    }
    acc
}

/// Scalar-loop LSTM from zero state; returns the final hidden state.
pub fn naive_encode(store: &ParamStore, cell: &LstmCell, seq: &[Vec<f64>]) -> Vec<f64> {
    let [wi, wf, wo, wc, bi, bf, bo, bc] = cell.weight_ids().map(|id| store.get(id).clone());
    let n = cell.hidden();
    let mut h = vec![0.0; n];
    let mut c = vec![0.0; n];
    for x in seq {
        let mut h_next = vec![0.0; n];
        let mut c_next = vec![0.0; n];
        for r in 0..n {
            let i = sigmoid(affine(&wi, &bi, x, &h, r));
            let f = sigmoid(affine(&wf, &bf, x, &h, r));
            let o = sigmoid(affine(&wo, &bo, x, &h, r));
            let g = affine(&wc, &bc, x, &h, r).tanh();
            c_next[r] = f * c[r] + i * g;
            h_next[r] = o * c_next[r].tanh();
        }
        h = h_next;
        c = c_next;
    }
    h
}

pub fn tape_encode(store: &ParamStore, cell: &LstmCell, seq: &[Vec<f64>]) -> Vec<f64> {
    let mut tape = Tape::new();
    let p = store.bind(&mut tape, false);
    let vars: Vec<_> = seq
        .iter()
        .map(|x| tape.constant(Tensor::matrix(1, x.len(), x.clone()).unwrap()))
        .collect();
    let h = cell.encode(&mut tape, &p, &vars).unwrap();
    tape.value(h).data().to_vec()
}
