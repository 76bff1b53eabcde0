//! Gated fusion unit.
//!
//! Each of `M` streams `Zⁿ [B×dₙ]` gets a tanh embedding `hⁿ = tanh(Zⁿ·Eₙᵀ)`
//! and a sigmoid gate `qⁿ = σ([Z¹ … Zᴹ]·Gₙᵀ + bₙ)` that reads every stream.
//! The output is `C = Σₙ hⁿ ⊙ qⁿ`.
//!
//! The gate pre-activation is evaluated one column block of `Gₙ` per stream
//! and the blocks, like the gated terms of `C`, are summed with
//! [`Tape::add_n`]. Reordering streams together with their weights (and the
//! matching column blocks of every gate matrix) therefore leaves `C`
//! bit-identical.

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{glorot_uniform, Bound, ParamId, ParamStore};
use crate::tensor::{Tape, Tensor, Var};

#[derive(Clone, Debug)]
pub struct GatedFusionUnit {
    dims: Vec<usize>,
    offsets: Vec<usize>,
    fused: usize,
    /// `[fused × dims[n]]` per stream.
    pub encode: Vec<ParamId>,
    /// `[fused × Σdims]` per stream.
    pub gate: Vec<ParamId>,
    /// `[fused]` per stream.
    pub gate_bias: Vec<ParamId>,
    /// Negates the gradient flowing back out of the unit. Test fixture for
    /// the gradient checker's negative control; never set in real training.
    #[doc(hidden)]
    pub flip_backward: bool,
}

/// Fused output plus the gate values that produced it.
#[derive(Clone, Debug)]
pub struct GfuOutput {
    /// `[B×fused]`.
    pub fused: Var,
    /// One `[B×fused]` gate tensor per stream.
    pub gates: Vec<Var>,
}

impl GatedFusionUnit {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        dims: &[usize],
        fused: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if dims.is_empty() {
            return Err(Error::contract("gated fusion needs at least one stream"));
        }
        let total: usize = dims.iter().sum();
        let offsets = dims
            .iter()
            .scan(0, |acc, d| {
                let o = *acc;
                *acc += d;
                Some(o)
            })
            .collect();
        let mut encode = Vec::new();
        let mut gate = Vec::new();
        let mut gate_bias = Vec::new();
        for (n, &d) in dims.iter().enumerate() {
            encode.push(store.add(format!("{name}.encode{n}"), glorot_uniform(rng, fused, d)));
            gate.push(store.add(format!("{name}.gate{n}"), glorot_uniform(rng, fused, total)));
            gate_bias.push(store.add(format!("{name}.gate_bias{n}"), Tensor::zeros([fused])));
        }
        Ok(Self {
            dims: dims.to_vec(),
            offsets,
            fused,
            encode,
            gate,
            gate_bias,
            flip_backward: false,
        })
    }

    pub fn streams(&self) -> usize {
        self.dims.len()
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn fused_dim(&self) -> usize {
        self.fused
    }

    fn check(&self, tape: &Tape, streams: &[Var]) -> Result<usize> {
        if streams.len() != self.dims.len() {
            return Err(Error::dim(
                "gated_fusion",
                format!("{} streams for a unit with {}", streams.len(), self.dims.len()),
            ));
        }
        let batch = tape.shape(streams[0]).first().copied().unwrap_or(0);
        for (n, (&s, &d)) in streams.iter().zip(&self.dims).enumerate() {
            if tape.shape(s) != [batch, d] {
                return Err(Error::dim(
                    "gated_fusion",
                    format!("stream {n} has shape {:?}, expected [{batch}, {d}]", tape.shape(s)),
                ));
            }
        }
        Ok(batch)
    }

    /// Fuses `streams[n] : [B×dims[n]]` into `[B×fused]`.
    pub fn forward(&self, tape: &mut Tape, p: &Bound, streams: &[Var]) -> Result<GfuOutput> {
        self.check(tape, streams)?;
        let mut gated = Vec::with_capacity(streams.len());
        let mut gates = Vec::with_capacity(streams.len());
        for n in 0..streams.len() {
            let pre = tape.linear(streams[n], p[self.encode[n]], None)?;
            let h = tape.tanh(pre)?;
            let mut blocks = Vec::with_capacity(streams.len());
            for (m, &z) in streams.iter().enumerate() {
                let w = tape.slice(p[self.gate[n]], 1, self.offsets[m], self.dims[m])?;
                blocks.push(tape.linear(z, w, None)?);
            }
            let summed = tape.add_n(&blocks)?;
            let gate_pre = tape.add_row(summed, p[self.gate_bias[n]])?;
            let q = tape.sigmoid(gate_pre)?;
            gated.push(tape.mul(h, q)?);
            gates.push(q);
        }
        let mut fused = tape.add_n(&gated)?;
        if self.flip_backward {
            fused = tape.flip_grad(fused)?;
        }
        Ok(GfuOutput { fused, gates })
    }

    /// Two-stream form used by the discriminator.
    pub fn forward_pair(
        &self,
        tape: &mut Tape,
        p: &Bound,
        code_embed: Var,
        scene_embed: Var,
    ) -> Result<GfuOutput> {
        if self.dims.len() != 2 {
            return Err(Error::dim(
                "gated_fusion_pair",
                format!("unit has {} streams, expected 2", self.dims.len()),
            ));
        }
        self.forward(tape, p, &[code_embed, scene_embed])
    }

    /// Gate values from one forward pass, laid out `[B × M × fused]`.
    pub fn gate_activations(&self, tape: &mut Tape, p: &Bound, streams: &[Var]) -> Result<Tensor> {
        let batch = self.check(tape, streams)?;
        let out = self.forward(tape, p, streams)?;
        let m = out.gates.len();
        let mut data = vec![0.0; batch * m * self.fused];
        for (n, &q) in out.gates.iter().enumerate() {
            for (b, row) in tape.value(q).data().chunks(self.fused.max(1)).enumerate() {
                let base = (b * m + n) * self.fused;
                data[base..base + self.fused].copy_from_slice(row);
            }
        }
        Tensor::new([batch, m, self.fused], data)
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::tensor::finite_diff_check;

    fn unit(dims: &[usize], fused: usize, seed: u64) -> (ParamStore, GatedFusionUnit) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u = GatedFusionUnit::new(&mut store, "gfu", dims, fused, &mut rng).unwrap();
        (store, u)
    }

    fn random_streams(dims: &[usize], batch: usize, seed: u64) -> Vec<Tensor> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        dims.iter()
            .map(|&d| {
                let data = (0..batch * d).map(|_| rng.random_range(-2.0..2.0)).collect();
                Tensor::matrix(batch, d, data).unwrap()
            })
            .collect()
    }

    fn run(store: &ParamStore, u: &GatedFusionUnit, streams: &[Tensor]) -> (Tensor, Vec<Tensor>) {
        let mut tape = Tape::new();
        let p = store.bind(&mut tape, false);
        let vars: Vec<Var> = streams.iter().map(|s| tape.constant(s.clone())).collect();
        let out = u.forward(&mut tape, &p, &vars).unwrap();
        let gates = out.gates.iter().map(|&g| tape.value(g).clone()).collect();
        (tape.value(out.fused).clone(), gates)
    }

    fn zero_all(store: &mut ParamStore) {
        let zeros = store
            .tensors()
            .iter()
            .map(|t| Tensor::zeros(t.shape().to_vec()))
            .collect();
        store.set_tensors(zeros).unwrap();
    }

    #[test]
    fn zero_encode_gives_zero_output() {
        let (mut store, u) = unit(&[3], 4, 0);
        zero_all(&mut store);
        let (c, gates) = run(&store, &u, &random_streams(&[3], 2, 1));
        assert!(c.data().iter().all(|&v| v == 0.0));
        assert!(gates[0].data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn suppressed_stream_contributes_nothing() {
        let (mut store, u) = unit(&[3, 3], 4, 2);
        *store.get_mut(u.gate_bias[1]) = Tensor::full([4], -20.0);
        let mut streams = random_streams(&[3, 3], 1, 3);
        streams[1] = Tensor::zeros([1, 3]);
        let (c, _) = run(&store, &u, &streams);

        // Stream 1 alone, through its own encoding and gate.
        let mut tape = Tape::new();
        let p = store.bind(&mut tape, false);
        let z: Vec<Var> = streams.iter().map(|s| tape.constant(s.clone())).collect();
        let out = u.forward(&mut tape, &p, &z).unwrap();
        let pre = tape.linear(z[0], p[u.encode[0]], None).unwrap();
        let h = tape.tanh(pre).unwrap();
        let r0 = tape.mul(h, out.gates[0]).unwrap();
        assert!(c.max_abs_diff(tape.value(r0)).unwrap() < 1e-6);
    }

    #[test]
    fn single_stream_with_open_gate_is_plain_encoding() {
        let (mut store, u) = unit(&[5], 3, 4);
        *store.get_mut(u.gate_bias[0]) = Tensor::full([3], 20.0);
        let streams = random_streams(&[5], 2, 5);
        let (c, _) = run(&store, &u, &streams);
        let mut tape = Tape::new();
        let p = store.bind(&mut tape, false);
        let z = tape.constant(streams[0].clone());
        let pre = tape.linear(z, p[u.encode[0]], None).unwrap();
        let h = tape.tanh(pre).unwrap();
        assert!(c.max_abs_diff(tape.value(h)).unwrap() < 1e-6);
    }

    #[test]
    fn wrong_stream_count_or_width() {
        let (store, u) = unit(&[2, 3], 4, 0);
        let mut tape = Tape::new();
        let p = store.bind(&mut tape, false);
        let a = tape.constant(Tensor::zeros([1, 2]));
        let b = tape.constant(Tensor::zeros([1, 2]));
        assert!(matches!(u.forward(&mut tape, &p, &[a]), Err(Error::Dimension { .. })));
        assert!(matches!(u.forward(&mut tape, &p, &[a, b]), Err(Error::Dimension { .. })));
    }

    #[test]
    fn pair_form_matches_general_form() {
        let (store, u) = unit(&[4, 4], 4, 6);
        let streams = random_streams(&[4, 4], 3, 7);
        let mut tape = Tape::new();
        let p = store.bind(&mut tape, false);
        let a = tape.constant(streams[0].clone());
        let b = tape.constant(streams[1].clone());
        let general = u.forward(&mut tape, &p, &[a, b]).unwrap().fused;
        let pair = u.forward_pair(&mut tape, &p, a, b).unwrap().fused;
        assert!(tape.value(general).bit_eq(tape.value(pair)));

        let (_, three) = unit(&[4, 4, 4], 4, 6);
        assert!(three.forward_pair(&mut tape, &p, a, b).is_err());
    }

    #[test]
    fn gate_activation_layout() {
        let (mut store, u) = unit(&[2, 3, 1], 4, 8);
        zero_all(&mut store);
        let streams = random_streams(&[2, 3, 1], 2, 9);
        let mut tape = Tape::new();
        let p = store.bind(&mut tape, false);
        let vars: Vec<Var> = streams.iter().map(|s| tape.constant(s.clone())).collect();
        let g = u.gate_activations(&mut tape, &p, &vars).unwrap();
        assert_eq!(g.shape(), &[2, 3, 4]);
        assert!(g.data().iter().all(|&v| v == 0.5));
    }

    /// Reorders streams and every per-stream weight, including the column
    /// blocks of each gate matrix.
    fn permute(store: &ParamStore, u: &GatedFusionUnit, perm: &[usize]) -> (ParamStore, GatedFusionUnit) {
        let dims: Vec<usize> = perm.iter().map(|&i| u.dims[i]).collect();
        let (mut out, v) = unit(&dims, u.fused, 0);
        for (new, &old) in perm.iter().enumerate() {
            *out.get_mut(v.encode[new]) = store.get(u.encode[old]).clone();
            *out.get_mut(v.gate_bias[new]) = store.get(u.gate_bias[old]).clone();
            let src = store.get(u.gate[old]);
            let total = src.shape()[1];
            let mut data = Vec::with_capacity(src.numel());
            for row in src.data().chunks(total) {
                for &m in perm {
                    data.extend_from_slice(&row[u.offsets[m]..u.offsets[m] + u.dims[m]]);
                }
            }
            *out.get_mut(v.gate[new]) = Tensor::matrix(u.fused, total, data).unwrap();
        }
        (out, v)
    }

    proptest! {
        #[test]
        fn co_permutation_is_bit_identical(seed in 0u64..1000, m in 2usize..5) {
            let dims: Vec<usize> = (0..m).map(|i| 1 + (i + seed as usize) % 3).collect();
            let (store, u) = unit(&dims, 3, seed);
            let streams = random_streams(&dims, 2, seed + 1);
            let mut perm: Vec<usize> = (0..m).collect();
            perm.rotate_left(1 + seed as usize % (m - 1));
            perm.swap(0, m - 1);
            let (pstore, pu) = permute(&store, &u, &perm);
            let pstreams: Vec<Tensor> = perm.iter().map(|&i| streams[i].clone()).collect();
            let (c, _) = run(&store, &u, &streams);
            let (pc, _) = run(&pstore, &pu, &pstreams);
            prop_assert!(c.bit_eq(&pc));
        }

        #[test]
        fn output_and_gates_stay_in_range(seed in 0u64..1000, m in 1usize..5) {
            let dims = vec![3; m];
            let (store, u) = unit(&dims, 4, seed);
            let streams = random_streams(&dims, 2, seed);
            let (c, gates) = run(&store, &u, &streams);
            prop_assert!(c.data().iter().all(|v| v.abs() < m as f64));
            for g in gates {
                prop_assert!(g.data().iter().all(|&v| v > 0.0 && v < 1.0));
            }
        }
    }

    #[test]
    fn every_gate_reads_every_stream() {
        let dims = [2, 3, 2];
        let (store, u) = unit(&dims, 3, 10);
        let streams = random_streams(&dims, 1, 11);
        for n in 0..dims.len() {
            let mut tape = Tape::new();
            let p = store.bind(&mut tape, false);
            let vars: Vec<Var> = streams.iter().map(|s| tape.param(s.clone())).collect();
            let out = u.forward(&mut tape, &p, &vars).unwrap();
            let loss = tape.sum(out.gates[n], None).unwrap();
            tape.backward(loss).unwrap();
            for (j, &v) in vars.iter().enumerate() {
                let g = tape.grad(v).unwrap();
                assert!(g.max_abs() > 0.0, "gate {n} ignores stream {j}");
            }
        }
    }

    fn gradient_check(dims: &[usize], seed: u64) {
        let (store, u) = unit(dims, 3, seed);
        let mut params = store.tensors().to_vec();
        let np = params.len();
        params.extend(random_streams(dims, 2, seed + 100));
        let report = finite_diff_check(
            |tape, vars| {
                let bound = Bound::from_vars(vars[..np].to_vec());
                let out = u.forward(tape, &bound, &vars[np..])?;
                tape.sum(out.fused, None)
            },
            &params,
            1e-6,
            1e-5,
        )
        .unwrap();
        assert!(report.passed(), "{dims:?}: {report:?}");
    }

    #[test]
    fn gradients_match_finite_differences() {
        gradient_check(&[3], 1);
        gradient_check(&[2, 4], 2);
        gradient_check(&[2, 2, 3], 3);
        gradient_check(&[1, 2, 3, 2], 4);
    }
}
