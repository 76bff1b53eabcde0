use rand::Rng;

use super::{Fusion, ModelConfig};
use crate::error::{Error, Result};
use crate::nn::{Activation, Bound, DenseLayer, LstmCell, ParamStore};
use crate::tensor::{Tape, Var};

/// Scores (scene, code) pairs as real or generated and classifies them.
///
/// Sees only the scene sequence, never the person streams. The code is
/// embedded by a dense layer and fused with the scene LSTM's final state;
/// both heads read the fused vector.
#[derive(Clone, Debug)]
pub struct Discriminator {
    pub store: ParamStore,
    pub scene: LstmCell,
    pub code_embed: DenseLayer,
    pub fusion: Fusion,
    pub adversarial: DenseLayer,
    pub classifier: DenseLayer,
}

#[derive(Clone, Debug)]
pub struct DiscOutput {
    /// `[B×1]` probability that the code is a ground-truth one.
    pub p_real: Var,
    /// `[B×k]`.
    pub class_probs: Var,
    pub gates: Option<Vec<Var>>,
}

impl Discriminator {
    pub fn new<R: Rng + ?Sized>(cfg: &ModelConfig, gated: bool, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let mut store = ParamStore::new();
        let scene = LstmCell::new(&mut store, "scene", cfg.features, cfg.hidden, rng);
        let code_embed = DenseLayer::new(
            &mut store,
            "code_embed",
            cfg.classes,
            cfg.hidden,
            Activation::Tanh,
            rng,
        );
        let fusion = Fusion::new(&mut store, "fusion", &[cfg.hidden, cfg.hidden], cfg.fused, gated, rng)?;
        let adversarial = DenseLayer::new(&mut store, "adversarial", cfg.fused, 1, Activation::Sigmoid, rng);
        let classifier = DenseLayer::new(
            &mut store,
            "classifier",
            cfg.fused,
            cfg.classes,
            Activation::Softmax,
            rng,
        );
        Ok(Self {
            store,
            scene,
            code_embed,
            fusion,
            adversarial,
            classifier,
        })
    }

    /// `scene[t]` is `[B×d]`, `code` is `[B×k]` in internal form.
    pub fn forward(&self, tape: &mut Tape, p: &Bound, scene: &[Var], code: Var) -> Result<DiscOutput> {
        let batch = scene
            .first()
            .map(|&s| tape.shape(s)[0])
            .ok_or_else(|| Error::contract("discriminator needs a non-empty scene"))?;
        if tape.shape(code).first() != Some(&batch) {
            return Err(Error::dim(
                "discriminator",
                format!("code {:?} for a batch of {batch}", tape.shape(code)),
            ));
        }
        let scene_state = self.scene.encode(tape, p, scene)?;
        let code_state = self.code_embed.forward(tape, p, code)?;
        let (fused, gates) = self.fusion.forward(tape, p, &[code_state, scene_state])?;
        let p_real = self.adversarial.forward(tape, p, fused)?;
        let class_probs = self.classifier.forward(tape, p, fused)?;
        Ok(DiscOutput {
            p_real,
            class_probs,
            gates,
        })
    }
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::model::ModelHyper;
    use crate::tensor::Tensor;

    fn disc(seed: u64) -> Discriminator {
        let cfg = ModelConfig::new(2, 3, 2, 4, ModelHyper { hidden: 3, z_dim: 1, fused: Some(3) });
        Discriminator::new(&cfg, true, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    fn run(d: &Discriminator, seed: u64) -> (Tensor, Tensor) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut tape = Tape::new();
        let p = d.store.bind(&mut tape, false);
        let scene: Vec<Var> = (0..3)
            .map(|_| {
                let data = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
                tape.constant(Tensor::matrix(2, 2, data).unwrap())
            })
            .collect();
        let code_data = (0..8).map(|_| rng.random_range(0.0..1.0)).collect();
        let code = tape.constant(Tensor::matrix(2, 4, code_data).unwrap());
        let out = d.forward(&mut tape, &p, &scene, code).unwrap();
        (tape.value(out.p_real).clone(), tape.value(out.class_probs).clone())
    }

    #[test]
    fn zero_params_are_uninformative() {
        let mut d = disc(0);
        let zeros = d
            .store
            .tensors()
            .iter()
            .map(|t| Tensor::zeros(t.shape().to_vec()))
            .collect();
        d.store.set_tensors(zeros).unwrap();
        let (p_real, probs) = run(&d, 1);
        assert!(p_real.data().iter().all(|&v| v == 0.5));
        assert!(probs.data().iter().all(|&v| v == 0.25));
    }

    #[test]
    fn class_probs_sum_to_one() {
        for seed in 0..10 {
            let (p_real, probs) = run(&disc(seed), seed + 50);
            assert!(p_real.data().iter().all(|&v| v > 0.0 && v < 1.0));
            for row in probs.data().chunks(4) {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }
    }
}
