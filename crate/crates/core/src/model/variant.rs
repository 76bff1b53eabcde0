use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{Batch, Discriminator, Generator, GeneratorLayout, ModelConfig};
use crate::codes::decode;
use crate::error::{Error, Result};
use crate::nn::Checkpoint;
use crate::seed::substream;
use crate::tensor::{Tape, Tensor};

/// The full model and its five ablations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Gated fusion over persons and scene, adversarial training.
    MlsGan,
    /// Concatenation instead of gated fusion, supervised only.
    GGfuAblated,
    /// Gated fusion, supervised only.
    GSupervised,
    /// Concatenation, persons only in the generator, adversarial.
    CganNoGfuNoScene,
    /// Concatenation with the scene stream, adversarial.
    CganGfu,
    /// Gated fusion over persons only, adversarial.
    MlsGanNoScene,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::MlsGan,
        Variant::GGfuAblated,
        Variant::GSupervised,
        Variant::CganNoGfuNoScene,
        Variant::CganGfu,
        Variant::MlsGanNoScene,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::MlsGan => "mls_gan",
            Variant::GGfuAblated => "g_gfu_ablated",
            Variant::GSupervised => "g_supervised",
            Variant::CganNoGfuNoScene => "cgan_no_gfu_no_scene",
            Variant::CganGfu => "cgan_gfu",
            Variant::MlsGanNoScene => "mls_gan_no_scene",
        }
    }

    pub fn is_adversarial(self) -> bool {
        !matches!(self, Variant::GGfuAblated | Variant::GSupervised)
    }

    pub fn is_gated(self) -> bool {
        matches!(self, Variant::MlsGan | Variant::GSupervised | Variant::MlsGanNoScene)
    }

    pub fn generator_layout(self) -> GeneratorLayout {
        GeneratorLayout {
            use_scene: !matches!(self, Variant::CganNoGfuNoScene | Variant::MlsGanNoScene),
            gated: self.is_gated(),
            supervised: !self.is_adversarial(),
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| {
                let known: Vec<_> = Variant::ALL.iter().map(|v| v.name()).collect();
                Error::contract(format!("unknown variant {s:?}; expected one of {}", known.join(", ")))
            })
    }
}

/// A generator, plus a discriminator for the adversarial variants.
#[derive(Clone, Debug)]
pub struct Model {
    pub variant: Variant,
    pub config: ModelConfig,
    pub generator: Generator,
    pub discriminator: Option<Discriminator>,
}

/// Wires up `variant`, drawing initial weights from the seed's `init`
/// stream.
pub fn build_variant(variant: Variant, config: ModelConfig, seed: u64) -> Result<Model> {
    let mut rng = substream(seed, "init", 0);
    let generator = Generator::new(&config, variant.generator_layout(), &mut rng)?;
    let discriminator = if variant.is_adversarial() {
        // The concatenation ablations drop gated fusion from both players.
        Some(Discriminator::new(&config, variant.is_gated(), &mut rng)?)
    } else {
        None
    };
    Ok(Model {
        variant,
        config,
        generator,
        discriminator,
    })
}

impl Model {
    /// Class probabilities `[B×k]` for `batch` given noise `z [B×z_dim]`.
    pub fn class_probs(&self, batch: &Batch, z: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let gp = self.generator.store.bind(&mut tape, false);
        let g = self.generator.forward(&mut tape, &gp, batch, z)?;
        let probs = match (&g.class_probs, &self.discriminator) {
            (Some(probs), _) => *probs,
            (None, Some(d)) => {
                let dp = d.store.bind(&mut tape, false);
                let scene = batch.scene_vars(&mut tape);
                d.forward(&mut tape, &dp, &scene, g.code)?.class_probs
            }
            (None, None) => {
                return Err(Error::contract(format!(
                    "{} model has neither a classifier nor a discriminator",
                    self.variant
                )))
            }
        };
        Ok(tape.value(probs).clone())
    }

    /// Deterministic predictions with `z = 0`, or the argmax of class
    /// probabilities averaged over `z_samples` standard-normal draws.
    pub fn classify(&self, batch: &Batch, z_samples: usize, seed: u64) -> Result<Vec<usize>> {
        let (b, z_dim, k) = (batch.len(), self.generator.z_dim(), self.config.classes);
        let probs = if z_samples == 0 {
            self.class_probs(batch, &Tensor::zeros([b, z_dim]))?
        } else {
            use rand_distr::{Distribution, StandardNormal};
            let mut rng = substream(seed, "eval_z", 0);
            let mut acc = vec![0.0; b * k];
            for _ in 0..z_samples {
                let z: Vec<f64> = (0..b * z_dim).map(|_| StandardNormal.sample(&mut rng)).collect();
                let p = self.class_probs(batch, &Tensor::matrix(b, z_dim, z)?)?;
                acc.iter_mut().zip(p.data()).for_each(|(a, v)| *a += v);
            }
            Tensor::matrix(b, k, acc)?
        };
        Ok(probs.data().chunks(k).map(decode).collect())
    }

    /// Generated codes `[B×k]` (internal form) with `z = 0`.
    pub fn codes(&self, batch: &Batch) -> Result<Tensor> {
        let mut tape = Tape::new();
        let gp = self.generator.store.bind(&mut tape, false);
        let z = Tensor::zeros([batch.len(), self.generator.z_dim()]);
        let g = self.generator.forward(&mut tape, &gp, batch, &z)?;
        Ok(tape.value(g.code).clone())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ckpt = Checkpoint::new();
        ckpt.set_meta("variant", self.variant);
        for (k, v) in self.config.to_pairs() {
            ckpt.set_meta(k, v);
        }
        ckpt.push_store("generator.", &self.generator.store);
        if let Some(d) = &self.discriminator {
            ckpt.push_store("discriminator.", &d.store);
        }
        ckpt
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let variant: Variant = ckpt
            .meta("variant")
            .ok_or_else(|| Error::Format("checkpoint lacks a variant".into()))?
            .parse()
            .map_err(|e: Error| Error::Format(e.to_string()))?;
        let config = ModelConfig {
            agents: ckpt.meta_parse("agents")?,
            steps: ckpt.meta_parse("steps")?,
            features: ckpt.meta_parse("features")?,
            classes: ckpt.meta_parse("classes")?,
            hidden: ckpt.meta_parse("hidden")?,
            z_dim: ckpt.meta_parse("z_dim")?,
            fused: ckpt.meta_parse("fused")?,
        };
        let mut model = build_variant(variant, config, 0)?;
        ckpt.load_store("generator.", &mut model.generator.store)?;
        if let Some(d) = &mut model.discriminator {
            ckpt.load_store("discriminator.", &mut d.store)?;
        }
        Ok(model)
    }
}
