//! Generator, discriminator, their losses and the variant assemblies.

mod batch;
mod discriminator;
mod generator;
mod losses;
mod variant;

pub use batch::Batch;
pub use discriminator::{DiscOutput, Discriminator};
pub use generator::{GenOutput, Generator, GeneratorLayout};
pub use losses::{d_loss, g_loss, GLossOptions};
pub use variant::{build_variant, Model, Variant};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::GatedFusionUnit;
use crate::nn::{Activation, Bound, DenseLayer, ParamStore};
use crate::tensor::{Tape, Var};

/// Architecture of one model. The first four fields come from the data.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Person slots `N`.
    pub agents: usize,
    /// Sequence length `T`.
    pub steps: usize,
    /// Feature width `d`.
    pub features: usize,
    /// Group classes `k`.
    pub classes: usize,
    pub hidden: usize,
    pub z_dim: usize,
    pub fused: usize,
}

/// The architecture knobs not fixed by the data.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelHyper {
    pub hidden: usize,
    pub z_dim: usize,
    /// Defaults to `hidden`.
    pub fused: Option<usize>,
}

impl Default for ModelHyper {
    fn default() -> Self {
        Self {
            hidden: 300,
            z_dim: 16,
            fused: None,
        }
    }
}

impl ModelConfig {
    pub fn new(agents: usize, steps: usize, features: usize, classes: usize, hyper: ModelHyper) -> Self {
        Self {
            agents,
            steps,
            features,
            classes,
            hidden: hyper.hidden,
            z_dim: hyper.z_dim,
            fused: hyper.fused.unwrap_or(hyper.hidden),
        }
    }

    pub fn for_dataset(ds: &crate::data::Dataset, hyper: ModelHyper) -> Self {
        Self::new(ds.agents, ds.steps, ds.features, ds.classes, hyper)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("agents", self.agents),
            ("steps", self.steps),
            ("features", self.features),
            ("classes", self.classes),
            ("hidden", self.hidden),
            ("fused", self.fused),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("model {name} must be positive")));
            }
        }
        Ok(())
    }

    /// Key/value pairs for checkpoint headers.
    pub fn to_pairs(&self) -> Vec<(&'static str, usize)> {
        vec![
            ("agents", self.agents),
            ("steps", self.steps),
            ("features", self.features),
            ("classes", self.classes),
            ("hidden", self.hidden),
            ("z_dim", self.z_dim),
            ("fused", self.fused),
        ]
    }
}

/// Stream fusion: the gated unit or the plain concatenate-and-project
/// baseline used by the ablations.
#[derive(Clone, Debug)]
pub enum Fusion {
    Gated(GatedFusionUnit),
    Concat(DenseLayer),
}

impl Fusion {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        dims: &[usize],
        fused: usize,
        gated: bool,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(if gated {
            Fusion::Gated(GatedFusionUnit::new(store, name, dims, fused, rng)?)
        } else {
            let total = dims.iter().sum();
            Fusion::Concat(DenseLayer::new(store, name, total, fused, Activation::Tanh, rng))
        })
    }

    pub fn is_gated(&self) -> bool {
        matches!(self, Fusion::Gated(_))
    }

    /// Fused `[B×fused]` and, for the gated unit, one gate tensor per stream.
    pub fn forward(&self, tape: &mut Tape, p: &Bound, streams: &[Var]) -> Result<(Var, Option<Vec<Var>>)> {
        match self {
            Fusion::Gated(unit) => {
                let out = unit.forward(tape, p, streams)?;
                Ok((out.fused, Some(out.gates)))
            }
            Fusion::Concat(layer) => {
                let joined = tape.concat(streams, 1)?;
                Ok((layer.forward(tape, p, joined)?, None))
            }
        }
    }
}
