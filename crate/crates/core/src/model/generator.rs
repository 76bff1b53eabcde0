use rand::Rng;

use super::{Batch, Fusion, ModelConfig};
use crate::error::{Error, Result};
use crate::nn::{Activation, Bound, DenseLayer, LstmCell, ParamStore};
use crate::tensor::{Tape, Tensor, Var};

/// Which pieces a generator is built from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GeneratorLayout {
    pub use_scene: bool,
    pub gated: bool,
    /// Adds a softmax classifier over the code for plain supervised training.
    pub supervised: bool,
}

/// Maps person and scene sequences plus noise to an action code.
///
/// One LSTM per person slot and, when used, one for the scene. Their final
/// hidden states are fused in slot order (persons `0..N`, then scene) and
/// `code = sigmoid(Dense([C, z]))`.
#[derive(Clone, Debug)]
pub struct Generator {
    pub store: ParamStore,
    pub persons: Vec<LstmCell>,
    pub scene: Option<LstmCell>,
    pub fusion: Fusion,
    pub output: DenseLayer,
    pub classifier: Option<DenseLayer>,
    pub layout: GeneratorLayout,
    z_dim: usize,
    classes: usize,
}

#[derive(Clone, Debug)]
pub struct GenOutput {
    /// `[B×k]` in `(0, 1)`.
    pub code: Var,
    /// `[B×k]`, only for supervised layouts.
    pub class_probs: Option<Var>,
    /// One `[B×fused]` gate per stream, only for gated fusion.
    pub gates: Option<Vec<Var>>,
}

impl Generator {
    pub fn new<R: Rng + ?Sized>(cfg: &ModelConfig, layout: GeneratorLayout, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let mut store = ParamStore::new();
        let persons = (0..cfg.agents)
            .map(|n| LstmCell::new(&mut store, &format!("person{n}"), cfg.features, cfg.hidden, rng))
            .collect();
        let scene = layout
            .use_scene
            .then(|| LstmCell::new(&mut store, "scene", cfg.features, cfg.hidden, rng));
        let streams = cfg.agents + usize::from(layout.use_scene);
        let fusion = Fusion::new(
            &mut store,
            "fusion",
            &vec![cfg.hidden; streams],
            cfg.fused,
            layout.gated,
            rng,
        )?;
        let output = DenseLayer::new(
            &mut store,
            "output",
            cfg.fused + cfg.z_dim,
            cfg.classes,
            Activation::Sigmoid,
            rng,
        );
        let classifier = layout.supervised.then(|| {
            DenseLayer::new(&mut store, "classifier", cfg.classes, cfg.classes, Activation::Softmax, rng)
        });
        Ok(Self {
            store,
            persons,
            scene,
            fusion,
            output,
            classifier,
            layout,
            z_dim: cfg.z_dim,
            classes: cfg.classes,
        })
    }

    pub fn z_dim(&self) -> usize {
        self.z_dim
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    /// Number of fused streams: `N`, plus one with the scene.
    pub fn streams(&self) -> usize {
        self.persons.len() + usize::from(self.scene.is_some())
    }

    /// `z` is `[B×z_dim]`.
    pub fn forward(&self, tape: &mut Tape, p: &Bound, batch: &Batch, z: &Tensor) -> Result<GenOutput> {
        if batch.slots() != self.persons.len() {
            return Err(Error::dim(
                "generator",
                format!("{} person slots for a generator with {}", batch.slots(), self.persons.len()),
            ));
        }
        if z.shape() != [batch.len(), self.z_dim] {
            return Err(Error::dim(
                "generator",
                format!("noise {:?}, expected [{}, {}]", z.shape(), batch.len(), self.z_dim),
            ));
        }
        let mut streams = Vec::with_capacity(self.streams());
        for (n, cell) in self.persons.iter().enumerate() {
            let seq = batch.person_vars(tape, n);
            streams.push(cell.encode(tape, p, &seq)?);
        }
        if let Some(cell) = &self.scene {
            let seq = batch.scene_vars(tape);
            streams.push(cell.encode(tape, p, &seq)?);
        }
        let (fused, gates) = self.fusion.forward(tape, p, &streams)?;
        let z = tape.constant(z.clone());
        let with_noise = tape.concat(&[fused, z], 1)?;
        let code = self.output.forward(tape, p, with_noise)?;
        let class_probs = match &self.classifier {
            Some(layer) => Some(layer.forward(tape, p, code)?),
            None => None,
        };
        Ok(GenOutput {
            code,
            class_probs,
            gates,
        })
    }
}
