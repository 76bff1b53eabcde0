use crate::data::SceneSample;
use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

/// Samples regrouped time-major for batched recurrence.
#[derive(Clone, Debug)]
pub struct Batch {
    /// `persons[slot][t]` is `[B×d]`.
    pub persons: Vec<Vec<Tensor>>,
    /// `scene[t]` is `[B×d]`.
    pub scene: Vec<Tensor>,
    /// `presence[b][slot]`.
    pub presence: Vec<Vec<bool>>,
    pub labels: Vec<usize>,
}

fn stack_step(seqs: &[&Tensor], t: usize) -> Result<Tensor> {
    let d = seqs[0].shape()[1];
    let mut data = Vec::with_capacity(seqs.len() * d);
    for s in seqs {
        data.extend_from_slice(s.row(t));
    }
    Tensor::matrix(seqs.len(), d, data)
}

impl Batch {
    pub fn from_samples(samples: &[&SceneSample]) -> Result<Self> {
        let first = samples
            .first()
            .ok_or_else(|| Error::contract("empty batch"))?;
        let slots = first.persons.len();
        let shape = first.scene.shape().to_vec();
        if shape.len() != 2 {
            return Err(Error::dim("batch", format!("scene shape {shape:?}")));
        }
        for s in samples {
            if s.persons.len() != slots
                || s.scene.shape() != shape.as_slice()
                || s.persons.iter().any(|p| p.shape() != shape.as_slice())
            {
                return Err(Error::dim("batch", "samples disagree on N, T or d"));
            }
        }
        let steps = shape[0];
        let persons = (0..slots)
            .map(|n| {
                let seqs: Vec<&Tensor> = samples.iter().map(|s| &s.persons[n]).collect();
                (0..steps).map(|t| stack_step(&seqs, t)).collect()
            })
            .collect::<Result<_>>()?;
        let scenes: Vec<&Tensor> = samples.iter().map(|s| &s.scene).collect();
        let scene = (0..steps)
            .map(|t| stack_step(&scenes, t))
            .collect::<Result<_>>()?;
        Ok(Self {
            persons,
            scene,
            presence: samples.iter().map(|s| s.presence.clone()).collect(),
            labels: samples.iter().map(|s| s.label).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn slots(&self) -> usize {
        self.persons.len()
    }

    pub fn steps(&self) -> usize {
        self.scene.len()
    }

    pub fn scene_vars(&self, tape: &mut Tape) -> Vec<Var> {
        self.scene.iter().map(|t| tape.constant(t.clone())).collect()
    }

    pub fn person_vars(&self, tape: &mut Tape, slot: usize) -> Vec<Var> {
        self.persons[slot]
            .iter()
            .map(|t| tape.constant(t.clone()))
            .collect()
    }
}
