use std::fmt::Write as _;

use crate::data::{Dataset, SceneSample};
use crate::error::{Error, Result};
use crate::model::{Batch, Model};
use crate::tensor::{Tape, Tensor};

/// Mean generator gate activation for one stream slot, split by whether
/// the slot held a real agent or dummy padding.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SlotGates {
    /// `person{n}` or `scene`.
    pub name: String,
    real_sum: f64,
    pub real_count: usize,
    dummy_sum: f64,
    pub dummy_count: usize,
}

impl SlotGates {
    pub fn real_mean(&self) -> Option<f64> {
        (self.real_count > 0).then(|| self.real_sum / self.real_count as f64)
    }

    pub fn dummy_mean(&self) -> Option<f64> {
        (self.dummy_count > 0).then(|| self.dummy_sum / self.dummy_count as f64)
    }

    /// Mean over every sample regardless of presence.
    pub fn mean(&self) -> Option<f64> {
        let n = self.real_count + self.dummy_count;
        (n > 0).then(|| (self.real_sum + self.dummy_sum) / n as f64)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GateReport {
    /// Person slots in order, then the scene slot if the generator has one.
    pub slots: Vec<SlotGates>,
}

impl GateReport {
    /// Person-slot gate means pooled over all slots: `(real, dummy)`.
    pub fn pooled(&self) -> (Option<f64>, Option<f64>) {
        let persons = self.slots.iter().filter(|s| s.name != "scene");
        let (mut rs, mut rc, mut ds, mut dc) = (0.0, 0, 0.0, 0);
        for s in persons {
            rs += s.real_sum;
            rc += s.real_count;
            ds += s.dummy_sum;
            dc += s.dummy_count;
        }
        ((rc > 0).then(|| rs / rc as f64), (dc > 0).then(|| ds / dc as f64))
    }

    pub fn to_text(&self) -> String {
        let fmt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{v:.6}"));
        let mut out = String::from("slot real_mean real_count dummy_mean dummy_count\n");
        for s in &self.slots {
            let _ = writeln!(
                out,
                "{} {} {} {} {}",
                s.name,
                fmt(s.real_mean()),
                s.real_count,
                fmt(s.dummy_mean()),
                s.dummy_count
            );
        }
        out
    }
}

/// Averages the generator's gate activations (`z = 0`) over `ds`, per slot
/// and per presence state. Each sample contributes the mean over the fused
/// dimensions of its gate vector.
pub fn gate_attention_report(model: &Model, ds: &Dataset) -> Result<GateReport> {
    let g = &model.generator;
    if !g.fusion.is_gated() {
        return Err(Error::contract(format!("{} has no gated fusion", model.variant)));
    }
    let persons = g.persons.len();
    let mut slots: Vec<SlotGates> = (0..persons)
        .map(|n| SlotGates {
            name: format!("person{n}"),
            ..Default::default()
        })
        .collect();
    if g.scene.is_some() {
        slots.push(SlotGates {
            name: "scene".into(),
            ..Default::default()
        });
    }
    for chunk in ds.samples.chunks(256) {
        let refs: Vec<&SceneSample> = chunk.iter().collect();
        let batch = Batch::from_samples(&refs)?;
        let mut tape = Tape::new();
        let p = g.store.bind(&mut tape, false);
        let z = Tensor::zeros([batch.len(), g.z_dim()]);
        let out = g.forward(&mut tape, &p, &batch, &z)?;
        let gates = out.gates.expect("gated fusion reports gates");
        for (i, (slot, gate)) in slots.iter_mut().zip(gates).enumerate() {
            let value = tape.value(gate);
            let width = value.shape()[1];
            for (b, row) in value.data().chunks(width).enumerate() {
                let mean = row.iter().sum::<f64>() / width as f64;
                if i >= persons || batch.presence[b][i] {
                    slot.real_sum += mean;
                    slot.real_count += 1;
                } else {
                    slot.dummy_sum += mean;
                    slot.dummy_count += 1;
                }
            }
        }
    }
    Ok(GateReport { slots })
}
