use serde::{Deserialize, Serialize};

use super::{Confusion, EpochRecord, MetricsReport};
use crate::data::{Dataset, SceneSample};
use crate::error::{Error, Result};
use crate::model::{Batch, Model};
use crate::nn::{categorical_ce_loss, Activation, Adam, DenseLayer, LrSchedule, ParamStore};
use crate::seed::substream;
use crate::tensor::{Tape, Tensor};
use rand::seq::SliceRandom;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 32,
            learning_rate: 1e-2,
            seed: 0,
        }
    }
}

pub struct ProbeOutcome {
    pub report: MetricsReport,
    /// The softmax layer's parameters.
    pub store: ParamStore,
}

fn codes_of(model: &Model, ds: &Dataset) -> Result<Tensor> {
    let k = model.config.classes;
    let mut data = Vec::with_capacity(ds.len() * k);
    for chunk in ds.samples.chunks(256) {
        let refs: Vec<&SceneSample> = chunk.iter().collect();
        data.extend_from_slice(model.codes(&Batch::from_samples(&refs)?)?.data());
    }
    Tensor::matrix(ds.len(), k, data)
}

fn rows(codes: &Tensor, idx: &[usize]) -> Result<Tensor> {
    let k = codes.shape()[1];
    let data = idx.iter().flat_map(|&i| codes.data()[i * k..(i + 1) * k].iter().copied()).collect();
    Tensor::matrix(idx.len(), k, data)
}

/// Trains a single softmax layer on the generator's codes (`z = 0`) for
/// `train` and scores it on `test`. Every weight of `model` stays fixed;
/// the call fails if the generator's fingerprint moves.
pub fn probe_codes(model: &Model, train: &Dataset, test: &Dataset, cfg: &ProbeConfig) -> Result<ProbeOutcome> {
    if train.is_empty() || test.is_empty() {
        return Err(Error::contract("probe needs non-empty train and test sets"));
    }
    if cfg.epochs == 0 || cfg.batch_size == 0 {
        return Err(Error::Config("probe epochs and batch_size must be positive".into()));
    }
    let before = model.generator.store.fingerprint();
    let k = model.config.classes;
    let train_codes = codes_of(model, train)?;
    let test_codes = codes_of(model, test)?;
    let labels = train.labels();

    let mut store = ParamStore::new();
    let layer = DenseLayer::new(
        &mut store,
        "probe",
        k,
        k,
        Activation::Softmax,
        &mut substream(cfg.seed, "probe_init", 0),
    );
    let mut opt = Adam::new(&store, LrSchedule::scaled(cfg.learning_rate, cfg.epochs));
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut substream(cfg.seed, "probe_shuffle", epoch as u64));
        let (mut sum, mut batches) = (0.0, 0);
        for idx in order.chunks(cfg.batch_size) {
            let mut tape = Tape::new();
            let p = store.bind(&mut tape, true);
            let x = tape.constant(rows(&train_codes, idx)?);
            let probs = layer.forward(&mut tape, &p, x)?;
            let batch_labels: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
            let loss = categorical_ce_loss(&mut tape, probs, &batch_labels)?;
            sum += tape.value(loss).item()?;
            batches += 1;
            tape.backward(loss)?;
            let grads = store.grads(&tape, &p);
            opt.step(&mut store, &grads, epoch)?;
        }
        history.push(EpochRecord {
            epoch,
            d_loss: None,
            g_loss: sum / batches as f64,
            mca: None,
            mpca: None,
        });
    }

    let mut tape = Tape::new();
    let p = store.bind(&mut tape, false);
    let x = tape.constant(test_codes);
    let probs = layer.forward(&mut tape, &p, x)?;
    let predicted: Vec<usize> = tape.value(probs).data().chunks(k).map(crate::codes::decode).collect();
    let confusion = Confusion::from_predictions(&test.labels(), &predicted, k)?;

    if model.generator.store.fingerprint() != before {
        return Err(Error::contract("probe training changed generator weights"));
    }
    Ok(ProbeOutcome {
        report: MetricsReport::new(confusion, history),
        store,
    })
}
