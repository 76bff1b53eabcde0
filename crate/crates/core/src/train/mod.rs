//! Alternating adversarial training, supervised baselines, evaluation,
//! the frozen-generator probe and the gate attention report.

mod gates;
mod metrics;
mod probe;

pub use gates::{gate_attention_report, GateReport, SlotGates};
pub use metrics::{history_csv, mca, mpca, Confusion, EpochRecord, MetricsReport, CSV_HEADER};
pub use probe::{probe_codes, ProbeConfig, ProbeOutcome};

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::codes::ground_truth_internal;
use crate::data::{Dataset, SceneSample};
use crate::error::{Error, Result};
use crate::model::{build_variant, d_loss, g_loss, Batch, GLossOptions, Model, ModelConfig, Variant};
use crate::nn::{categorical_ce_loss, Adam, Checkpoint, LrSchedule, ParamStore};
use crate::seed::{substream, Rng};
use crate::tensor::{Tape, Tensor};

/// Samples per forward pass during evaluation.
const EVAL_CHUNK: usize = 256;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub variant: Variant,
    pub epochs: usize,
    /// Even, so discriminator batches split into equal real and fake halves.
    pub batch_size: usize,
    pub lambda_c: f64,
    /// Starting rate of the default schedule, which drops tenfold after the
    /// first quarter of `epochs`.
    pub learning_rate: f64,
    /// Explicit two-phase schedule; overrides `learning_rate`.
    pub schedule: Option<LrSchedule>,
    pub seed: u64,
    /// Evaluate on the test split every this many epochs (0: last epoch only).
    pub eval_every: usize,
    pub non_saturating: bool,
    /// Give the generator the classification term too.
    pub g_class_term: bool,
    /// 0 classifies with `z = 0`; otherwise class probabilities are
    /// averaged over this many noise draws.
    pub z_samples: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            variant: Variant::MlsGan,
            epochs: 50,
            batch_size: 32,
            lambda_c: 2.5,
            learning_rate: 1e-3,
            schedule: None,
            seed: 0,
            eval_every: 1,
            non_saturating: true,
            g_class_term: true,
            z_samples: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.batch_size < 2 || self.batch_size % 2 != 0 {
            return fail(format!("batch_size ({}) must be even and at least 2", self.batch_size));
        }
        if self.epochs == 0 {
            return fail("epochs must be positive".into());
        }
        if !(self.lambda_c >= 0.0 && self.lambda_c.is_finite()) {
            return fail(format!("lambda_c ({}) must be finite and >= 0", self.lambda_c));
        }
        let s = self.lr_schedule();
        if !(s.lr1 > 0.0 && s.lr2 > 0.0 && s.lr1.is_finite() && s.lr2.is_finite()) {
            return fail("learning rates must be positive and finite".into());
        }
        Ok(())
    }

    pub fn lr_schedule(&self) -> LrSchedule {
        self.schedule
            .unwrap_or_else(|| LrSchedule::scaled(self.learning_rate, self.epochs))
    }

    fn g_loss_options(&self) -> GLossOptions {
        GLossOptions {
            non_saturating: self.non_saturating,
            class_term: self.g_class_term,
        }
    }
}

/// Owns a model and its optimizers for the length of a run.
pub struct Trainer {
    pub config: TrainConfig,
    pub model: Model,
    g_opt: Adam,
    d_opt: Option<Adam>,
    epoch: usize,
    d_steps: u64,
    g_steps: u64,
}

fn numeric_context(e: Error, epoch: usize, batch: usize, head: &str) -> Error {
    match e {
        Error::NonFinite { op } => Error::NumericAbort {
            epoch,
            batch,
            detail: format!("{head}: non-finite value from {op}"),
        },
        Error::NonFiniteGradient { param } => Error::NumericAbort {
            epoch,
            batch,
            detail: format!("{head}: non-finite gradient for {param}"),
        },
        other => other,
    }
}

fn noise(rng: &mut Rng, rows: usize, cols: usize) -> Result<Tensor> {
    let data = (0..rows * cols).map(|_| StandardNormal.sample(rng)).collect();
    Tensor::matrix(rows, cols, data)
}

fn ground_truth_codes(labels: &[usize], k: usize) -> Result<Tensor> {
    let mut data = Vec::with_capacity(labels.len() * k);
    for &l in labels {
        data.extend(ground_truth_internal(l, k)?);
    }
    Tensor::matrix(labels.len(), k, data)
}

fn save_adam(ckpt: &mut Checkpoint, prefix: &str, opt: &Adam, store: &ParamStore) {
    ckpt.set_meta(&format!("{prefix}.step"), opt.steps_taken());
    let (m, v) = opt.moments();
    for ((name, _), (m, v)) in store.iter().zip(m.iter().zip(v)) {
        ckpt.push_array(format!("{prefix}.m.{name}"), m.clone());
        ckpt.push_array(format!("{prefix}.v.{name}"), v.clone());
    }
}

fn load_adam(ckpt: &Checkpoint, prefix: &str, opt: &mut Adam, store: &ParamStore) -> Result<()> {
    let step = ckpt.meta_parse(&format!("{prefix}.step"))?;
    let fetch = |kind: &str| -> Result<Vec<Tensor>> {
        store
            .iter()
            .map(|(name, _)| {
                let key = format!("{prefix}.{kind}.{name}");
                ckpt.array(&key)
                    .cloned()
                    .ok_or_else(|| Error::Format(format!("checkpoint lacks {key}")))
            })
            .collect()
    };
    opt.restore(step, fetch("m")?, fetch("v")?)
}

impl Trainer {
    pub fn new(config: TrainConfig, model_config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let model = build_variant(config.variant, model_config, config.seed)?;
        let schedule = config.lr_schedule();
        let g_opt = Adam::new(&model.generator.store, schedule);
        let d_opt = model
            .discriminator
            .as_ref()
            .map(|d| Adam::new(&d.store, schedule));
        Ok(Self {
            config,
            model,
            g_opt,
            d_opt,
            epoch: 0,
            d_steps: 0,
            g_steps: 0,
        })
    }

    /// Continues a run saved by [`Trainer::checkpoint`]. Epoch numbering
    /// picks up where the checkpoint stopped.
    pub fn resume(config: TrainConfig, ckpt: &Checkpoint) -> Result<Self> {
        config.validate()?;
        let model = Model::from_checkpoint(ckpt)?;
        if model.variant != config.variant {
            return Err(Error::Config(format!(
                "checkpoint holds {} but the config asks for {}",
                model.variant, config.variant
            )));
        }
        let mut t = Self::new(config, model.config)?;
        t.model = model;
        load_adam(ckpt, "adam.generator", &mut t.g_opt, &t.model.generator.store)?;
        if let (Some(opt), Some(d)) = (&mut t.d_opt, &t.model.discriminator) {
            load_adam(ckpt, "adam.discriminator", opt, &d.store)?;
        }
        t.epoch = ckpt.meta_parse("epoch")?;
        t.d_steps = ckpt.meta_parse("d_steps")?;
        t.g_steps = ckpt.meta_parse("g_steps")?;
        Ok(t)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let mut ckpt = self.model.to_checkpoint();
        ckpt.set_meta("epoch", self.epoch);
        ckpt.set_meta("d_steps", self.d_steps);
        ckpt.set_meta("g_steps", self.g_steps);
        ckpt.set_meta("seed", self.config.seed);
        save_adam(&mut ckpt, "adam.generator", &self.g_opt, &self.model.generator.store);
        if let (Some(opt), Some(d)) = (&self.d_opt, &self.model.discriminator) {
            save_adam(&mut ckpt, "adam.discriminator", opt, &d.store);
        }
        ckpt
    }

    /// Epochs completed so far.
    pub fn epoch(&self) -> usize {
        self.epoch
    }

    /// `(discriminator steps, generator steps)` taken so far.
    pub fn steps(&self) -> (u64, u64) {
        (self.d_steps, self.g_steps)
    }

    /// Shuffled mini-batches of sample indices for `epoch`. A trailing
    /// batch of one sample is dropped when a discriminator needs two halves.
    pub fn batch_plan(&self, samples: usize, epoch: usize) -> Vec<Vec<usize>> {
        let mut order: Vec<usize> = (0..samples).collect();
        order.shuffle(&mut substream(self.config.seed, "shuffle", epoch as u64));
        let min = if self.model.discriminator.is_some() { 2 } else { 1 };
        order
            .chunks(self.config.batch_size)
            .filter(|c| c.len() >= min)
            .map(<[usize]>::to_vec)
            .collect()
    }

    /// One discriminator update: the first half of `samples` is paired with
    /// ground-truth codes, the rest with freshly generated ones.
    pub fn d_step(&mut self, samples: &[&SceneSample], z_rng: &mut Rng, epoch: usize) -> Result<f64> {
        let (Some(d), Some(d_opt)) = (&self.model.discriminator, &mut self.d_opt) else {
            return Err(Error::contract(format!("{} has no discriminator", self.model.variant)));
        };
        let g = &self.model.generator;
        let half = samples.len() / 2;
        if half == 0 {
            return Err(Error::contract("a discriminator step needs at least two samples"));
        }
        let real = Batch::from_samples(&samples[..half])?;
        let fake = Batch::from_samples(&samples[half..])?;
        let z = noise(z_rng, fake.len(), g.z_dim())?;

        let mut tape = Tape::new();
        let gp = g.store.bind(&mut tape, false);
        let dp = d.store.bind(&mut tape, true);
        let generated = g.forward(&mut tape, &gp, &fake, &z)?;
        let truth = tape.constant(ground_truth_codes(&real.labels, g.classes())?);
        let real_scene = real.scene_vars(&mut tape);
        let on_real = d.forward(&mut tape, &dp, &real_scene, truth)?;
        let fake_scene = fake.scene_vars(&mut tape);
        let on_fake = d.forward(&mut tape, &dp, &fake_scene, generated.code)?;
        let loss = d_loss(
            &mut tape,
            on_real.p_real,
            on_fake.p_real,
            on_real.class_probs,
            &real.labels,
            self.config.lambda_c,
        )?;
        let value = tape.value(loss).item()?;
        tape.backward(loss)?;
        let grads = d.store.grads(&tape, &dp);
        let d = self.model.discriminator.as_mut().expect("checked above");
        d_opt.step(&mut d.store, &grads, epoch)?;
        self.d_steps += 1;
        Ok(value)
    }

    /// One generator update against the frozen discriminator.
    pub fn g_step(&mut self, samples: &[&SceneSample], z_rng: &mut Rng, epoch: usize) -> Result<f64> {
        let Some(d) = &self.model.discriminator else {
            return Err(Error::contract(format!("{} has no discriminator", self.model.variant)));
        };
        let g = &self.model.generator;
        let batch = Batch::from_samples(samples)?;
        let z = noise(z_rng, batch.len(), g.z_dim())?;

        let mut tape = Tape::new();
        let gp = g.store.bind(&mut tape, true);
        let dp = d.store.bind(&mut tape, false);
        let generated = g.forward(&mut tape, &gp, &batch, &z)?;
        let scene = batch.scene_vars(&mut tape);
        let judged = d.forward(&mut tape, &dp, &scene, generated.code)?;
        let loss = g_loss(
            &mut tape,
            judged.p_real,
            judged.class_probs,
            &batch.labels,
            self.config.lambda_c,
            self.config.g_loss_options(),
        )?;
        let value = tape.value(loss).item()?;
        tape.backward(loss)?;
        let grads = g.store.grads(&tape, &gp);
        self.g_opt.step(&mut self.model.generator.store, &grads, epoch)?;
        self.g_steps += 1;
        Ok(value)
    }

    /// Cross-entropy update of a supervised generator (`z = 0`).
    pub fn supervised_step(&mut self, samples: &[&SceneSample], epoch: usize) -> Result<f64> {
        let g = &self.model.generator;
        let batch = Batch::from_samples(samples)?;
        let z = Tensor::zeros([batch.len(), g.z_dim()]);
        let mut tape = Tape::new();
        let gp = g.store.bind(&mut tape, true);
        let out = g.forward(&mut tape, &gp, &batch, &z)?;
        let probs = out
            .class_probs
            .ok_or_else(|| Error::contract(format!("{} has no classifier head", self.model.variant)))?;
        let loss = categorical_ce_loss(&mut tape, probs, &batch.labels)?;
        let value = tape.value(loss).item()?;
        tape.backward(loss)?;
        let grads = g.store.grads(&tape, &gp);
        self.g_opt.step(&mut self.model.generator.store, &grads, epoch)?;
        self.g_steps += 1;
        Ok(value)
    }

    /// Trains one epoch; returns mean discriminator and generator losses.
    pub fn run_epoch(&mut self, train: &Dataset) -> Result<(Option<f64>, f64)> {
        if train.is_empty() {
            return Err(Error::contract("training set is empty"));
        }
        let epoch = self.epoch;
        let plan = self.batch_plan(train.len(), epoch);
        let mut z_rng = substream(self.config.seed, "z", epoch as u64);
        let adversarial = self.model.discriminator.is_some();
        let (mut d_sum, mut g_sum) = (0.0, 0.0);
        for (b, idx) in plan.iter().enumerate() {
            let samples: Vec<&SceneSample> = idx.iter().map(|&i| &train.samples[i]).collect();
            let (d, g) = if adversarial {
                let d = self
                    .d_step(&samples, &mut z_rng, epoch)
                    .map_err(|e| numeric_context(e, epoch, b, "discriminator"))?;
                let g = self
                    .g_step(&samples, &mut z_rng, epoch)
                    .map_err(|e| numeric_context(e, epoch, b, "generator"))?;
                (d, g)
            } else {
                let g = self
                    .supervised_step(&samples, epoch)
                    .map_err(|e| numeric_context(e, epoch, b, "classifier"))?;
                (0.0, g)
            };
            for (head, v) in [("discriminator", d), ("generator", g)] {
                if !v.is_finite() {
                    return Err(Error::NumericAbort {
                        epoch,
                        batch: b,
                        detail: format!("{head} loss is {v}"),
                    });
                }
            }
            d_sum += d;
            g_sum += g;
        }
        self.epoch += 1;
        let n = plan.len().max(1) as f64;
        Ok((adversarial.then_some(d_sum / n), g_sum / n))
    }

    /// Predictions for every sample of `ds`, in order.
    pub fn predict(&self, ds: &Dataset) -> Result<Vec<usize>> {
        predict(&self.model, ds, self.config.z_samples, self.config.seed)
    }

    pub fn evaluate(&self, ds: &Dataset) -> Result<Confusion> {
        Confusion::from_predictions(&ds.labels(), &self.predict(ds)?, ds.classes)
    }

    /// Runs the remaining epochs up to `config.epochs`, evaluating on
    /// `test` as configured.
    pub fn fit(&mut self, train: &Dataset, test: Option<&Dataset>) -> Result<Vec<EpochRecord>> {
        let mut history = Vec::new();
        while self.epoch < self.config.epochs {
            let (d_loss, g_loss) = self.run_epoch(train)?;
            let done = self.epoch;
            let due = self.config.eval_every > 0 && done % self.config.eval_every == 0;
            let (mca_v, mpca_v) = match test {
                Some(test) if due || done == self.config.epochs => {
                    let c = self.evaluate(test)?;
                    (Some(mca(&c)), Some(mpca(&c)))
                }
                _ => (None, None),
            };
            log::info!(
                "{} epoch {}: d_loss {:?} g_loss {g_loss:.4} mca {:?}",
                self.model.variant,
                done - 1,
                d_loss,
                mca_v
            );
            history.push(EpochRecord {
                epoch: done - 1,
                d_loss,
                g_loss,
                mca: mca_v,
                mpca: mpca_v,
            });
        }
        Ok(history)
    }
}

pub fn predict(model: &Model, ds: &Dataset, z_samples: usize, seed: u64) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(ds.len());
    for chunk in ds.samples.chunks(EVAL_CHUNK) {
        let refs: Vec<&SceneSample> = chunk.iter().collect();
        out.extend(model.classify(&Batch::from_samples(&refs)?, z_samples, seed)?);
    }
    Ok(out)
}

/// Result of a complete training run.
pub struct TrainOutcome {
    pub trainer: Trainer,
    pub report: MetricsReport,
}

/// Builds a model for `train`'s shape and trains it for `config.epochs`,
/// reporting final metrics on `test`.
pub fn train(
    config: &TrainConfig,
    model_config: ModelConfig,
    train: &Dataset,
    test: &Dataset,
) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(config.clone(), model_config)?;
    let history = trainer.fit(train, Some(test))?;
    let confusion = trainer.evaluate(test)?;
    Ok(TrainOutcome {
        report: MetricsReport::new(confusion, history),
        trainer,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, SyntheticConfig};
    use crate::model::ModelHyper;

    fn tiny(samples: usize) -> Dataset {
        generate_synthetic(&SyntheticConfig {
            samples,
            group_classes: 3,
            individual_classes: 3,
            agents: 3,
            agents_max: 3,
            steps: 3,
            features: 4,
            ..Default::default()
        })
        .unwrap()
    }

    fn hyper() -> ModelHyper {
        ModelHyper {
            hidden: 4,
            z_dim: 2,
            fused: None,
        }
    }

    #[test]
    fn one_epoch_of_one_batch_is_one_step_each() {
        let ds = tiny(32);
        let cfg = TrainConfig {
            epochs: 1,
            ..Default::default()
        };
        let mut t = Trainer::new(cfg, ModelConfig::for_dataset(&ds, hyper())).unwrap();
        t.run_epoch(&ds).unwrap();
        assert_eq!(t.steps(), (1, 1));
        assert_eq!(t.epoch(), 1);
    }

    #[test]
    fn players_only_move_in_their_own_step() {
        let ds = tiny(8);
        let mut t = Trainer::new(TrainConfig::default(), ModelConfig::for_dataset(&ds, hyper())).unwrap();
        let samples: Vec<&SceneSample> = ds.samples.iter().collect();
        let mut rng = substream(0, "z", 0);
        let fp = |t: &Trainer| {
            (
                t.model.generator.store.fingerprint(),
                t.model.discriminator.as_ref().unwrap().store.fingerprint(),
            )
        };
        let (g0, d0) = fp(&t);
        t.d_step(&samples, &mut rng, 0).unwrap();
        let (g1, d1) = fp(&t);
        assert_eq!(g0, g1);
        assert_ne!(d0, d1);
        t.g_step(&samples, &mut rng, 0).unwrap();
        let (g2, d2) = fp(&t);
        assert_ne!(g1, g2);
        assert_eq!(d1, d2);
    }

    #[test]
    fn odd_batch_size_is_a_config_error() {
        let cfg = TrainConfig {
            batch_size: 7,
            ..Default::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn runs_are_bit_reproducible() {
        let ds = tiny(40);
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 8,
            ..Default::default()
        };
        let mc = ModelConfig::for_dataset(&ds, hyper());
        let a = train(&cfg, mc, &ds, &ds).unwrap();
        let b = train(&cfg, mc, &ds, &ds).unwrap();
        assert_eq!(a.trainer.checkpoint().to_text(), b.trainer.checkpoint().to_text());
        assert_eq!(a.report.csv(), b.report.csv());
        assert_eq!(a.report.history.len(), 2);
    }

    #[test]
    fn resume_matches_uninterrupted_run() {
        let ds = tiny(24);
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 8,
            ..Default::default()
        };
        let mc = ModelConfig::for_dataset(&ds, hyper());
        let mut straight = Trainer::new(cfg.clone(), mc).unwrap();
        straight.fit(&ds, None).unwrap();

        let mut first = Trainer::new(TrainConfig { epochs: 1, ..cfg.clone() }, mc).unwrap();
        first.fit(&ds, None).unwrap();
        let saved = Checkpoint::parse(&first.checkpoint().to_text()).unwrap();
        let mut resumed = Trainer::resume(cfg, &saved).unwrap();
        assert_eq!(resumed.epoch(), 1);
        let history = resumed.fit(&ds, Some(&ds)).unwrap();
        assert_eq!(history.first().map(|r| r.epoch), Some(1));
        assert_eq!(resumed.checkpoint().to_text(), straight.checkpoint().to_text());
    }

    #[test]
    fn supervised_variant_trains_without_discriminator() {
        let ds = tiny(16);
        let cfg = TrainConfig {
            variant: Variant::GSupervised,
            epochs: 1,
            batch_size: 8,
            ..Default::default()
        };
        let out = train(&cfg, ModelConfig::for_dataset(&ds, hyper()), &ds, &ds).unwrap();
        assert_eq!(out.trainer.steps(), (0, 2));
        assert!(out.report.history[0].d_loss.is_none());
    }

    #[test]
    fn uniform_classifier_predicts_class_zero() {
        let ds = tiny(5);
        let mut model = build_variant(Variant::MlsGan, ModelConfig::for_dataset(&ds, hyper()), 0).unwrap();
        let d = model.discriminator.as_mut().unwrap();
        let id = d.classifier.weight;
        let shape = d.store.get(id).shape().to_vec();
        *d.store.get_mut(id) = Tensor::zeros(shape);
        let preds = predict(&model, &ds, 0, 0).unwrap();
        assert!(preds.iter().all(|&p| p == 0));
        assert_eq!(preds, predict(&model, &ds, 0, 0).unwrap());
    }
}
