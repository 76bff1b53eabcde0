//! Finite-difference gradient checks over every differentiable component,
//! run in 64-bit at a fixed tolerance.

use std::fmt::Write as _;

use rand::Rng;

use crate::data::{generate_synthetic, SyntheticConfig};
use crate::error::Result;
use crate::fusion::GatedFusionUnit;
use crate::model::{d_loss, g_loss, Batch, Discriminator, Fusion, GLossOptions, Generator, ModelConfig, ModelHyper, Variant};
use crate::nn::{Activation, Bound, DenseLayer, LstmCell, ParamStore};
use crate::seed::{substream, Rng as SeedRng};
use crate::tensor::{finite_diff_check, GradCheckReport, Tape, Tensor, Var};

pub const DEFAULT_TOLERANCE: f64 = 1e-5;
const EPSILON: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradSuiteOptions {
    pub tolerance: f64,
    pub seed: u64,
    /// Negate the gradient leaving every gated fusion unit. Negative
    /// control for the checker itself.
    pub inject_sign_flip: bool,
}

impl Default for GradSuiteOptions {
    fn default() -> Self {
        Self {
            tolerance: DEFAULT_TOLERANCE,
            seed: 0,
            inject_sign_flip: false,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ComponentResult {
    pub name: &'static str,
    /// Number of input and parameter tensors compared.
    pub tensors: usize,
    pub max_rel_error: f64,
    pub passed: bool,
}

#[derive(Clone, Debug)]
pub struct GradSuiteReport {
    pub components: Vec<ComponentResult>,
    pub tolerance: f64,
}

impl GradSuiteReport {
    pub fn passed(&self) -> bool {
        self.components.iter().all(|c| c.passed)
    }

    pub fn failed(&self) -> impl Iterator<Item = &ComponentResult> {
        self.components.iter().filter(|c| !c.passed)
    }

    pub fn max_rel_error(&self) -> f64 {
        self.components.iter().fold(0.0_f64, |m, c| m.max(c.max_rel_error))
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for c in &self.components {
            let _ = writeln!(
                out,
                "{:<20} {} max_rel_error {:.3e} over {} tensors",
                c.name,
                if c.passed { "ok  " } else { "FAIL" },
                c.max_rel_error,
                c.tensors
            );
        }
        let _ = writeln!(
            out,
            "{} of {} components within {:e}",
            self.components.iter().filter(|c| c.passed).count(),
            self.components.len(),
            self.tolerance
        );
        out
    }
}

fn random(rng: &mut SeedRng, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-scale..scale)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches data")
}

/// `Σ out ⊙ w` with fixed random `w`, so no output gradient is uniform.
fn project(tape: &mut Tape, out: Var, rng_seed: u64) -> Result<Var> {
    let shape = tape.shape(out).to_vec();
    let mut rng = substream(rng_seed, "gradsuite_projection", 0);
    let w = tape.constant(random(&mut rng, &shape, 1.0));
    let prod = tape.mul(out, w)?;
    tape.sum(prod, None)
}

fn merge(name: &'static str, reports: &[GradCheckReport]) -> ComponentResult {
    let max_rel_error = reports.iter().fold(0.0_f64, |m, r| m.max(r.max_rel_error()));
    ComponentResult {
        name,
        tensors: reports.iter().map(|r| r.params.len()).sum(),
        max_rel_error,
        passed: reports.iter().all(GradCheckReport::passed),
    }
}

/// Runs `f(tape, params, inputs)` with the store's tensors followed by
/// `inputs`, all differentiable.
fn check_store<F>(store: &ParamStore, inputs: Vec<Tensor>, tol: f64, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &Bound, &[Var]) -> Result<Var>,
{
    let np = store.len();
    let mut all = store.tensors().to_vec();
    all.extend(inputs);
    finite_diff_check(
        |tape, vars| {
            let bound = Bound::from_vars(vars[..np].to_vec());
            f(tape, &bound, &vars[np..])
        },
        &all,
        EPSILON,
        tol,
    )
}

fn dense(o: &GradSuiteOptions) -> Result<ComponentResult> {
    let mut reports = Vec::new();
    for (i, act) in [Activation::None, Activation::Tanh, Activation::Sigmoid, Activation::Softmax]
        .into_iter()
        .enumerate()
    {
        let mut rng = substream(o.seed, "gradsuite_dense", i as u64);
        let mut store = ParamStore::new();
        let layer = DenseLayer::new(&mut store, "dense", 3, 4, act, &mut rng);
        let bias = random(&mut rng, &[4], 0.5);
        *store.get_mut(layer.bias) = bias;
        let x = random(&mut rng, &[2, 3], 1.0);
        reports.push(check_store(&store, vec![x], o.tolerance, |tape, p, xs| {
            let out = layer.forward(tape, p, xs[0])?;
            project(tape, out, o.seed + i as u64)
        })?);
    }
    Ok(merge("dense", &reports))
}

fn lstm_cell(o: &GradSuiteOptions, stream: u64) -> (ParamStore, LstmCell, SeedRng) {
    let mut rng = substream(o.seed, "gradsuite_lstm", stream);
    let mut store = ParamStore::new();
    let cell = LstmCell::new(&mut store, "lstm", 3, 3, &mut rng);
    for id in cell.weight_ids() {
        let shape = store.get(id).shape().to_vec();
        *store.get_mut(id) = random(&mut rng, &shape, 0.8);
    }
    (store, cell, rng)
}

fn lstm_step(o: &GradSuiteOptions) -> Result<ComponentResult> {
    let (store, cell, mut rng) = lstm_cell(o, 0);
    let inputs = vec![
        random(&mut rng, &[2, 3], 1.0),
        random(&mut rng, &[2, 3], 0.8),
        random(&mut rng, &[2, 3], 0.8),
    ];
    let r = check_store(&store, inputs, o.tolerance, |tape, p, v| {
        let (h, c) = cell.step(tape, p, v[0], v[1], v[2])?;
        let both = tape.concat(&[h, c], 1)?;
        project(tape, both, o.seed)
    })?;
    Ok(merge("lstm_step", &[r]))
}

fn lstm_sequence(o: &GradSuiteOptions) -> Result<ComponentResult> {
    let (store, cell, mut rng) = lstm_cell(o, 1);
    let seq: Vec<Tensor> = (0..4).map(|_| random(&mut rng, &[2, 3], 1.0)).collect();
    let r = check_store(&store, seq, o.tolerance, |tape, p, v| {
        let h = cell.encode(tape, p, v)?;
        project(tape, h, o.seed + 1)
    })?;
    Ok(merge("lstm_sequence", &[r]))
}

fn gfu_unit(o: &GradSuiteOptions, dims: &[usize], stream: u64) -> Result<(ParamStore, GatedFusionUnit, SeedRng)> {
    let mut rng = substream(o.seed, "gradsuite_gfu", stream);
    let mut store = ParamStore::new();
    let mut unit = GatedFusionUnit::new(&mut store, "gfu", dims, 3, &mut rng)?;
    for &id in &unit.gate_bias {
        *store.get_mut(id) = random(&mut rng, &[3], 0.5);
    }
    unit.flip_backward = o.inject_sign_flip;
    Ok((store, unit, rng))
}

fn gated_fusion(o: &GradSuiteOptions) -> Result<ComponentResult> {
    let mut reports = Vec::new();
    for (i, dims) in [&[3][..], &[2, 3], &[2, 1, 3, 2]].into_iter().enumerate() {
        let (store, unit, mut rng) = gfu_unit(o, dims, i as u64)?;
        let streams = dims.iter().map(|&d| random(&mut rng, &[2, d], 1.5)).collect();
        reports.push(check_store(&store, streams, o.tolerance, |tape, p, v| {
            let out = unit.forward(tape, p, v)?;
            project(tape, out.fused, o.seed + 10 + i as u64)
        })?);
    }
    Ok(merge("gated_fusion", &reports))
}

fn gated_fusion_pair(o: &GradSuiteOptions) -> Result<ComponentResult> {
    let (store, unit, mut rng) = gfu_unit(o, &[3, 3], 9)?;
    let streams = vec![random(&mut rng, &[2, 3], 1.0), random(&mut rng, &[2, 3], 1.0)];
    let r = check_store(&store, streams, o.tolerance, |tape, p, v| {
        let out = unit.forward_pair(tape, p, v[0], v[1])?;
        project(tape, out.fused, o.seed + 20)
    })?;
    Ok(merge("gated_fusion_pair", &[r]))
}

fn small_config() -> ModelConfig {
    ModelConfig::new(2, 3, 2, 3, ModelHyper { hidden: 3, z_dim: 2, fused: Some(3) })
}

fn small_batch(o: &GradSuiteOptions) -> Result<Batch> {
    let ds = generate_synthetic(&SyntheticConfig {
        samples: 2,
        group_classes: 3,
        individual_classes: 3,
        agents: 2,
        agents_min: 1,
        agents_max: 2,
        steps: 3,
        features: 2,
        seed: o.seed,
        ..Default::default()
    })?;
    let refs: Vec<_> = ds.samples.iter().collect();
    Batch::from_samples(&refs)
}

fn flip(fusion: &mut Fusion, on: bool) {
    if let Fusion::Gated(unit) = fusion {
        unit.flip_backward = on;
    }
}

fn generator(o: &GradSuiteOptions) -> Result<ComponentResult> {
    let cfg = small_config();
    let batch = small_batch(o)?;
    let mut reports = Vec::new();
    for (i, variant) in [Variant::MlsGan, Variant::GSupervised].into_iter().enumerate() {
        let mut rng = substream(o.seed, "gradsuite_generator", i as u64);
        let mut g = Generator::new(&cfg, variant.generator_layout(), &mut rng)?;
        flip(&mut g.fusion, o.inject_sign_flip);
        let z = random(&mut rng, &[batch.len(), cfg.z_dim], 1.0);
        reports.push(check_store(&g.store, vec![], o.tolerance, |tape, p, _| {
            let out = g.forward(tape, p, &batch, &z)?;
            let head = out.class_probs.unwrap_or(out.code);
            project(tape, head, o.seed + 30 + i as u64)
        })?);
    }
    Ok(merge("generator", &reports))
}

fn discriminator(o: &GradSuiteOptions) -> Result<ComponentResult> {
    let cfg = small_config();
    let batch = small_batch(o)?;
    let mut reports = Vec::new();
    for (i, gated) in [true, false].into_iter().enumerate() {
        let mut rng = substream(o.seed, "gradsuite_discriminator", i as u64);
        let mut d = Discriminator::new(&cfg, gated, &mut rng)?;
        flip(&mut d.fusion, o.inject_sign_flip);
        let code = random(&mut rng, &[batch.len(), cfg.classes], 0.5).data().iter().map(|v| v + 0.5).collect();
        let code = Tensor::matrix(batch.len(), cfg.classes, code)?;
        reports.push(check_store(&d.store, vec![code], o.tolerance, |tape, p, v| {
            let scene = batch.scene_vars(tape);
            let out = d.forward(tape, p, &scene, v[0])?;
            let both = tape.concat(&[out.p_real, out.class_probs], 1)?;
            project(tape, both, o.seed + 40 + i as u64)
        })?);
    }
    Ok(merge("discriminator", &reports))
}

fn losses(o: &GradSuiteOptions) -> Result<ComponentResult> {
    let mut rng = substream(o.seed, "gradsuite_losses", 0);
    let inputs = vec![
        random(&mut rng, &[3, 1], 2.0),
        random(&mut rng, &[3, 1], 2.0),
        random(&mut rng, &[3, 4], 2.0),
    ];
    let labels = [0, 3, 1];
    let mut reports = Vec::new();
    reports.push(finite_diff_check(
        |tape, v| {
            let pr = tape.sigmoid(v[0])?;
            let pf = tape.sigmoid(v[1])?;
            let probs = tape.softmax(v[2])?;
            d_loss(tape, pr, pf, probs, &labels, 2.5)
        },
        &inputs,
        EPSILON,
        o.tolerance,
    )?);
    for non_saturating in [true, false] {
        reports.push(finite_diff_check(
            |tape, v| {
                let pf = tape.sigmoid(v[1])?;
                let probs = tape.softmax(v[2])?;
                let opts = GLossOptions {
                    non_saturating,
                    class_term: true,
                };
                g_loss(tape, pf, probs, &labels, 2.5, opts)
            },
            &inputs,
            EPSILON,
            o.tolerance,
        )?);
    }
    Ok(merge("losses", &reports))
}

/// Every component check, in a fixed order.
pub fn run_grad_suite(o: &GradSuiteOptions) -> Result<GradSuiteReport> {
    let checks: [fn(&GradSuiteOptions) -> Result<ComponentResult>; 8] = [
        dense,
        lstm_step,
        lstm_sequence,
        gated_fusion,
        gated_fusion_pair,
        generator,
        discriminator,
        losses,
    ];
    let components = checks.iter().map(|check| check(o)).collect::<Result<_>>()?;
    Ok(GradSuiteReport {
        components,
        tolerance: o.tolerance,
    })
}
