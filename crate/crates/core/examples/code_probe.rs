//! Fit a linear probe on generated codes, for a trained and an untrained
//! generator.

use mlsgan::data::{generate_synthetic, split, SyntheticConfig};
use mlsgan::model::{build_variant, ModelConfig, ModelHyper, Variant};
use mlsgan::train::{probe_codes, train, ProbeConfig, TrainConfig};

fn main() -> mlsgan::Result<()> {
    let ds = generate_synthetic(&SyntheticConfig {
        samples: 500,
        class_separation: 2.0,
        seed: 4,
        ..Default::default()
    })?;
    let (tr, te) = split(&ds, 0.8, 4)?;
    let mc = ModelConfig::for_dataset(&tr, ModelHyper { hidden: 16, z_dim: 4, fused: None });
    let cfg = TrainConfig {
        epochs: 15,
        learning_rate: 0.01,
        eval_every: 0,
        seed: 4,
        ..Default::default()
    };
    let trained = train(&cfg, mc, &tr, &te)?.trainer.model;
    let untrained = build_variant(Variant::MlsGan, mc, 4)?;
    let pc = ProbeConfig { seed: 4, ..Default::default() };
    let a = probe_codes(&trained, &tr, &te, &pc)?;
    let b = probe_codes(&untrained, &tr, &te, &pc)?;
    println!("probe trained mca {:.4} untrained mca {:.4}", a.report.mca, b.report.mca);
    Ok(())
}
