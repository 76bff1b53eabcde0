//! Train the full model on a small synthetic benchmark and report accuracy.
//!
//! `cargo run --release --example train_mls_gan [epochs]`

use mlsgan::data::{generate_synthetic, split, SyntheticConfig};
use mlsgan::model::{ModelConfig, ModelHyper, Variant};
use mlsgan::train::{train, TrainConfig};

fn main() -> mlsgan::Result<()> {
    let epochs = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(20);
    let ds = generate_synthetic(&SyntheticConfig {
        samples: 600,
        class_separation: 2.0,
        seed: 1,
        ..Default::default()
    })?;
    let (tr, te) = split(&ds, 0.8, 1)?;
    let hyper = ModelHyper { hidden: 16, z_dim: 4, fused: None };
    let cfg = TrainConfig {
        variant: Variant::MlsGan,
        epochs,
        learning_rate: 0.01,
        eval_every: 5,
        seed: 1,
        ..Default::default()
    };
    let out = train(&cfg, ModelConfig::for_dataset(&tr, hyper), &tr, &te)?;
    print!("{}", out.report.csv());
    print!("{}", out.report.summary("mls_gan"));
    Ok(())
}
