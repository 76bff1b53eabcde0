//! Mean gate value per person slot, split by real agents and dummy padding.

use mlsgan::data::{generate_synthetic, split, SyntheticConfig};
use mlsgan::model::{ModelConfig, ModelHyper};
use mlsgan::train::{gate_attention_report, train, TrainConfig};

fn main() -> mlsgan::Result<()> {
    let ds = generate_synthetic(&SyntheticConfig {
        samples: 500,
        agents_max: 4,
        class_separation: 2.0,
        seed: 5,
        ..Default::default()
    })?;
    let (tr, te) = split(&ds, 0.8, 5)?;
    let cfg = TrainConfig {
        epochs: 15,
        learning_rate: 0.01,
        eval_every: 0,
        seed: 5,
        ..Default::default()
    };
    let hyper = ModelHyper { hidden: 16, z_dim: 4, fused: None };
    let out = train(&cfg, ModelConfig::for_dataset(&tr, hyper), &tr, &te)?;
    let gates = gate_attention_report(&out.trainer.model, &te)?;
    print!("{}", gates.to_text());
    if let (Some(real), Some(dummy)) = gates.pooled() {
        println!("pooled real {real:.4} dummy {dummy:.4}");
    }
    Ok(())
}
