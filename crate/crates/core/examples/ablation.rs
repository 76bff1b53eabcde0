//! Train every variant on one split and print a comparison table.

use mlsgan::data::{generate_synthetic, split, SyntheticConfig};
use mlsgan::model::{ModelConfig, ModelHyper, Variant};
use mlsgan::train::{train, TrainConfig};

fn main() -> mlsgan::Result<()> {
    let ds = generate_synthetic(&SyntheticConfig {
        samples: 400,
        noise_std: 1.5,
        seed: 2,
        ..Default::default()
    })?;
    let (tr, te) = split(&ds, 0.8, 2)?;
    let mc = ModelConfig::for_dataset(&tr, ModelHyper { hidden: 12, z_dim: 4, fused: None });
    println!("variant,mca,mpca");
    for variant in Variant::ALL {
        let cfg = TrainConfig {
            variant,
            epochs: 10,
            learning_rate: 0.01,
            eval_every: 0,
            seed: 2,
            ..Default::default()
        };
        let r = train(&cfg, mc, &tr, &te)?.report;
        println!("{variant},{:.4},{:.4}", r.mca, r.mpca);
    }
    Ok(())
}
