//! Generate a synthetic dataset, split it and write both file formats.

use mlsgan::data::{generate_synthetic, load_features, save_features, split, FileFormat, SyntheticConfig};

fn main() -> mlsgan::Result<()> {
    let cfg = SyntheticConfig {
        samples: 200,
        transition_prob: 0.2,
        seed: 3,
        ..Default::default()
    };
    let ds = generate_synthetic(&cfg)?;
    println!("samples {} classes {}", ds.len(), cfg.group_classes);
    for (c, n) in ds.class_histogram().iter().enumerate() {
        println!("class {c} {n}");
    }
    let first = &ds.samples[0];
    println!(
        "sample 0 label {} real agents {} of {} individual {:?}",
        first.label,
        first.real_agents(),
        first.presence.len(),
        first.individual_labels
    );

    let (train, test) = split(&ds, 0.8, cfg.seed)?;
    println!("split train {} test {}", train.len(), test.len());

    let dir = std::env::temp_dir();
    for (name, fmt) in [("mlsgan_example.bin", FileFormat::Binary), ("mlsgan_example.txt", FileFormat::Text)] {
        let path = dir.join(name);
        save_features(&path, &ds, fmt)?;
        let back = load_features(&path)?;
        println!("{} round trip {}", path.display(), back == ds);
    }
    Ok(())
}
