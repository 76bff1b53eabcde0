use mlsgan::data::{generate_synthetic, split, Dataset, SceneSample, SyntheticConfig};
use mlsgan::model::{build_variant, ModelConfig, ModelHyper, Variant};
use mlsgan::seed::substream;
use mlsgan::train::{predict, train, Trainer, TrainConfig};

fn dataset(samples: usize, seed: u64) -> Dataset {
    generate_synthetic(&SyntheticConfig {
        samples,
        group_classes: 3,
        individual_classes: 3,
        agents: 3,
        agents_max: 3,
        steps: 4,
        features: 4,
        seed,
        ..Default::default()
    })
    .unwrap()
}

fn hyper() -> ModelHyper {
    ModelHyper {
        hidden: 6,
        z_dim: 2,
        fused: None,
    }
}

#[test]
fn one_epoch_on_32_samples_is_one_step_per_player() {
    let ds = dataset(32, 0);
    let cfg = TrainConfig {
        epochs: 1,
        ..Default::default()
    };
    let mut t = Trainer::new(cfg, ModelConfig::for_dataset(&ds, hyper())).unwrap();
    t.fit(&ds, None).unwrap();
    assert_eq!(t.steps(), (1, 1));
}

#[test]
fn each_player_changes_only_in_its_own_step() {
    let ds = dataset(48, 1);
    let cfg = TrainConfig {
        batch_size: 16,
        ..Default::default()
    };
    for variant in [Variant::MlsGan, Variant::CganNoGfuNoScene, Variant::MlsGanNoScene] {
        let cfg = TrainConfig { variant, ..cfg.clone() };
        let mut t = Trainer::new(cfg, ModelConfig::for_dataset(&ds, hyper())).unwrap();
        let mut z = substream(0, "z", 0);
        for batch in t.batch_plan(ds.len(), 0) {
            let samples: Vec<&SceneSample> = batch.iter().map(|&i| &ds.samples[i]).collect();
            let g0 = t.model.generator.store.fingerprint();
            let d0 = t.model.discriminator.as_ref().unwrap().store.fingerprint();
            t.d_step(&samples, &mut z, 0).unwrap();
            let g1 = t.model.generator.store.fingerprint();
            let d1 = t.model.discriminator.as_ref().unwrap().store.fingerprint();
            assert_eq!(g0, g1, "{variant}: generator moved in the discriminator step");
            assert_ne!(d0, d1);
            t.g_step(&samples, &mut z, 0).unwrap();
            let g2 = t.model.generator.store.fingerprint();
            let d2 = t.model.discriminator.as_ref().unwrap().store.fingerprint();
            assert_eq!(d1, d2, "{variant}: discriminator moved in the generator step");
            assert_ne!(g1, g2);
        }
    }
}

#[test]
fn fixed_seed_gives_identical_parameters_and_metrics() {
    let ds = dataset(60, 2);
    let (tr, te) = split(&ds, 0.8, 2).unwrap();
    for variant in Variant::ALL {
        let cfg = TrainConfig {
            variant,
            epochs: 2,
            batch_size: 8,
            seed: 5,
            ..Default::default()
        };
        let mc = ModelConfig::for_dataset(&tr, hyper());
        let a = train(&cfg, mc, &tr, &te).unwrap();
        let b = train(&cfg, mc, &tr, &te).unwrap();
        assert_eq!(a.trainer.checkpoint().to_text(), b.trainer.checkpoint().to_text(), "{variant}");
        assert_eq!(a.report, b.report, "{variant}");
        assert_eq!(a.report.confusion.total() as usize, te.len());
    }
}

#[test]
fn predictions_are_repeatable() {
    let ds = dataset(20, 3);
    let model = build_variant(Variant::MlsGan, ModelConfig::for_dataset(&ds, hyper()), 3).unwrap();
    assert_eq!(predict(&model, &ds, 0, 0).unwrap(), predict(&model, &ds, 0, 0).unwrap());
    assert_eq!(predict(&model, &ds, 4, 9).unwrap(), predict(&model, &ds, 4, 9).unwrap());
}

#[test]
fn supervised_generator_learns_noiseless_anchors() {
    let ds = generate_synthetic(&SyntheticConfig {
        samples: 120,
        group_classes: 3,
        individual_classes: 3,
        agents: 1,
        agents_min: 1,
        agents_max: 1,
        steps: 4,
        features: 4,
        noise_std: 0.0,
        class_separation: 2.0,
        seed: 4,
        ..Default::default()
    })
    .unwrap();
    let cfg = TrainConfig {
        variant: Variant::GSupervised,
        epochs: 40,
        batch_size: 16,
        learning_rate: 0.02,
        eval_every: 0,
        ..Default::default()
    };
    let out = train(&cfg, ModelConfig::for_dataset(&ds, hyper()), &ds, &ds).unwrap();
    assert_eq!(out.report.mca, 1.0, "{}", out.report.summary("noiseless"));
}
