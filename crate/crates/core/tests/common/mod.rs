#![allow(dead_code)]

use supcbm::annotate::{annotate_dataset, AnnotationSet};
use supcbm::model::{train, SupCbm};
use supcbm::optim::TrainConfig;
use supcbm::synth::{gen_synthetic, SyntheticConfig, SyntheticFixture};

pub fn small_config(seed: u64) -> SyntheticConfig {
    SyntheticConfig {
        num_classes: 4,
        p: 3,
        q: 4,
        k: 2,
        dim: 32,
        images_per_class: 20,
        noise: 0.1,
        seed,
        share_adjacent: true,
        duplicate_pairs: 0,
    }
}

pub struct Trained {
    pub fixture: SyntheticFixture,
    pub annotations: AnnotationSet,
    pub model: SupCbm,
    pub config: TrainConfig,
}

pub fn train_small(seed: u64) -> Trained {
    let fixture = gen_synthetic(&small_config(seed)).unwrap();
    let annotations =
        annotate_dataset(&fixture.train, &fixture.bundle.vocab, &fixture.concepts, 2).unwrap();
    let config = TrainConfig {
        epochs: 10,
        batch_size: 8,
        seed,
        ..Default::default()
    };
    let model = train(
        &fixture.train,
        &annotations,
        &fixture.bundle.matrix,
        &config,
        None,
    )
    .unwrap()
    .model;
    Trained {
        fixture,
        annotations,
        model,
        config,
    }
}
