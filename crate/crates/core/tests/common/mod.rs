#![allow(dead_code)]

use umaea_core::encoders::GatConfig;
use umaea_core::kgdata::{generate_synthetic_pair, split_seeds, SyntheticConfig};
use umaea_core::model::ModelConfig;
use umaea_core::trainer::{AlignmentTask, TrainConfig};
use umaea_core::umvm::generate_umvm_split;

/// Small synthetic task: `n` entities per side, images kept at `r_img`.
pub fn tiny_task(n: usize, r_img: f64, seed: u64) -> AlignmentTask {
    let syn = generate_synthetic_pair(&SyntheticConfig {
        n_entities: n,
        n_relations: 6,
        n_attrs: 8,
        d_v: 5,
        noise: 0.05,
        seed,
        ..SyntheticConfig::default()
    })
    .unwrap();
    let seeds = split_seeds(&syn.pairs, 0.5, seed + 1).unwrap();
    let split = generate_umvm_split(
        "tiny",
        &syn.kg1.image_mask,
        &syn.kg2.image_mask,
        r_img,
        seed,
    )
    .unwrap();
    let mask = split.joint_mask(n, n).unwrap();
    AlignmentTask::new(
        "tiny",
        &syn.kg1,
        &syn.kg2,
        &syn.visual1,
        &syn.visual2,
        mask,
        seeds,
        6,
        6,
        seed + 2,
    )
    .unwrap()
}

pub fn tiny_model_config() -> ModelConfig {
    ModelConfig {
        dim: 8,
        d_r: 6,
        d_a: 6,
        d_v: 5,
        gat: GatConfig {
            dim: 8,
            ..GatConfig::default()
        },
        ..ModelConfig::default()
    }
}

pub fn tiny_train_config(seed: u64) -> TrainConfig {
    TrainConfig {
        epochs_stage1: 10,
        epochs_stage2_1: 4,
        epochs_stage2_2: 4,
        batch_size: 8,
        learning_rate: 5e-3,
        early_stopping: false,
        seed,
        ..TrainConfig::default()
    }
}
