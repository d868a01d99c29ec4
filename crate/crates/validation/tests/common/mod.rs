//! Shared desk-scale fixtures for the integration suites.
#![allow(dead_code)]

use std::path::{Path, PathBuf};

use sriqa_core::data::{Manifest, Role};
use sriqa_core::downstream::{mean_latent, predict_scale_five_crop};
use sriqa_core::forge::scenes::write_synthetic_scenes;
use sriqa_core::forge::{default_bank, forge, DegradationOperator};
use sriqa_core::image::Image;
use sriqa_core::objectives::Reduction;
use sriqa_core::net::{EncoderConfig, HeadConfig, Model, ModelConfig};
use sriqa_core::trainer::TrainConfig;

pub const LR_SIZE: usize = 32;
pub const CROP: usize = 32;
pub const SCALES: [f64; 3] = [2.0, 3.0, 4.0];

/// Four operators with distinct artefacts and severity ranks.
pub fn desk_ops() -> Vec<DegradationOperator> {
    default_bank()
        .into_iter()
        .filter(|o| ["bicubic", "nearest", "blur", "noise"].contains(&o.method_id.as_str()))
        .collect()
}

/// Synthesize `scenes` LR images under `root/lr_src` and forge them into
/// `root/forged`.
pub fn forge_desk(root: &Path, scenes: usize, seed: u64) -> (Manifest, PathBuf) {
    let lr = root.join("lr_src");
    write_synthetic_scenes(&lr, scenes, LR_SIZE, LR_SIZE, seed).unwrap();
    let out = root.join("forged");
    let m = forge(&lr, &desk_ops(), &SCALES, &out, seed).unwrap();
    (m, out)
}

pub fn desk_model() -> ModelConfig {
    ModelConfig {
        encoder: EncoderConfig {
            d_enc: 64,
            hidden_channels: vec![16, 32, 48],
            ..EncoderConfig::default()
        },
        head: HeadConfig {
            d_hidden: 128,
            d_proj: 64,
            ..HeadConfig::default()
        },
    }
}

/// Desk-scale training: one cosine cycle, mean-reduced contrastive loss so
/// the auxiliary term is not drowned out, and a matching learning rate.
pub fn desk_train(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        crop_size: CROP,
        restart_period: epochs,
        lr_max: 0.03,
        reduction: Reduction::Mean,
        ..TrainConfig::default()
    }
}

/// SR images of a manifest as `(image, method_id, scale)`.
pub fn sr_images(m: &Manifest, base: &Path) -> Vec<(Image<f32>, String, f64)> {
    m.records()
        .filter(|r| r.role == Role::Sr)
        .map(|r| (Image::load(&r.resolve(base)).unwrap(), r.method_id.clone(), r.scale))
        .collect()
}

pub fn latents(model: &Model<f32>, imgs: &[(Image<f32>, String, f64)]) -> (Vec<Vec<f64>>, Vec<String>) {
    let x = imgs.iter().map(|(i, _, _)| mean_latent(i, model, CROP).unwrap()).collect();
    (x, imgs.iter().map(|(_, m, _)| m.clone()).collect())
}

pub fn scale_mae(model: &Model<f32>, imgs: &[(Image<f32>, String, f64)]) -> f64 {
    imgs.iter()
        .map(|(i, _, s)| (predict_scale_five_crop(i, model, CROP).unwrap() - s).abs())
        .sum::<f64>()
        / imgs.len() as f64
}
