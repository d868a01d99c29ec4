//! Trainer contracts on a toy dataset: logging, determinism, resumption and
//! auxiliary scale learning.

use std::path::{Path, PathBuf};

use sriqa_core::data::{Manifest, Role};
use sriqa_core::downstream::predict_scale_five_crop;
use sriqa_core::error::Error;
use sriqa_core::forge::scenes::write_synthetic_scenes;
use sriqa_core::forge::{default_bank, forge};
use sriqa_core::image::Image;
use sriqa_core::net::{EncoderConfig, HeadConfig, Model, ModelConfig};
use sriqa_core::objectives::Reduction;
use sriqa_core::seed;
use sriqa_core::trainer::{lr_at, read_run_log, resume, train, RunDir, TrainConfig};
use tempfile::TempDir;

const CROP: usize = 32;

fn toy_set(root: &Path, scenes: usize, seed: u64) -> (Manifest, PathBuf) {
    let lr = root.join("lr");
    write_synthetic_scenes(&lr, scenes, 32, 32, seed).unwrap();
    let ops: Vec<_> = default_bank()
        .into_iter()
        .filter(|o| ["bicubic", "nearest"].contains(&o.method_id.as_str()))
        .collect();
    let out = root.join("forged");
    let m = forge(&lr, &ops, &[2.0, 3.0, 4.0], &out, seed).unwrap();
    (m, out)
}

fn toy_model() -> ModelConfig {
    ModelConfig {
        encoder: EncoderConfig {
            d_enc: 16,
            hidden_channels: vec![4, 8, 8],
            ..EncoderConfig::default()
        },
        head: HeadConfig {
            d_hidden: 16,
            d_proj: 8,
            ..HeadConfig::default()
        },
    }
}

fn toy_train(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        crop_size: CROP,
        batch_items: 8,
        restart_period: 2,
        lr_max: 0.03,
        reduction: Reduction::Mean,
        ..TrainConfig::default()
    }
}

struct Toy {
    tmp: TempDir,
    manifest: Manifest,
    base: PathBuf,
}

impl Toy {
    fn new() -> Self {
        let tmp = tempfile::tempdir().unwrap();
        let (manifest, base) = toy_set(tmp.path(), 4, 5);
        Self { tmp, manifest, base }
    }

    fn run(&self, name: &str) -> RunDir {
        RunDir::new(self.tmp.path().join(name))
    }

    fn train(&self, name: &str, cfg: &TrainConfig) -> sriqa_core::trainer::TrainOutcome<f32> {
        train(&self.manifest, &self.base, &toy_model(), cfg, &self.run(name)).unwrap()
    }
}

fn params(m: &Model<f32>) -> Vec<f32> {
    m.flat_params()
}

#[test]
fn log_rows_follow_steps_and_schedule() {
    let toy = Toy::new();
    let cfg = toy_train(3);
    let out = toy.train("run", &cfg);
    assert!(out.finished);
    assert!(out.checkpoint.is_file());
    let rows = read_run_log(&out.run_log).unwrap();
    assert_eq!(rows.len() as u64, out.steps);
    assert_eq!(out.steps, out.total_steps);
    let spe = (out.total_steps / cfg.epochs as u64) as usize;
    for (i, r) in rows.iter().enumerate() {
        assert_eq!(r.step, i as u64);
        assert_eq!(r.epoch, i / spe);
        assert!((r.lr - lr_at(r.step, &cfg, spe)).abs() < 1e-12, "step {}", r.step);
        assert!((r.l_total - (r.l_contr + r.l_aux)).abs() < 1e-6 * r.l_total.abs().max(1.0));
        assert!(r.l_contr.is_finite() && r.l_aux >= 0.0);
    }
}

#[test]
fn same_seed_gives_identical_runs() {
    let toy = Toy::new();
    let cfg = toy_train(2);
    let a = toy.train("a", &cfg);
    let b = toy.train("b", &cfg);
    assert_eq!(params(&a.model), params(&b.model));
    let last = |p: &Path| read_run_log(p).unwrap().last().unwrap().l_total;
    assert_eq!(last(&a.run_log), last(&b.run_log));

    let other = toy.train("c", &TrainConfig { seed: cfg.seed + 1, ..cfg });
    assert_ne!(params(&a.model), params(&other.model));
}

#[test]
fn resume_matches_uninterrupted_run() {
    let toy = Toy::new();
    let cfg = toy_train(2);
    let full = toy.train("full", &cfg);

    let cut = toy.train("cut", &TrainConfig { max_steps: Some(3), ..cfg.clone() });
    assert!(!cut.finished);
    assert_eq!(cut.steps, 3);
    let run = toy.run("cut");
    let resumed: sriqa_core::trainer::TrainOutcome<f32> =
        resume(&run.latest_checkpoint(), &toy.manifest, &toy.base, &toy_model(), &cfg, &run).unwrap();
    assert!(resumed.finished);
    assert_eq!(params(&resumed.model), params(&full.model));
    let (a, b) = (read_run_log(&full.run_log).unwrap(), read_run_log(&resumed.run_log).unwrap());
    assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(&b) {
        assert_eq!((x.step, x.lr, x.l_total), (y.step, y.lr, y.l_total));
    }

    // A finished run resumes as a no-op.
    let again: sriqa_core::trainer::TrainOutcome<f32> =
        resume(&run.final_checkpoint(), &toy.manifest, &toy.base, &toy_model(), &cfg, &run).unwrap();
    assert!(again.finished);
    assert_eq!(again.steps, full.steps);
    assert_eq!(read_run_log(&run.run_log()).unwrap().len(), a.len());

    // Changing the trajectory is refused.
    let altered = TrainConfig { lr_max: 0.05, ..cfg };
    let err = resume::<f32>(&run.latest_checkpoint(), &toy.manifest, &toy.base, &toy_model(), &altered, &run)
        .unwrap_err();
    assert!(matches!(err, Error::InvalidArgument(_)), "{err}");
}

#[test]
fn auxiliary_head_improves_on_initialisation() {
    let toy = Toy::new();
    let held = tempfile::tempdir().unwrap();
    let (hm, hbase) = toy_set(held.path(), 3, 9);
    let imgs: Vec<(Image<f32>, f64)> = hm
        .records()
        .filter(|r| r.role == Role::Sr)
        .map(|r| (Image::load(&r.resolve(&hbase)).unwrap(), r.scale))
        .collect();
    let mae = |m: &Model<f32>| {
        imgs.iter()
            .map(|(i, s)| (predict_scale_five_crop(i, m, CROP).unwrap() - s).abs())
            .sum::<f64>()
            / imgs.len() as f64
    };

    let cfg = toy_train(6);
    let init = Model::<f32>::new(cfg.resolve_model(&toy_model()), seed::derive(cfg.seed, &["init"])).unwrap();
    let out = toy.train("run", &cfg);
    let (before, after) = (mae(&init), mae(&out.model));
    assert!(after < before, "held-out scale MAE {before:.3} -> {after:.3}");
}
