//! Analytic gradients of the total loss against central differences.

use sriqa_core::forge::scenes::synthetic_scene;
use sriqa_core::image::Image;
use sriqa_core::net::{EncoderConfig, HeadConfig, HeadNorm, InputNorm, Model, ModelConfig, NormPlacement};
use sriqa_core::objectives::{aux_l1, aux_l1_grad, nt_xent, nt_xent_with_grad, Reduction};
use sriqa_core::sampler::{adjacent_pairs, ItemLabel, PairBatch};
use sriqa_core::data::Role;
use sriqa_core::trainer::{batch_gradient, TrainConfig};
use sriqa_oracles::oracle_grad;

const TAU: f64 = 0.2;

fn tiny(norm: HeadNorm, placement: NormPlacement, input_norm: InputNorm) -> Model<f64> {
    let cfg = ModelConfig {
        encoder: EncoderConfig {
            d_enc: 8,
            hidden_channels: vec![4, 6],
            input_norm,
            ..EncoderConfig::default()
        },
        head: HeadConfig {
            d_hidden: 16,
            d_proj: 8,
            normalization: norm,
            norm_placement: placement,
            ..HeadConfig::default()
        },
    };
    Model::new(cfg, 11).unwrap()
}

fn inputs() -> (Vec<Image<f64>>, Vec<f64>) {
    let imgs = (0..4).map(|i| synthetic_scene(40 + i, 8, 8).cast()).collect();
    (imgs, vec![2.0, 3.0, 4.0, 2.0])
}

fn loss(model: &Model<f64>, imgs: &[Image<f64>], scales: &[f64]) -> f64 {
    let h = model.encode(imgs).unwrap();
    let z = model.project(&h).unwrap();
    let s = model.predict_scale(&h).unwrap();
    nt_xent(&z, &adjacent_pairs(imgs.len() / 2), TAU).unwrap() + aux_l1(&s, scales).unwrap()
}

/// Parameter and input gradients from the analytic backward pass.
fn analytic(model: &Model<f64>, imgs: &[Image<f64>], scales: &[f64]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let traces: Vec<_> = imgs.iter().map(|i| model.forward_item(i).unwrap()).collect();
    let z: Vec<Vec<f64>> = traces.iter().map(|t| t.z.clone()).collect();
    let pred: Vec<f64> = traces.iter().map(|t| t.scale).collect();
    let dz = nt_xent_with_grad(&z, &adjacent_pairs(imgs.len() / 2), TAU, Reduction::Sum).unwrap().grad;
    let ds = aux_l1_grad(&pred, scales).unwrap();
    let mut grad = model.zeros_like();
    let dx = traces
        .iter()
        .zip(&dz)
        .zip(&ds)
        .map(|((t, g), &s)| model.backward_item(t, g, s, &mut grad, true, true))
        .collect();
    (grad.flat_params(), dx)
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
    diff / scale.max(1e-300)
}

fn check(norm: HeadNorm, placement: NormPlacement, input_norm: InputNorm) {
    let model = tiny(norm, placement, input_norm);
    assert!(model.param_count() <= 10_000);
    let (imgs, scales) = inputs();
    let (g_params, g_inputs) = analytic(&model, &imgs, &scales);

    let flat = model.flat_params();
    let numeric = oracle_grad(
        |p| {
            let mut m = model.clone();
            m.set_flat_params(p).unwrap();
            loss(&m, &imgs, &scales)
        },
        &flat,
        1e-6,
    );
    let mut offset = 0;
    for p in model.params() {
        let n = p.values.len();
        let err = rel_err(&g_params[offset..offset + n], &numeric[offset..offset + n]);
        assert!(err <= 1e-4, "{norm:?}/{placement:?}/{input_norm:?} {}: relative error {err:e}", p.name);
        offset += n;
    }

    for (k, img) in imgs.iter().enumerate() {
        // planar CHW layout on both sides
        let planar = img.to_planar();
        let (h, w) = (img.height(), img.width());
        let numeric = oracle_grad(
            |x| {
                let mut batch = imgs.clone();
                batch[k] = Image::from_fn(h, w, 3, |y, xx, c| x[c * h * w + y * w + xx]);
                loss(&model, &batch, &scales)
            },
            &planar,
            1e-6,
        );
        let err = rel_err(&g_inputs[k], &numeric);
        assert!(err <= 1e-4, "{input_norm:?} input {k}: relative error {err:e}");
    }
}

#[test]
fn total_loss_gradients_match_finite_differences() {
    check(HeadNorm::LayerNorm, NormPlacement::PreActivation, InputNorm::PerCrop);
    check(HeadNorm::LayerNorm, NormPlacement::PostActivation, InputNorm::PerCrop);
    check(HeadNorm::None, NormPlacement::PreActivation, InputNorm::PerCrop);
    check(HeadNorm::LayerNorm, NormPlacement::PreActivation, InputNorm::Fixed);
    check(HeadNorm::LayerNorm, NormPlacement::PreActivation, InputNorm::CropMean);
}

#[test]
fn trainer_gradient_matches_manual_composition() {
    let model = tiny(HeadNorm::LayerNorm, NormPlacement::PreActivation, InputNorm::PerCrop);
    let (imgs, scales) = inputs();
    let batch = PairBatch {
        items: imgs.clone(),
        pair_index: adjacent_pairs(2),
        labels: scales
            .iter()
            .map(|&s| ItemLabel {
                method_id: "m".into(),
                scale: s,
                content_id: "c".into(),
                role: Role::Sr,
            })
            .collect(),
    };
    let cfg = TrainConfig {
        tau: TAU,
        ..TrainConfig::default()
    };
    let (l, g) = batch_gradient(&model, &batch, &cfg).unwrap();
    assert!((l.total - loss(&model, &imgs, &scales)).abs() < 1e-12);
    let (manual, _) = analytic(&model, &imgs, &scales);
    assert_eq!(g.flat_params(), manual);
}
