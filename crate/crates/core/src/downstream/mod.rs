//! Frozen-feature quality prediction: two-scale five-crop features, ridge
//! regression, correlation metrics and the repeated-split protocol.

pub mod metrics;
pub mod protocol;
pub mod ridge;

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{Manifest, Role, ScoredManifest, ScoredRecord};
use crate::error::{Error, Result};
use crate::forge::resample::{crop, lanczos_half, pad_to, CropPosition, CropSpec};
use crate::forge::DegradationOperator;
use crate::image::Image;
use crate::net::Model;
use crate::scalar::Scalar;
use crate::seed;
use crate::trainer::hex;

pub use metrics::{plcc, ranks, srcc};
pub use protocol::{eval_protocol, evaluate_features, EvalConfig, EvalReport, SplitMode};
pub use ridge::{normal_equation_residual, ridge_fit, LinearProbe, RidgeModel};

/// Which crops feed the downstream regressor. The five fixed crops are
/// always first; `random_crops` extra seeded crops are added on the
/// training side only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CropPolicy {
    pub crop_size: usize,
    pub random_crops: usize,
    pub seed: u64,
}

impl Default for CropPolicy {
    fn default() -> Self {
        Self {
            crop_size: 256,
            random_crops: 0,
            seed: 0,
        }
    }
}

impl CropPolicy {
    pub fn five(crop_size: usize) -> Self {
        Self {
            crop_size,
            ..Self::default()
        }
    }

    /// Relative `(y, x)` positions in `[0, 1]` of every crop.
    fn positions(&self, image_key: &str) -> Vec<(f64, f64)> {
        let mut out: Vec<(f64, f64)> = CropPosition::FIVE
            .iter()
            .map(|p| match p {
                CropPosition::TopLeft => (0.0, 0.0),
                CropPosition::TopRight => (0.0, 1.0),
                CropPosition::BottomLeft => (1.0, 0.0),
                CropPosition::BottomRight => (1.0, 1.0),
                _ => (0.5, 0.5),
            })
            .collect();
        let mut rng = seed::rng_for(self.seed, &["downstream-crops", image_key]);
        for _ in 0..self.random_crops {
            out.push((rng.random::<f64>(), rng.random::<f64>()));
        }
        out
    }
}

/// Window of `size` at relative position `(fy, fx)` after reflect padding;
/// the five fixed positions coincide with [`crop`].
fn relative_crop<S: Scalar>(img: &Image<S>, size: usize, (fy, fx): (f64, f64)) -> Result<Image<S>> {
    if size == 0 || img.is_empty() {
        return Err(Error::InvalidArgument("empty crop or image".into()));
    }
    let p = pad_to(img, size);
    let top = (fy * (p.height() - size) as f64).floor() as usize;
    let left = (fx * (p.width() - size) as f64).floor() as usize;
    Ok(p.window(top, left, size, size))
}

/// Two-scale feature vectors (`2 * d_enc` each): the five fixed crops and
/// any random crops of the policy, each concatenated with the crop at the
/// same relative position of the half-scale image.
pub fn extract_features<S: Scalar>(
    image: &Image<f32>,
    model: &Model<S>,
    policy: &CropPolicy,
    image_key: &str,
) -> Result<Vec<Vec<f64>>> {
    let full: Image<S> = image.cast();
    let half = lanczos_half(&full)?;
    policy
        .positions(image_key)
        .into_iter()
        .map(|pos| {
            let a = model.encode_one(&relative_crop(&full, policy.crop_size, pos)?)?;
            let b = model.encode_one(&relative_crop(&half, policy.crop_size, pos)?)?;
            let v: Vec<f64> = a.iter().chain(&b).map(|s| s.to_f64_exact()).collect();
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::Numeric(format!("non-finite feature for {image_key}")));
            }
            Ok(v)
        })
        .collect()
}

/// Mean of the five fixed-crop ridge predictions.
pub fn predict_quality<S: Scalar>(image: &Image<f32>, model: &Model<S>, ridge: &RidgeModel, crop_size: usize) -> Result<f64> {
    if ridge.dim() != 2 * model.d_enc() {
        return Err(Error::Shape(format!(
            "regressor expects {} features, encoder yields {}",
            ridge.dim(),
            2 * model.d_enc()
        )));
    }
    let feats = extract_features(image, model, &CropPolicy::five(crop_size), "")?;
    mean_prediction(ridge, &feats)
}

pub(crate) fn mean_prediction(ridge: &RidgeModel, feats: &[Vec<f64>]) -> Result<f64> {
    let mut s = 0.0;
    for f in feats {
        s += ridge.predict(f)?;
    }
    Ok(s / feats.len() as f64)
}

/// Full-scale latents of the five fixed crops.
pub fn five_crop_latents<S: Scalar>(image: &Image<f32>, model: &Model<S>, crop_size: usize) -> Result<Vec<Vec<S>>> {
    let full: Image<S> = image.cast();
    CropPosition::FIVE
        .iter()
        .map(|&p| model.encode_one(&crop(&full, &CropSpec::at(crop_size, p))?))
        .collect()
}

/// Latent averaged over the five fixed crops, as `f64`.
pub fn mean_latent<S: Scalar>(image: &Image<f32>, model: &Model<S>, crop_size: usize) -> Result<Vec<f64>> {
    let lat = five_crop_latents(image, model, crop_size)?;
    let mut m = vec![0.0; model.d_enc()];
    for v in &lat {
        for (a, b) in m.iter_mut().zip(v) {
            *a += b.to_f64_exact();
        }
    }
    let n = lat.len() as f64;
    Ok(m.into_iter().map(|v| v / n).collect())
}

/// Auxiliary-head scale estimate averaged over the five fixed crops.
pub fn predict_scale_five_crop<S: Scalar>(image: &Image<f32>, model: &Model<S>, crop_size: usize) -> Result<f64> {
    let lat = five_crop_latents(image, model, crop_size)?;
    let s = model.predict_scale(&lat)?;
    Ok(s.iter().map(|v| v.to_f64_exact()).sum::<f64>() / s.len() as f64)
}

/// Decreasing map from severity rank (1 = mildest) to a synthetic quality
/// score in `(0, 1]`.
pub fn severity_quality(rank: u32) -> f64 {
    1.0 / f64::from(rank.max(1))
}

/// Score every SR record of `manifest` from its operator's severity rank.
pub fn synthetic_scores(manifest: &Manifest, operators: &[DegradationOperator]) -> Result<ScoredManifest> {
    let mut items = Vec::new();
    for r in manifest.records().filter(|r| r.role == Role::Sr) {
        let op = operators.iter().find(|o| o.method_id == r.method_id).ok_or_else(|| {
            Error::Data(format!("no operator named '{}' in the bank", r.method_id))
        })?;
        let rank = op.severity.ok_or_else(|| {
            Error::Data(format!("operator '{}' has no severity rank", op.method_id))
        })?;
        items.push(ScoredRecord {
            record: r.clone(),
            quality: severity_quality(rank),
        });
    }
    if items.is_empty() {
        return Err(Error::Data("manifest has no SR records to score".into()));
    }
    ScoredManifest::new(manifest.metadata().clone(), items)
}

/// On-disk feature store keyed by image path, checkpoint digest and crop
/// policy.
#[derive(Debug, Clone)]
pub struct FeatureCache {
    dir: PathBuf,
    checkpoint: String,
}

const CACHE_MAGIC: &[u8; 8] = b"SRIQAFT1";

impl FeatureCache {
    pub fn new(dir: impl Into<PathBuf>, checkpoint_digest: impl Into<String>) -> Self {
        Self {
            dir: dir.into(),
            checkpoint: checkpoint_digest.into(),
        }
    }

    fn entry(&self, image: &Path, policy: &CropPolicy) -> PathBuf {
        let mut h = Sha256::new();
        h.update(image.to_string_lossy().as_bytes());
        h.update([0]);
        h.update(self.checkpoint.as_bytes());
        h.update([0]);
        h.update(serde_json::to_string(policy).expect("policy serialises").as_bytes());
        self.dir.join(format!("{}.feat", hex(&h.finalize())))
    }

    pub fn get(&self, image: &Path, policy: &CropPolicy) -> Option<Vec<Vec<f64>>> {
        let bytes = fs::read(self.entry(image, policy)).ok()?;
        if bytes.len() < 16 || &bytes[..8] != CACHE_MAGIC {
            return None;
        }
        let rows = u32::from_le_bytes(bytes[8..12].try_into().ok()?) as usize;
        let cols = u32::from_le_bytes(bytes[12..16].try_into().ok()?) as usize;
        let body = &bytes[16..];
        if body.len() != rows * cols * 8 {
            return None;
        }
        let vals: Vec<f64> = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        Some(vals.chunks(cols.max(1)).map(|c| c.to_vec()).take(rows).collect())
    }

    pub fn put(&self, image: &Path, policy: &CropPolicy, feats: &[Vec<f64>]) -> Result<()> {
        fs::create_dir_all(&self.dir).map_err(|e| Error::io(&self.dir, e))?;
        let cols = feats.first().map_or(0, Vec::len);
        let mut bytes = Vec::with_capacity(16 + feats.len() * cols * 8);
        bytes.extend_from_slice(CACHE_MAGIC);
        bytes.extend_from_slice(&(feats.len() as u32).to_le_bytes());
        bytes.extend_from_slice(&(cols as u32).to_le_bytes());
        for v in feats.iter().flatten() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        let path = self.entry(image, policy);
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, &bytes).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))
    }
}

/// Features of every scored image, in input order, reading and filling
/// `cache` when given.
pub fn scored_features<S: Scalar>(
    items: &[ScoredRecord],
    base: &Path,
    model: &Model<S>,
    policy: &CropPolicy,
    cache: Option<&FeatureCache>,
) -> Result<Vec<Vec<Vec<f64>>>> {
    items
        .par_iter()
        .map(|it| {
            let path = it.record.resolve(base);
            if let Some(f) = cache.and_then(|c| c.get(&path, policy)) {
                return Ok(f);
            }
            let img = Image::<f32>::load(&path)?;
            let f = extract_features(&img, model, policy, &it.record.path)?;
            if let Some(c) = cache {
                c.put(&path, policy, &f)?;
            }
            Ok(f)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{EncoderConfig, HeadConfig, ModelConfig};

    fn tiny() -> Model<f64> {
        let cfg = ModelConfig {
            encoder: EncoderConfig {
                d_enc: 8,
                hidden_channels: vec![4],
                ..EncoderConfig::default()
            },
            head: HeadConfig {
                d_hidden: 8,
                d_proj: 4,
                ..HeadConfig::default()
            },
        };
        Model::new(cfg, 3).unwrap()
    }

    #[test]
    fn constant_image_gives_identical_crops() {
        let m = tiny();
        let img = Image::<f32>::filled(40, 48, 3, 0.3);
        let f = extract_features(&img, &m, &CropPolicy::five(16), "c").unwrap();
        assert_eq!(f.len(), 5);
        assert!(f.iter().all(|v| v.len() == 16 && v == &f[0]));
        let ridge = RidgeModel {
            weights: (0..16).map(|i| i as f64 * 0.1).collect(),
            intercept: 0.5,
            alpha: 1.0,
        };
        let q = predict_quality(&img, &m, &ridge, 16).unwrap();
        assert!((q - ridge.predict(&f[0]).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn prediction_is_mean_of_crops() {
        let m = tiny();
        let img = crate::forge::scenes::synthetic_scene(4, 40, 36);
        let f = extract_features(&img, &m, &CropPolicy::five(16), "x").unwrap();
        let ridge = RidgeModel {
            weights: (0..16).map(|i| (i as f64).sin()).collect(),
            intercept: -0.2,
            alpha: 1.0,
        };
        let manual = f.iter().map(|v| ridge.predict(v).unwrap()).sum::<f64>() / 5.0;
        assert!((predict_quality(&img, &m, &ridge, 16).unwrap() - manual).abs() < 1e-9);
        let zero = RidgeModel {
            weights: vec![0.0; 16],
            intercept: 1.25,
            alpha: 1.0,
        };
        assert_eq!(predict_quality(&img, &m, &zero, 16).unwrap(), 1.25);
        let wrong = RidgeModel {
            weights: vec![0.0; 15],
            intercept: 0.0,
            alpha: 1.0,
        };
        assert!(predict_quality(&img, &m, &wrong, 16).is_err());
    }

    #[test]
    fn fixed_relative_positions_match_crop() {
        let img = crate::forge::scenes::synthetic_scene(1, 30, 41).cast::<f64>();
        let pos = CropPolicy::five(12).positions("k");
        for (p, rel) in CropPosition::FIVE.iter().zip(pos) {
            assert_eq!(crop(&img, &CropSpec::at(12, *p)).unwrap(), relative_crop(&img, 12, rel).unwrap());
        }
    }

    #[test]
    fn cache_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let c = FeatureCache::new(dir.path(), "abc");
        let p = CropPolicy::five(8);
        let f = vec![vec![1.0, 2.5], vec![-0.0, 1e-300]];
        assert!(c.get(Path::new("a.png"), &p).is_none());
        c.put(Path::new("a.png"), &p, &f).unwrap();
        assert_eq!(c.get(Path::new("a.png"), &p).unwrap(), f);
        assert!(c.get(Path::new("b.png"), &p).is_none());
        assert!(FeatureCache::new(dir.path(), "other").get(Path::new("a.png"), &p).is_none());
    }

    #[test]
    fn severity_scores_decrease() {
        assert!((1..6).all(|r| severity_quality(r) > severity_quality(r + 1)));
    }
}
