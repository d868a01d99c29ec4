//! SR-proxy dataset generation: a bank of classical degradation/upscaling
//! pipelines applied to LR sources, plus the half-scale copies used for
//! multiscale training.

pub mod resample;
pub mod scenes;

use std::io::Cursor;
use std::path::{Path, PathBuf};
use std::process::Command;

use log::{info, warn};
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{
    write_manifest, ImageRecord, Manifest, ManifestEntry, Metadata, Role, SplitTag, NO_METHOD,
};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::scalar::Scalar;
use crate::seed;

pub use resample::{crop, lanczos_half, upscale, CropPosition, CropSpec, Kernel};

/// Manifest file name written by [`forge`] inside `out_dir`.
pub const MANIFEST_FILE: &str = "manifest.tsv";

const IMAGE_EXTENSIONS: &[&str] = &["png", "jpg", "jpeg", "bmp", "tif", "tiff"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum Family {
    Interpolation {
        kernel: Kernel,
    },
    BlurThenUpsample {
        sigma: f64,
        kernel: Kernel,
    },
    /// Additive Gaussian noise (std in `[0,1]` units) on the LR input.
    NoiseThenUpsample {
        sigma: f64,
        kernel: Kernel,
    },
    /// Unsharp mask `x + amount * (x - blur(x, sigma))` on the upscaled image.
    SharpenAfterUpsample {
        amount: f64,
        sigma: f64,
        kernel: Kernel,
    },
    CompressionAfterUpsample {
        quality: u8,
        kernel: Kernel,
    },
    /// `args` may contain `{input}`, `{output}`, `{scale}` and `{seed}`.
    ExternalCommand {
        program: String,
        args: Vec<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegradationOperator {
    pub method_id: String,
    #[serde(flatten)]
    pub family: Family,
    pub supported_scales: Vec<f64>,
    /// Optional severity rank used to synthesize quality scores.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub severity: Option<u32>,
}

impl DegradationOperator {
    pub fn new(method_id: impl Into<String>, family: Family, supported_scales: &[f64]) -> Self {
        Self {
            method_id: method_id.into(),
            family,
            supported_scales: supported_scales.to_vec(),
            severity: None,
        }
    }

    pub fn with_severity(mut self, rank: u32) -> Self {
        self.severity = Some(rank);
        self
    }

    pub fn supports(&self, scale: f64) -> bool {
        self.supported_scales
            .iter()
            .any(|&s| (s - scale).abs() < 1e-9)
    }
}

fn jpeg_round_trip<S: Scalar>(img: &Image<S>, quality: u8) -> Result<Image<S>> {
    let bytes = img.to_u8();
    let mut buf = Vec::new();
    let mut enc = image::codecs::jpeg::JpegEncoder::new_with_quality(&mut buf, quality.clamp(1, 100));
    let codec_err = |e: image::ImageError| Error::Codec {
        path: PathBuf::from("<in-memory jpeg>"),
        message: e.to_string(),
    };
    enc.encode(
        &bytes,
        img.width() as u32,
        img.height() as u32,
        image::ExtendedColorType::Rgb8,
    )
    .map_err(codec_err)?;
    let decoded = image::load(Cursor::new(buf), image::ImageFormat::Jpeg)
        .map_err(codec_err)?
        .to_rgb8();
    Image::from_u8(img.height(), img.width(), 3, decoded.as_raw())
}

fn run_external<S: Scalar>(
    img: &Image<S>,
    method_id: &str,
    program: &str,
    args: &[String],
    scale: f64,
    seed: u64,
) -> Result<Image<S>> {
    let dir = tempfile::tempdir().map_err(|e| Error::io(std::env::temp_dir(), e))?;
    let input = dir.path().join("input.png");
    let output = dir.path().join("output.png");
    img.save_png(&input)?;
    let expand = |a: &String| {
        a.replace("{input}", &input.to_string_lossy())
            .replace("{output}", &output.to_string_lossy())
            .replace("{scale}", &scale.to_string())
            .replace("{seed}", &seed.to_string())
    };
    let out = Command::new(program)
        .args(args.iter().map(expand))
        .output()
        .map_err(|e| Error::ExternalCommand {
            method_id: method_id.into(),
            status: "spawn failure".into(),
            stderr: e.to_string(),
        })?;
    if !out.status.success() {
        return Err(Error::ExternalCommand {
            method_id: method_id.into(),
            status: out.status.to_string(),
            stderr: String::from_utf8_lossy(&out.stderr).trim().to_string(),
        });
    }
    Image::load(&output)
}

/// SR-proxy output of `op` on `image` at `scale`:
/// `(round(H*s), round(W*s), C)`, values in `[0,1]`, deterministic in `seed`.
pub fn apply_degradation<S: Scalar>(
    image: &Image<S>,
    op: &DegradationOperator,
    scale: f64,
    seed: u64,
) -> Result<Image<S>> {
    if !op.supports(scale) {
        return Err(Error::UnsupportedScale {
            method_id: op.method_id.clone(),
            scale,
            supported: op.supported_scales.clone(),
        });
    }
    if image.is_empty() {
        return Err(Error::Shape("degradation input is empty".into()));
    }
    let out = match &op.family {
        Family::Interpolation { kernel } => upscale(image, scale, *kernel)?,
        Family::BlurThenUpsample { sigma, kernel } => {
            upscale(&resample::gaussian_blur(image, *sigma), scale, *kernel)?
        }
        Family::NoiseThenUpsample { sigma, kernel } => {
            let normal = Normal::new(0.0, *sigma)
                .map_err(|e| Error::InvalidArgument(format!("noise sigma: {e}")))?;
            let mut rng = seed::rng(seed);
            let noisy = image.map(|v| {
                let n = normal.sample(&mut rng);
                S::from_f64_lossy((v.to_f64_exact() + n).clamp(0.0, 1.0))
            });
            upscale(&noisy, scale, *kernel)?
        }
        Family::SharpenAfterUpsample {
            amount,
            sigma,
            kernel,
        } => {
            let up = upscale(image, scale, *kernel)?.clamp01();
            let blurred = resample::gaussian_blur(&up, *sigma);
            let a = S::lit(*amount);
            let mut out = up.clone();
            for (o, (&u, &b)) in out
                .data_mut()
                .iter_mut()
                .zip(up.data().iter().zip(blurred.data()))
            {
                *o = u + a * (u - b);
            }
            out
        }
        Family::CompressionAfterUpsample { quality, kernel } => {
            jpeg_round_trip(&upscale(image, scale, *kernel)?.clamp01(), *quality)?
        }
        Family::ExternalCommand { program, args } => {
            let out = run_external(image, &op.method_id, program, args, scale, seed)?;
            let want = (
                resample::scaled_len(image.height(), scale),
                resample::scaled_len(image.width(), scale),
            );
            if (out.height(), out.width()) != want {
                return Err(Error::ExternalCommand {
                    method_id: op.method_id.clone(),
                    status: "bad output dims".into(),
                    stderr: format!(
                        "expected {}x{}, got {}x{}",
                        want.0,
                        want.1,
                        out.height(),
                        out.width()
                    ),
                });
            }
            out
        }
    };
    Ok(out.clamp01())
}

/// Six classical pipelines used for desk-scale experiments. Severity ranks
/// order them from mildest (1) to harshest.
pub fn default_bank() -> Vec<DegradationOperator> {
    vec![
        DegradationOperator::new(
            "bicubic",
            Family::Interpolation {
                kernel: Kernel::Bicubic,
            },
            &[2.0, 3.0, 4.0],
        )
        .with_severity(1),
        DegradationOperator::new(
            "sharpen",
            Family::SharpenAfterUpsample {
                amount: 1.5,
                sigma: 1.0,
                kernel: Kernel::Bilinear,
            },
            &[2.0, 3.0, 4.0],
        )
        .with_severity(2),
        DegradationOperator::new(
            "nearest",
            Family::Interpolation {
                kernel: Kernel::Nearest,
            },
            &[2.0, 3.0, 4.0],
        )
        .with_severity(3),
        DegradationOperator::new(
            "blur",
            Family::BlurThenUpsample {
                sigma: 1.2,
                kernel: Kernel::Bicubic,
            },
            &[2.0, 3.0, 4.0],
        )
        .with_severity(4),
        DegradationOperator::new(
            "jpeg",
            Family::CompressionAfterUpsample {
                quality: 20,
                kernel: Kernel::Bicubic,
            },
            &[2.0, 4.0],
        )
        .with_severity(5),
        DegradationOperator::new(
            "noise",
            Family::NoiseThenUpsample {
                sigma: 0.06,
                kernel: Kernel::Bilinear,
            },
            &[2.0, 3.0, 4.0],
        )
        .with_severity(6),
    ]
}

/// Thirteen proxies whose scale support mirrors the published SR-method
/// table (one interpolation method, then CNN, GAN, transformer, graph,
/// diffusion, implicit and lightweight families).
pub fn reference_support_bank() -> Vec<DegradationOperator> {
    let all = [2.0, 3.0, 4.0];
    let two_four = [2.0, 4.0];
    let four = [4.0];
    let interp = |k| Family::Interpolation { kernel: k };
    let blur = |s| Family::BlurThenUpsample {
        sigma: s,
        kernel: Kernel::Bicubic,
    };
    let sharpen = |a| Family::SharpenAfterUpsample {
        amount: a,
        sigma: 1.0,
        kernel: Kernel::Bicubic,
    };
    let noise = |s| Family::NoiseThenUpsample {
        sigma: s,
        kernel: Kernel::Bilinear,
    };
    let jpeg = |q| Family::CompressionAfterUpsample {
        quality: q,
        kernel: Kernel::Bicubic,
    };
    vec![
        DegradationOperator::new("interp-bicubic", interp(Kernel::Bicubic), &all),
        DegradationOperator::new("cnn-a", sharpen(0.5), &all),
        DegradationOperator::new("cnn-b", sharpen(0.8), &all),
        DegradationOperator::new("cnn-c", blur(0.6), &all),
        DegradationOperator::new("gan-a", noise(0.03), &two_four),
        DegradationOperator::new("gan-b", sharpen(2.0), &two_four),
        DegradationOperator::new("gan-c", noise(0.05), &all),
        DegradationOperator::new("transformer-a", interp(Kernel::Lanczos3), &all),
        DegradationOperator::new("graph-a", sharpen(1.2), &four),
        DegradationOperator::new("diffusion-a", jpeg(35), &four),
        DegradationOperator::new("implicit-a", interp(Kernel::Bilinear), &all),
        DegradationOperator::new("light-a", blur(0.9), &all),
        DegradationOperator::new("light-b", jpeg(60), &four),
    ]
}

fn scale_dir(scale: f64) -> String {
    format!("x{scale}")
}

fn list_images(lr_dir: &Path) -> Result<Vec<PathBuf>> {
    let rd = std::fs::read_dir(lr_dir).map_err(|e| Error::io(lr_dir, e))?;
    let mut out = Vec::new();
    for entry in rd {
        let entry = entry.map_err(|e| Error::io(lr_dir, e))?;
        let path = entry.path();
        let is_image = path
            .extension()
            .and_then(|e| e.to_str())
            .map(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
            .unwrap_or(false);
        if is_image && path.is_file() {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

/// Record counts [`forge`] would produce, without touching pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ForgePlan {
    pub lr_images: usize,
    pub sr_records: usize,
    pub ds_records: usize,
}

pub fn plan(lr_dir: &Path, operators: &[DegradationOperator], scales: &[f64]) -> Result<ForgePlan> {
    let lr_images = list_images(lr_dir)?.len();
    let combos: usize = operators
        .iter()
        .map(|op| scales.iter().filter(|&&s| op.supports(s)).count())
        .sum();
    Ok(ForgePlan {
        lr_images,
        sr_records: combos * lr_images,
        ds_records: combos * lr_images,
    })
}

fn forge_one(
    path: &Path,
    operators: &[DegradationOperator],
    scales: &[f64],
    out_dir: &Path,
    base_seed: u64,
) -> Result<Vec<ImageRecord>> {
    let lr = Image::<f32>::load(path)?;
    let content_id = path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| Error::Data(format!("{}: non UTF-8 file name", path.display())))?
        .to_string();
    let file = format!("{content_id}.png");
    let lr_rel = format!("lr/{file}");
    lr.save_png(&out_dir.join(&lr_rel))?;
    let mut records = vec![ImageRecord {
        path: lr_rel,
        content_id: content_id.clone(),
        method_id: NO_METHOD.into(),
        scale: 1.0,
        role: Role::Lr,
        height: lr.height(),
        width: lr.width(),
        channels: lr.channels(),
    }];
    for op in operators {
        for &scale in scales.iter().filter(|&&s| op.supports(s)) {
            let s = seed::derive(
                base_seed,
                &["forge", &content_id, &op.method_id, &scale.to_string()],
            );
            let sr = apply_degradation(&lr, op, scale, s)?;
            let ds = lanczos_half(&sr)?;
            for (role, img, top) in [(Role::Sr, &sr, "sr"), (Role::Ds, &ds, "ds")] {
                let rel = format!("{top}/{}/{}/{file}", op.method_id, scale_dir(scale));
                let full = out_dir.join(&rel);
                if let Some(parent) = full.parent() {
                    std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
                }
                img.save_png(&full)?;
                records.push(ImageRecord {
                    path: rel,
                    content_id: content_id.clone(),
                    method_id: op.method_id.clone(),
                    scale,
                    role,
                    height: img.height(),
                    width: img.width(),
                    channels: img.channels(),
                });
            }
        }
    }
    Ok(records)
}

/// Build a pretext dataset under `out_dir` and write `out_dir/manifest.tsv`.
///
/// For every LR image and every supported `(operator, scale)` pair one SR
/// record and its half-scale DS counterpart are written. LR images that
/// fail to decode are skipped with a warning. Seeds are derived from
/// `(content_id, method_id, scale)`, so the output does not depend on the
/// parallel schedule.
pub fn forge(
    lr_dir: &Path,
    operators: &[DegradationOperator],
    scales: &[f64],
    out_dir: &Path,
    seed: u64,
) -> Result<Manifest> {
    let inputs = list_images(lr_dir)?;
    if inputs.is_empty() {
        return Err(Error::Data(format!(
            "no images found in {}",
            lr_dir.display()
        )));
    }
    for op in operators {
        if op.supports(1.0) || op.supported_scales.iter().any(|&s| s <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "operator {} lists a scale <= 1",
                op.method_id
            )));
        }
    }
    let lr_out = out_dir.join("lr");
    std::fs::create_dir_all(&lr_out).map_err(|e| Error::io(&lr_out, e))?;

    let results: Vec<(PathBuf, Result<Vec<ImageRecord>>)> = inputs
        .par_iter()
        .map(|p| (p.clone(), forge_one(p, operators, scales, out_dir, seed)))
        .collect();

    let mut entries = Vec::new();
    for (path, res) in results {
        match res {
            Ok(records) => entries.extend(records.into_iter().map(|record| {
                let split = if record.role.is_degraded() {
                    SplitTag::Pretext
                } else {
                    SplitTag::Unassigned
                };
                ManifestEntry { record, split }
            })),
            Err(Error::Codec { path: p, message }) if p == path => {
                warn!("skipping unreadable image {}: {message}", p.display());
            }
            Err(e) => return Err(e),
        }
    }
    let sr_count = entries
        .iter()
        .filter(|e| e.record.role == Role::Sr)
        .count();
    if sr_count == 0 {
        return Err(Error::Data(
            "forge produced no SR outputs (check operators and scales)".into(),
        ));
    }

    let mut metadata = Metadata::new();
    metadata.insert(
        "operators".into(),
        serde_json::to_value(operators).expect("operators serialize"),
    );
    metadata.insert("scales".into(), serde_json::json!(scales));
    metadata.insert("seed".into(), serde_json::json!(seed));
    let manifest = Manifest::new(metadata, entries)?;
    write_manifest(&manifest, &out_dir.join(MANIFEST_FILE))?;
    info!(
        "forged {} SR + {} DS records from {} LR images",
        sr_count,
        sr_count,
        manifest.summary().lr
    );
    Ok(manifest)
}

/// Mean absolute pixel difference between every pair of operators that
/// support `scale`, applied to the same input.
pub fn pairwise_operator_differences(
    image: &Image<f32>,
    operators: &[DegradationOperator],
    scale: f64,
    seed: u64,
) -> Result<Vec<(String, String, f64)>> {
    let outputs: Vec<(String, Image<f32>)> = operators
        .iter()
        .filter(|op| op.supports(scale))
        .map(|op| Ok((op.method_id.clone(), apply_degradation(image, op, scale, seed)?)))
        .collect::<Result<_>>()?;
    let mut out = Vec::new();
    for i in 0..outputs.len() {
        for j in i + 1..outputs.len() {
            let d = outputs[i].1.mean_abs_diff(&outputs[j].1)? as f64;
            out.push((outputs[i].0.clone(), outputs[j].0.clone(), d));
        }
    }
    Ok(out)
}
