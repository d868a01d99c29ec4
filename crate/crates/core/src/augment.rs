//! Degradation-free view transforms: colour-space conversion and flips.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forge::resample::gaussian_blur;
use crate::image::Image;
use crate::scalar::Scalar;
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ColorSpace {
    Grayscale,
    #[serde(rename = "RGB")]
    Rgb,
    #[serde(rename = "LAB")]
    Lab,
    #[serde(rename = "HSV")]
    Hsv,
    /// Mean-subtracted luminance.
    #[serde(rename = "MS")]
    Ms,
}

impl ColorSpace {
    pub const ALL: [ColorSpace; 5] = [
        ColorSpace::Grayscale,
        ColorSpace::Rgb,
        ColorSpace::Lab,
        ColorSpace::Hsv,
        ColorSpace::Ms,
    ];
}

/// How the mean is estimated for [`ColorSpace::Ms`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum MsMode {
    /// Gaussian-weighted local mean (sigma 7/6, radius 3).
    #[default]
    LocalMean,
    /// Single mean over the whole crop.
    CropMean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    /// Spaces sampled uniformly by [`sample_view`]; `[RGB]` disables the transform.
    pub spaces: Vec<ColorSpace>,
    pub ms_mode: MsMode,
    pub flips: bool,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            spaces: ColorSpace::ALL.to_vec(),
            ms_mode: MsMode::LocalMean,
            flips: true,
        }
    }
}

impl AugmentConfig {
    pub fn rgb_only() -> Self {
        Self {
            spaces: vec![ColorSpace::Rgb],
            ..Self::default()
        }
    }
}

const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

fn luma(r: f64, g: f64, b: f64) -> f64 {
    LUMA[0] * r + LUMA[1] * g + LUMA[2] * b
}

/// `(h, s, v)` with hue in turns, all in `[0,1]`.
pub fn rgb_to_hsv(r: f64, g: f64, b: f64) -> (f64, f64, f64) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let hue = if delta <= 0.0 {
        0.0
    } else if max == r {
        ((g - b) / delta).rem_euclid(6.0)
    } else if max == g {
        (b - r) / delta + 2.0
    } else {
        (r - g) / delta + 4.0
    };
    let s = if max <= 0.0 { 0.0 } else { delta / max };
    (hue / 6.0, s, max)
}

fn srgb_to_linear(c: f64) -> f64 {
    if c <= 0.04045 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

/// CIE L*a*b* under D65, unscaled.
pub fn rgb_to_lab(r: f64, g: f64, b: f64) -> (f64, f64, f64) {
    let (r, g, b) = (srgb_to_linear(r), srgb_to_linear(g), srgb_to_linear(b));
    let x = (0.412_456_4 * r + 0.357_576_1 * g + 0.180_437_5 * b) / 0.950_47;
    let y = 0.212_672_9 * r + 0.715_152_2 * g + 0.072_175_0 * b;
    let z = (0.019_333_9 * r + 0.119_192 * g + 0.950_304_1 * b) / 1.088_83;
    let f = |t: f64| {
        if t > 216.0 / 24389.0 {
            t.cbrt()
        } else {
            (24389.0 / 27.0 * t + 16.0) / 116.0
        }
    };
    let (fx, fy, fz) = (f(x), f(y), f(z));
    (116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz))
}

fn per_pixel<S: Scalar>(crop: &Image<S>, f: impl Fn(f64, f64, f64) -> [f64; 3]) -> Image<S> {
    let mut out = crop.clone();
    for px in out.data_mut().chunks_exact_mut(3) {
        let v = f(px[0].to_f64_exact(), px[1].to_f64_exact(), px[2].to_f64_exact());
        for (o, x) in px.iter_mut().zip(v) {
            *o = S::from_f64_lossy(x.clamp(0.0, 1.0));
        }
    }
    out
}

fn mean_subtracted<S: Scalar>(crop: &Image<S>, mode: MsMode) -> Image<S> {
    let (h, w, _) = crop.dims();
    let y: Image<f64> = Image::from_fn(h, w, 1, |yy, xx, _| {
        luma(
            crop.get(yy, xx, 0).to_f64_exact(),
            crop.get(yy, xx, 1).to_f64_exact(),
            crop.get(yy, xx, 2).to_f64_exact(),
        )
    });
    let mean = match mode {
        MsMode::LocalMean => gaussian_blur(&y, 7.0 / 6.0),
        MsMode::CropMean => {
            let m = y.data().iter().sum::<f64>() / (h * w) as f64;
            Image::filled(h, w, 1, m)
        }
    };
    Image::from_fn(h, w, 3, |yy, xx, _| {
        let d = y.get(yy, xx, 0) - mean.get(yy, xx, 0);
        S::from_f64_lossy((0.5 + 0.5 * d).clamp(0.0, 1.0))
    })
}

/// Convert an RGB crop in `[0,1]` into `space`, always returning three
/// channels in `[0,1]` (single-channel spaces are replicated).
pub fn to_color_space<S: Scalar>(crop: &Image<S>, space: ColorSpace, ms_mode: MsMode) -> Result<Image<S>> {
    if crop.channels() != 3 {
        return Err(Error::Shape(format!(
            "colour conversion needs 3 channels, got {}",
            crop.channels()
        )));
    }
    Ok(match space {
        ColorSpace::Rgb => crop.clone(),
        ColorSpace::Grayscale => per_pixel(crop, |r, g, b| [luma(r, g, b); 3]),
        ColorSpace::Hsv => per_pixel(crop, |r, g, b| {
            let (h, s, v) = rgb_to_hsv(r, g, b);
            [h, s, v]
        }),
        ColorSpace::Lab => per_pixel(crop, |r, g, b| {
            let (l, a, bb) = rgb_to_lab(r, g, b);
            [l / 100.0, (a + 128.0) / 255.0, (bb + 128.0) / 255.0]
        }),
        ColorSpace::Ms => mean_subtracted(crop, ms_mode),
    })
}

pub fn apply_flip<S: Scalar>(crop: &Image<S>, horizontal: bool, vertical: bool) -> Image<S> {
    if !horizontal && !vertical {
        return crop.clone();
    }
    let (h, w, c) = crop.dims();
    Image::from_fn(h, w, c, |y, x, ch| {
        let sy = if vertical { h - 1 - y } else { y };
        let sx = if horizontal { w - 1 - x } else { x };
        crop.get(sy, sx, ch)
    })
}

/// `(horizontal, vertical)` flip decisions for a seed, each with probability 1/2.
pub fn flip_outcome(seed: u64) -> (bool, bool) {
    let mut rng = seed::rng(seed);
    (rng.random_bool(0.5), rng.random_bool(0.5))
}

pub fn random_flip<S: Scalar>(crop: &Image<S>, seed: u64) -> Image<S> {
    let (h, v) = flip_outcome(seed);
    apply_flip(crop, h, v)
}

/// Sampled transform for one view.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ViewPlan {
    pub space: ColorSpace,
    pub flip_h: bool,
    pub flip_v: bool,
}

pub fn view_plan(seed: u64, config: &AugmentConfig) -> ViewPlan {
    let mut rng = seed::rng(seed::derive(seed, &["view"]));
    let space = if config.spaces.is_empty() {
        ColorSpace::Rgb
    } else {
        config.spaces[rng.random_range(0..config.spaces.len())]
    };
    let (flip_h, flip_v) = if config.flips {
        (rng.random_bool(0.5), rng.random_bool(0.5))
    } else {
        (false, false)
    };
    ViewPlan {
        space,
        flip_h,
        flip_v,
    }
}

pub fn apply_view<S: Scalar>(crop: &Image<S>, plan: ViewPlan, config: &AugmentConfig) -> Result<Image<S>> {
    let converted = to_color_space(crop, plan.space, config.ms_mode)?;
    Ok(apply_flip(&converted, plan.flip_h, plan.flip_v))
}

/// Uniformly sampled colour space followed by random flips.
pub fn sample_view<S: Scalar>(crop: &Image<S>, seed: u64, config: &AugmentConfig) -> Result<Image<S>> {
    apply_view(crop, view_plan(seed, config), config)
}
