//! Separable resampling kernels, Gaussian filtering and cropping.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::scalar::Scalar;

/// Lobe count of the Lanczos window used for half-scale copies.
pub const LANCZOS_LOBES: f64 = 3.0;

/// Keys cubic convolution parameter.
pub const BICUBIC_A: f64 = -0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kernel {
    Nearest,
    Bilinear,
    Bicubic,
    Lanczos3,
}

impl Kernel {
    fn support(self) -> f64 {
        match self {
            Kernel::Nearest => 0.5,
            Kernel::Bilinear => 1.0,
            Kernel::Bicubic => 2.0,
            Kernel::Lanczos3 => LANCZOS_LOBES,
        }
    }

    pub fn weight(self, x: f64) -> f64 {
        let ax = x.abs();
        match self {
            Kernel::Nearest => {
                if ax < 0.5 {
                    1.0
                } else {
                    0.0
                }
            }
            Kernel::Bilinear => (1.0 - ax).max(0.0),
            Kernel::Bicubic => {
                let a = BICUBIC_A;
                if ax <= 1.0 {
                    ((a + 2.0) * ax - (a + 3.0)) * ax * ax + 1.0
                } else if ax < 2.0 {
                    ((a * ax - 5.0 * a) * ax + 8.0 * a) * ax - 4.0 * a
                } else {
                    0.0
                }
            }
            Kernel::Lanczos3 => lanczos(x, LANCZOS_LOBES),
        }
    }
}

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}

pub fn lanczos(x: f64, a: f64) -> f64 {
    if x.abs() < a {
        sinc(x) * sinc(x / a)
    } else {
        0.0
    }
}

/// Output length for magnification `scale`: round half away from zero.
pub fn scaled_len(n: usize, scale: f64) -> usize {
    (n as f64 * scale).round() as usize
}

/// Per-output-sample taps `(first_index, weights)` with replicate borders
/// folded in and weights normalized to unit sum.
#[derive(Debug, Clone)]
struct Taps {
    entries: Vec<Vec<(usize, f64)>>,
}

impl Taps {
    fn new(in_len: usize, out_len: usize, kernel: Kernel) -> Self {
        let ratio = in_len as f64 / out_len as f64;
        if kernel == Kernel::Nearest {
            let entries = (0..out_len)
                .map(|o| {
                    let src = (((o as f64) + 0.5) * ratio).floor() as usize;
                    vec![(src.min(in_len - 1), 1.0)]
                })
                .collect();
            return Self { entries };
        }
        let stretch = ratio.max(1.0);
        let radius = kernel.support() * stretch;
        let last = in_len as isize - 1;
        let entries = (0..out_len)
            .map(|o| {
                let center = (o as f64 + 0.5) * ratio - 0.5;
                let lo = (center - radius).floor() as isize;
                let hi = (center + radius).ceil() as isize;
                let mut taps: Vec<(usize, f64)> = Vec::with_capacity((hi - lo + 1) as usize);
                let mut total = 0.0;
                for j in lo..=hi {
                    let w = kernel.weight((j as f64 - center) / stretch);
                    if w == 0.0 {
                        continue;
                    }
                    let idx = j.clamp(0, last) as usize;
                    total += w;
                    match taps.iter_mut().find(|(i, _)| *i == idx) {
                        Some(t) => t.1 += w,
                        None => taps.push((idx, w)),
                    }
                }
                for t in &mut taps {
                    t.1 /= total;
                }
                taps
            })
            .collect();
        Self { entries }
    }
}

/// Separable resize to `out_h x out_w`. Downscaling stretches the kernel
/// by the reduction ratio (anti-aliased); borders replicate edge pixels.
pub fn resize<S: Scalar>(img: &Image<S>, out_h: usize, out_w: usize, kernel: Kernel) -> Result<Image<S>> {
    let (h, w, c) = img.dims();
    if h == 0 || w == 0 || out_h == 0 || out_w == 0 {
        return Err(Error::Shape(format!(
            "cannot resize {h}x{w} to {out_h}x{out_w}"
        )));
    }
    let cols = Taps::new(w, out_w, kernel);
    let rows = Taps::new(h, out_h, kernel);

    let mut horiz = vec![0.0f64; h * out_w * c];
    for y in 0..h {
        for (ox, taps) in cols.entries.iter().enumerate() {
            for ch in 0..c {
                // Weights sum to one, so accumulating offsets from the first
                // tap keeps flat regions exactly flat.
                let base = img.get(y, taps[0].0, ch).to_f64_exact();
                let mut acc = 0.0;
                for &(ix, wt) in taps {
                    acc += wt * (img.get(y, ix, ch).to_f64_exact() - base);
                }
                acc += base;
                horiz[(y * out_w + ox) * c + ch] = acc;
            }
        }
    }
    let mut out = Image::new(out_h, out_w, c);
    for (oy, taps) in rows.entries.iter().enumerate() {
        for ox in 0..out_w {
            for ch in 0..c {
                let base = horiz[(taps[0].0 * out_w + ox) * c + ch];
                let mut acc = 0.0;
                for &(iy, wt) in taps {
                    acc += wt * (horiz[(iy * out_w + ox) * c + ch] - base);
                }
                acc += base;
                out.set(oy, ox, ch, S::from_f64_lossy(acc));
            }
        }
    }
    Ok(out)
}

/// Magnify by `scale` to `(round(H*s), round(W*s))`.
pub fn upscale<S: Scalar>(img: &Image<S>, scale: f64, kernel: Kernel) -> Result<Image<S>> {
    resize(
        img,
        scaled_len(img.height(), scale),
        scaled_len(img.width(), scale),
        kernel,
    )
}

/// Half-scale copy: `(floor(H/2), floor(W/2))`, Lanczos a=3, clamped to `[0,1]`.
pub fn lanczos_half<S: Scalar>(img: &Image<S>) -> Result<Image<S>> {
    if img.height() < 2 || img.width() < 2 {
        return Err(Error::Shape(format!(
            "half-scale needs at least 2x2 input, got {}x{}",
            img.height(),
            img.width()
        )));
    }
    Ok(resize(img, img.height() / 2, img.width() / 2, Kernel::Lanczos3)?.clamp01())
}

pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil().max(1.0) as isize;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = k.iter().sum();
    for v in &mut k {
        *v /= total;
    }
    k
}

/// Separable Gaussian blur with replicated borders; radius `ceil(3 sigma)`.
pub fn gaussian_blur<S: Scalar>(img: &Image<S>, sigma: f64) -> Image<S> {
    if sigma <= 0.0 {
        return img.clone();
    }
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let (h, w, c) = img.dims();
    let clampi = |i: isize, n: usize| i.clamp(0, n as isize - 1) as usize;
    let mut tmp = vec![0.0f64; h * w * c];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let mut acc = 0.0;
                for (t, &wt) in k.iter().enumerate() {
                    let ix = clampi(x as isize + t as isize - r, w);
                    acc += wt * img.get(y, ix, ch).to_f64_exact();
                }
                tmp[(y * w + x) * c + ch] = acc;
            }
        }
    }
    Image::from_fn(h, w, c, |y, x, ch| {
        let mut acc = 0.0;
        for (t, &wt) in k.iter().enumerate() {
            let iy = clampi(y as isize + t as isize - r, h);
            acc += wt * tmp[(iy * w + x) * c + ch];
        }
        S::from_f64_lossy(acc)
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CropPosition {
    Random,
    TopLeft,
    TopRight,
    BottomLeft,
    BottomRight,
    Center,
}

impl CropPosition {
    /// The deterministic five-crop set: four corners then the center.
    pub const FIVE: [CropPosition; 5] = [
        CropPosition::TopLeft,
        CropPosition::TopRight,
        CropPosition::BottomLeft,
        CropPosition::BottomRight,
        CropPosition::Center,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CropSpec {
    pub size: usize,
    pub position: CropPosition,
    pub seed: u64,
}

impl CropSpec {
    pub fn at(size: usize, position: CropPosition) -> Self {
        Self {
            size,
            position,
            seed: 0,
        }
    }

    pub fn random(size: usize, seed: u64) -> Self {
        Self {
            size,
            position: CropPosition::Random,
            seed,
        }
    }
}

/// Mirror index without repeating the edge sample (`dcb|abcd|cba`).
fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}

/// Reflect-pad each spatial side so both dims reach at least `size`,
/// splitting the padding evenly (extra pixel on the bottom/right).
pub fn pad_to<S: Scalar>(img: &Image<S>, size: usize) -> Image<S> {
    let (h, w, c) = img.dims();
    if h >= size && w >= size {
        return img.clone();
    }
    let nh = h.max(size);
    let nw = w.max(size);
    let top = ((nh - h) / 2) as isize;
    let left = ((nw - w) / 2) as isize;
    Image::from_fn(nh, nw, c, |y, x, ch| {
        img.get(reflect(y as isize - top, h), reflect(x as isize - left, w), ch)
    })
}

/// `size x size` window at the requested position.
pub fn crop<S: Scalar>(img: &Image<S>, spec: &CropSpec) -> Result<Image<S>> {
    if spec.size == 0 {
        return Err(Error::InvalidArgument("crop size must be >= 1".into()));
    }
    if img.is_empty() {
        return Err(Error::Shape("cannot crop an empty image".into()));
    }
    let padded = pad_to(img, spec.size);
    let max_y = padded.height() - spec.size;
    let max_x = padded.width() - spec.size;
    let (top, left) = match spec.position {
        CropPosition::TopLeft => (0, 0),
        CropPosition::TopRight => (0, max_x),
        CropPosition::BottomLeft => (max_y, 0),
        CropPosition::BottomRight => (max_y, max_x),
        CropPosition::Center => (max_y / 2, max_x / 2),
        CropPosition::Random => {
            let mut rng = crate::seed::rng(spec.seed);
            (rng.random_range(0..=max_y), rng.random_range(0..=max_x))
        }
    };
    Ok(padded.window(top, left, spec.size, spec.size))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(h: usize, w: usize) -> Image<f64> {
        Image::from_fn(h, w, 3, |y, x, c| ((y * w + x) as f64 / (h * w) as f64 + 0.1 * c as f64) % 1.0)
    }

    #[test]
    fn nearest_x2_tiles_blocks() {
        let img = Image::<f64>::from_fn(4, 4, 1, |y, x, _| (y * 4 + x) as f64);
        let up = upscale(&img, 2.0, Kernel::Nearest).unwrap();
        assert_eq!(up.dims(), (8, 8, 1));
        for y in 0..8 {
            for x in 0..8 {
                assert_eq!(up.get(y, x, 0), img.get(y / 2, x / 2, 0));
            }
        }
    }

    #[test]
    fn output_dims_round_half_away() {
        let img = ramp(5, 7);
        let up = upscale(&img, 2.5, Kernel::Bicubic).unwrap();
        // 12.5 -> 13, 17.5 -> 18
        assert_eq!((up.height(), up.width()), (13, 18));
    }

    #[test]
    fn lanczos_half_dc_and_dims() {
        let img = Image::<f64>::filled(64, 64, 3, 0.37);
        let half = lanczos_half(&img).unwrap();
        assert_eq!(half.dims(), (32, 32, 3));
        assert!(half.data().iter().all(|&v| (v - 0.37).abs() < 1e-12));
        assert_eq!(lanczos_half(&ramp(65, 33)).unwrap().dims(), (32, 16, 3));
        assert!(lanczos_half(&ramp(1, 8)).is_err());
    }

    #[test]
    fn lanczos_half_clamps_range() {
        let img = Image::<f64>::from_fn(16, 16, 1, |_, x, _| if x % 2 == 0 { 1.0 } else { 0.0 });
        let step = Image::<f64>::from_fn(16, 16, 1, |_, x, _| if x < 8 { 1.0 } else { 0.0 });
        for src in [img, step] {
            let half = lanczos_half(&src).unwrap();
            assert!(half.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn crop_positions() {
        let img = Image::<f64>::from_fn(512, 512, 1, |y, x, _| (y * 512 + x) as f64);
        let c = crop(&img, &CropSpec::at(256, CropPosition::Center)).unwrap();
        assert_eq!(c.get(0, 0, 0), (128 * 512 + 128) as f64);
        let br = crop(&img, &CropSpec::at(256, CropPosition::BottomRight)).unwrap();
        assert_eq!(br.get(255, 255, 0), (511 * 512 + 511) as f64);
        let exact = ramp(9, 9);
        for pos in CropPosition::FIVE.into_iter().chain([CropPosition::Random]) {
            let spec = CropSpec { size: 9, position: pos, seed: 5 };
            assert_eq!(crop(&exact, &spec).unwrap(), exact);
        }
    }

    #[test]
    fn random_crop_is_seeded() {
        let img = ramp(40, 50);
        let a = crop(&img, &CropSpec::random(16, 99)).unwrap();
        let b = crop(&img, &CropSpec::random(16, 99)).unwrap();
        assert_eq!(a, b);
        let distinct = (0..20)
            .map(|s| crop(&img, &CropSpec::random(16, s)).unwrap().data()[0].to_bits())
            .collect::<std::collections::HashSet<_>>();
        assert!(distinct.len() > 1);
    }

    #[test]
    fn small_images_are_reflect_padded() {
        let img = Image::<f64>::from_fn(2, 3, 1, |y, x, _| (y * 3 + x) as f64);
        let c = crop(&img, &CropSpec::at(5, CropPosition::TopLeft)).unwrap();
        assert_eq!(c.dims(), (5, 5, 1));
        // rows: pad top 1 -> reflect(-1)=1; cols: pad left 1 -> reflect(-1)=1
        assert_eq!(c.get(0, 0, 0), img.get(1, 1, 0));
        assert_eq!(c.get(1, 1, 0), img.get(0, 0, 0));
        let one = Image::<f64>::filled(1, 1, 3, 0.5);
        assert!(crop(&one, &CropSpec::at(4, CropPosition::Center))
            .unwrap()
            .data()
            .iter()
            .all(|&v| v == 0.5));
    }

    #[test]
    fn kernels_partition_unity_on_integer_shifts() {
        for k in [Kernel::Bilinear, Kernel::Bicubic, Kernel::Lanczos3] {
            for frac in [0.0, 0.25, 0.5, 0.8] {
                let s: f64 = (-4..=4).map(|i| k.weight(i as f64 + frac)).sum();
                let tol = if k == Kernel::Lanczos3 { 0.02 } else { 1e-12 };
                assert!((s - 1.0).abs() < tol, "{k:?} {frac} {s}");
            }
        }
    }
}
