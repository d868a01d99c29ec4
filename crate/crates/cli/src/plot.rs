//! Minimal line chart rendered straight into a PNG.

use std::path::Path;

use anyhow::{Context, Result};
use image::{Rgb, RgbImage};

const W: u32 = 800;
const H: u32 = 480;
const MARGIN: f64 = 48.0;

pub struct Series<'a> {
    pub color: [u8; 3],
    pub points: &'a [(f64, f64)],
}

fn line(img: &mut RgbImage, (x0, y0): (f64, f64), (x1, y1): (f64, f64), c: Rgb<u8>) {
    let steps = (x1 - x0).abs().max((y1 - y0).abs()).ceil().max(1.0) as usize;
    for i in 0..=steps {
        let t = i as f64 / steps as f64;
        let (x, y) = (x0 + t * (x1 - x0), y0 + t * (y1 - y0));
        if x >= 0.0 && y >= 0.0 && (x as u32) < W && (y as u32) < H {
            img.put_pixel(x as u32, y as u32, c);
        }
    }
}

/// Plot every series on shared axes scaled to the data range.
pub fn line_chart(series: &[Series<'_>], path: &Path) -> Result<()> {
    let mut img = RgbImage::from_pixel(W, H, Rgb([255, 255, 255]));
    let all = series.iter().flat_map(|s| s.points.iter()).filter(|p| p.0.is_finite() && p.1.is_finite());
    let (mut xmin, mut xmax, mut ymin, mut ymax) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for &(x, y) in all {
        xmin = xmin.min(x);
        xmax = xmax.max(x);
        ymin = ymin.min(y);
        ymax = ymax.max(y);
    }
    if xmin > xmax {
        (xmin, xmax, ymin, ymax) = (0.0, 1.0, 0.0, 1.0);
    }
    if xmax == xmin {
        xmax = xmin + 1.0;
    }
    if ymax == ymin {
        ymax = ymin + 1.0;
    }
    let (pw, ph) = (W as f64 - 2.0 * MARGIN, H as f64 - 2.0 * MARGIN);
    let map = |(x, y): (f64, f64)| {
        (
            MARGIN + (x - xmin) / (xmax - xmin) * pw,
            H as f64 - MARGIN - (y - ymin) / (ymax - ymin) * ph,
        )
    };
    let axis = Rgb([0, 0, 0]);
    line(&mut img, (MARGIN, H as f64 - MARGIN), (W as f64 - MARGIN, H as f64 - MARGIN), axis);
    line(&mut img, (MARGIN, MARGIN), (MARGIN, H as f64 - MARGIN), axis);
    for k in 0..=10 {
        let x = MARGIN + k as f64 * pw / 10.0;
        let y = H as f64 - MARGIN - k as f64 * ph / 10.0;
        line(&mut img, (x, H as f64 - MARGIN), (x, H as f64 - MARGIN + 5.0), axis);
        line(&mut img, (MARGIN - 5.0, y), (MARGIN, y), axis);
    }
    for s in series {
        let c = Rgb(s.color);
        for w in s.points.windows(2) {
            line(&mut img, map(w[0]), map(w[1]), c);
        }
    }
    img.save(path).with_context(|| format!("writing {}", path.display()))
}
