//! Brute-force reference implementations for the test suites.
//!
//! Everything here is written from the defining formulas in plain `f64`
//! with no code shared with the main crates, so agreement between the two
//! is evidence rather than tautology. Speed is not a goal.

use std::f64::consts::PI;
use std::fmt;

/// One main-path versus oracle comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleReport {
    pub case: String,
    pub main: f64,
    pub oracle: f64,
    pub abs_err: f64,
    pub rel_err: f64,
    pub tolerance: f64,
    pub relative: bool,
    pub pass: bool,
}

impl OracleReport {
    /// Pass when `|main - oracle| <= tolerance`.
    pub fn absolute(case: impl Into<String>, main: f64, oracle: f64, tolerance: f64) -> Self {
        Self::build(case.into(), main, oracle, tolerance, false)
    }

    /// Pass when `|main - oracle| / max(|oracle|, tiny) <= tolerance`.
    pub fn relative(case: impl Into<String>, main: f64, oracle: f64, tolerance: f64) -> Self {
        Self::build(case.into(), main, oracle, tolerance, true)
    }

    fn build(case: String, main: f64, oracle: f64, tolerance: f64, relative: bool) -> Self {
        let abs_err = (main - oracle).abs();
        let rel_err = abs_err / oracle.abs().max(1e-300);
        let err = if relative { rel_err } else { abs_err };
        Self {
            case,
            main,
            oracle,
            abs_err,
            rel_err,
            tolerance,
            relative,
            pass: err <= tolerance,
        }
    }
}

impl fmt::Display for OracleReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "[{}] {}: main={:.12e} oracle={:.12e} abs={:.3e} rel={:.3e} tol={:.1e} ({})",
            if self.pass { "ok" } else { "FAIL" },
            self.case,
            self.main,
            self.oracle,
            self.abs_err,
            self.rel_err,
            self.tolerance,
            if self.relative { "relative" } else { "absolute" }
        )
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += a[i] * b[i];
    }
    s
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    dot(a, b) / (dot(a, a).sqrt() * dot(b, b).sqrt())
}

/// NT-Xent summed over every item, written as the literal ratio
/// `exp(sim(k, partner)/tau) / sum_{m != k} exp(sim(k, m)/tau)`.
pub fn oracle_nt_xent(z: &[Vec<f64>], pair_index: &[usize], tau: f64) -> f64 {
    let n = z.len();
    let mut total = 0.0;
    for k in 0..n {
        let numerator = (cosine(&z[k], &z[pair_index[k]]) / tau).exp();
        let mut denominator = 0.0;
        for m in 0..n {
            if m != k {
                denominator += (cosine(&z[k], &z[m]) / tau).exp();
            }
        }
        total += -(numerator / denominator).ln();
    }
    total
}

/// Central-difference gradient of `f` at `params`.
pub fn oracle_grad(f: impl Fn(&[f64]) -> f64, params: &[f64], eps: f64) -> Vec<f64> {
    let mut p = params.to_vec();
    let mut g = Vec::with_capacity(params.len());
    for i in 0..params.len() {
        let orig = p[i];
        p[i] = orig + eps;
        let up = f(&p);
        p[i] = orig - eps;
        let down = f(&p);
        p[i] = orig;
        g.push((up - down) / (2.0 * eps));
    }
    g
}

/// Solve `a x = b` by Gaussian elimination with partial pivoting.
/// `None` when the system is singular.
pub fn gauss_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let mut piv = col;
        for r in col + 1..n {
            if a[r][col].abs() > a[piv][col].abs() {
                piv = r;
            }
        }
        if a[piv][col] == 0.0 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for r in col + 1..n {
            let factor = a[r][col] / a[col][col];
            for c in col..n {
                a[r][c] -= factor * a[col][c];
            }
            b[r] -= factor * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let mut s = b[r];
        for c in r + 1..n {
            s -= a[r][c] * x[c];
        }
        x[r] = s / a[r][r];
    }
    Some(x)
}

/// Ridge regression from the uncentred augmented normal equations
/// `([X 1]^T [X 1] + diag(alpha, .., alpha, 0)) [w; b] = [X 1]^T y`.
/// Returns `(weights, intercept)`.
pub fn oracle_ridge(x: &[Vec<f64>], y: &[f64], alpha: f64) -> Option<(Vec<f64>, f64)> {
    let d = x[0].len();
    let mut a = vec![vec![0.0; d + 1]; d + 1];
    let mut rhs = vec![0.0; d + 1];
    for (row, &t) in x.iter().zip(y) {
        let mut aug = row.clone();
        aug.push(1.0);
        for i in 0..=d {
            for j in 0..=d {
                a[i][j] += aug[i] * aug[j];
            }
            rhs[i] += aug[i] * t;
        }
    }
    for (i, r) in a.iter_mut().enumerate().take(d) {
        r[i] += alpha;
    }
    let sol = gauss_solve(a, rhs)?;
    Some((sol[..d].to_vec(), sol[d]))
}

pub fn oracle_pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mut sx, mut sy, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for i in 0..x.len() {
        sx += x[i];
        sy += y[i];
    }
    let (mx, my) = (sx / n, sy / n);
    for i in 0..x.len() {
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
        sxy += (x[i] - mx) * (y[i] - my);
    }
    sxy / (sxx * syy).sqrt()
}

/// Average ranks by counting: `1 + #smaller + (#equal - 1) / 2`.
pub fn oracle_ranks(x: &[f64]) -> Vec<f64> {
    x.iter()
        .map(|&v| {
            let smaller = x.iter().filter(|&&u| u < v).count() as f64;
            let equal = x.iter().filter(|&&u| u == v).count() as f64;
            1.0 + smaller + (equal - 1.0) / 2.0
        })
        .collect()
}

/// Spearman by the rank-difference formula `1 - 6 sum d^2 / (n (n^2 - 1))`.
/// Exact only without ties.
pub fn oracle_spearman(x: &[f64], y: &[f64]) -> f64 {
    let (rx, ry) = (oracle_ranks(x), oracle_ranks(y));
    let n = x.len() as f64;
    let d2: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - b) * (a - b)).sum();
    1.0 - 6.0 * d2 / (n * (n * n - 1.0))
}

/// Resampling kernels from their textbook definitions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OracleKernel {
    Triangle,
    /// Keys cubic with `a = -0.5`.
    Keys,
    Lanczos3,
}

impl OracleKernel {
    pub fn eval(self, x: f64) -> f64 {
        let t = x.abs();
        match self {
            OracleKernel::Triangle => (1.0 - t).max(0.0),
            OracleKernel::Keys => {
                let a = -0.5;
                if t <= 1.0 {
                    (a + 2.0) * t.powi(3) - (a + 3.0) * t.powi(2) + 1.0
                } else if t < 2.0 {
                    a * t.powi(3) - 5.0 * a * t.powi(2) + 8.0 * a * t - 4.0 * a
                } else {
                    0.0
                }
            }
            OracleKernel::Lanczos3 => {
                if t == 0.0 {
                    1.0
                } else if t < 3.0 {
                    3.0 * (PI * t).sin() * (PI * t / 3.0).sin() / (PI * PI * t * t)
                } else {
                    0.0
                }
            }
        }
    }

    fn radius(self) -> f64 {
        match self {
            OracleKernel::Triangle => 1.0,
            OracleKernel::Keys => 2.0,
            OracleKernel::Lanczos3 => 3.0,
        }
    }
}

/// Single-channel row-major plane.
#[derive(Debug, Clone, PartialEq)]
pub struct Plane {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl Plane {
    pub fn at(&self, y: isize, x: isize) -> f64 {
        let yy = y.clamp(0, self.height as isize - 1) as usize;
        let xx = x.clamp(0, self.width as isize - 1) as usize;
        self.data[yy * self.width + xx]
    }
}

/// Direct (non-separable) 2D resampling: every output pixel is the
/// normalised sum of `k(dy) k(dx)` times the edge-replicated input over the
/// full 2D footprint, with the kernel widened by the reduction ratio.
pub fn oracle_resize(src: &Plane, out_h: usize, out_w: usize, kernel: OracleKernel) -> Plane {
    let ry = src.height as f64 / out_h as f64;
    let rx = src.width as f64 / out_w as f64;
    let (sy, sx) = (ry.max(1.0), rx.max(1.0));
    let mut data = Vec::with_capacity(out_h * out_w);
    for oy in 0..out_h {
        let cy = (oy as f64 + 0.5) * ry - 0.5;
        for ox in 0..out_w {
            let cx = (ox as f64 + 0.5) * rx - 0.5;
            let (mut acc, mut norm) = (0.0, 0.0);
            let y0 = (cy - kernel.radius() * sy).floor() as isize;
            let y1 = (cy + kernel.radius() * sy).ceil() as isize;
            let x0 = (cx - kernel.radius() * sx).floor() as isize;
            let x1 = (cx + kernel.radius() * sx).ceil() as isize;
            for iy in y0..=y1 {
                for ix in x0..=x1 {
                    let w = kernel.eval((iy as f64 - cy) / sy) * kernel.eval((ix as f64 - cx) / sx);
                    acc += w * src.at(iy, ix);
                    norm += w;
                }
            }
            data.push(acc / norm);
        }
    }
    Plane {
        height: out_h,
        width: out_w,
        data,
    }
}

/// Direct 2D Gaussian blur with radius `ceil(3 sigma)` (at least 1) and
/// edge replication.
pub fn oracle_gaussian_blur(src: &Plane, sigma: f64) -> Plane {
    let r = ((3.0 * sigma).ceil() as isize).max(1);
    let mut data = Vec::with_capacity(src.data.len());
    for y in 0..src.height as isize {
        for x in 0..src.width as isize {
            let (mut acc, mut norm) = (0.0, 0.0);
            for dy in -r..=r {
                for dx in -r..=r {
                    let w = (-((dy * dy + dx * dx) as f64) / (2.0 * sigma * sigma)).exp();
                    acc += w * src.at(y + dy, x + dx);
                    norm += w;
                }
            }
            data.push(acc / norm);
        }
    }
    Plane {
        height: src.height,
        width: src.width,
        data,
    }
}

/// Hexcone RGB to HSV with hue in turns `[0, 1)`.
pub fn oracle_hsv(r: f64, g: f64, b: f64) -> (f64, f64, f64) {
    let v = r.max(g).max(b);
    let c = v - r.min(g).min(b);
    let s = if v == 0.0 { 0.0 } else { c / v };
    if c == 0.0 {
        return (0.0, s, v);
    }
    let h6 = if v == r {
        ((g - b) / c).rem_euclid(6.0)
    } else if v == g {
        (b - r) / c + 2.0
    } else {
        (r - g) / c + 4.0
    };
    (h6 / 6.0, s, v)
}
