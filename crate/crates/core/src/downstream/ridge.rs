//! Ridge regression with an unpenalised intercept, solved through a
//! Cholesky factorisation of the centred normal equations.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RidgeModel {
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub alpha: f64,
}

impl RidgeModel {
    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.weights.len() {
            return Err(Error::Shape(format!(
                "feature length {} does not match model dimension {}",
                x.len(),
                self.weights.len()
            )));
        }
        Ok(self.intercept + x.iter().zip(&self.weights).map(|(a, b)| a * b).sum::<f64>())
    }
}

fn check_design(x: &[Vec<f64>], rows: usize, alpha: f64) -> Result<usize> {
    if x.len() != rows || rows < 2 {
        return Err(Error::Shape(format!("{} feature rows for {rows} targets (need >= 2)", x.len())));
    }
    if !(alpha >= 0.0) {
        return Err(Error::InvalidArgument(format!("alpha must be >= 0, got {alpha}")));
    }
    let d = x[0].len();
    if x.iter().any(|r| r.len() != d) {
        return Err(Error::Shape("feature rows differ in length".into()));
    }
    if x.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite feature value".into()));
    }
    Ok(d)
}

fn column_means(x: &[Vec<f64>], d: usize) -> Vec<f64> {
    let mut m = vec![0.0; d];
    for r in x {
        for (a, &v) in m.iter_mut().zip(r) {
            *a += v;
        }
    }
    let n = x.len() as f64;
    m.iter_mut().for_each(|v| *v /= n);
    m
}

/// Lower-triangular factor of a symmetric positive-definite matrix stored
/// row-major.
fn cholesky(a: &[f64], d: usize) -> Result<Vec<f64>> {
    let mut l = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..=i {
            let mut s = a[i * d + j];
            for k in 0..j {
                s -= l[i * d + k] * l[j * d + k];
            }
            if i == j {
                if !(s > 1e-12 * a[i * d + i].abs()) {
                    return Err(Error::Numeric(format!(
                        "normal matrix is not positive definite (pivot {i} = {s:e})"
                    )));
                }
                l[i * d + i] = s.sqrt();
            } else {
                l[i * d + j] = s / l[j * d + j];
            }
        }
    }
    Ok(l)
}

fn cholesky_solve(l: &[f64], d: usize, b: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; d];
    for i in 0..d {
        let s: f64 = (0..i).map(|k| l[i * d + k] * y[k]).sum();
        y[i] = (b[i] - s) / l[i * d + i];
    }
    let mut x = vec![0.0; d];
    for i in (0..d).rev() {
        let s: f64 = (i + 1..d).map(|k| l[k * d + i] * x[k]).sum();
        x[i] = (y[i] - s) / l[i * d + i];
    }
    x
}

/// Factorised centred normal equations shared by several targets.
struct Normal {
    d: usize,
    means: Vec<f64>,
    chol: Vec<f64>,
}

impl Normal {
    fn new(x: &[Vec<f64>], d: usize, alpha: f64) -> Result<Self> {
        let means = column_means(x, d);
        let mut a = vec![0.0; d * d];
        let mut c = vec![0.0; d];
        for r in x {
            for (ci, (&v, &m)) in c.iter_mut().zip(r.iter().zip(&means)) {
                *ci = v - m;
            }
            for i in 0..d {
                let ci = c[i];
                if ci == 0.0 {
                    continue;
                }
                for j in 0..=i {
                    a[i * d + j] += ci * c[j];
                }
            }
        }
        for i in 0..d {
            a[i * d + i] += alpha;
            for j in 0..i {
                a[j * d + i] = a[i * d + j];
            }
        }
        Ok(Self {
            d,
            chol: cholesky(&a, d)?,
            means,
        })
    }

    fn solve(&self, x: &[Vec<f64>], y: &[f64], alpha: f64) -> RidgeModel {
        let n = y.len() as f64;
        let ym = y.iter().sum::<f64>() / n;
        let mut b = vec![0.0; self.d];
        for (r, &t) in x.iter().zip(y) {
            let yc = t - ym;
            for ((bi, &v), &m) in b.iter_mut().zip(r).zip(&self.means) {
                *bi += (v - m) * yc;
            }
        }
        let weights = cholesky_solve(&self.chol, self.d, &b);
        let intercept = ym - weights.iter().zip(&self.means).map(|(w, m)| w * m).sum::<f64>();
        RidgeModel {
            weights,
            intercept,
            alpha,
        }
    }
}

/// Minimise `|y - Xw - b|^2 + alpha |w|^2`. Constant targets give the
/// intercept-only model.
pub fn ridge_fit(x: &[Vec<f64>], y: &[f64], alpha: f64) -> Result<RidgeModel> {
    let d = check_design(x, y.len(), alpha)?;
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite target value".into()));
    }
    if y.iter().all(|&v| v == y[0]) {
        return Ok(RidgeModel {
            weights: vec![0.0; d],
            intercept: y[0],
            alpha,
        });
    }
    let model = Normal::new(x, d, alpha)?.solve(x, y, alpha);
    if model.weights.iter().any(|w| !w.is_finite()) || !model.intercept.is_finite() {
        return Err(Error::Numeric("ridge solution is not finite".into()));
    }
    Ok(model)
}

/// Relative residual of the regularised normal equations
/// `[X 1]^T ([X 1] [w; b] - y) + alpha [w; 0] = 0`, scaled by `|[X 1]^T y|`.
pub fn normal_equation_residual(model: &RidgeModel, x: &[Vec<f64>], y: &[f64]) -> f64 {
    let d = model.dim();
    let mut g = vec![0.0; d + 1];
    let mut scale = vec![0.0; d + 1];
    for (r, &t) in x.iter().zip(y) {
        let e = model.intercept + r.iter().zip(&model.weights).map(|(a, b)| a * b).sum::<f64>() - t;
        for i in 0..d {
            g[i] += r[i] * e;
            scale[i] += r[i] * t;
        }
        g[d] += e;
        scale[d] += t;
    }
    for i in 0..d {
        g[i] += model.alpha * model.weights[i];
    }
    let num = g.iter().map(|v| v * v).sum::<f64>().sqrt();
    let den = scale.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
    num / den
}

/// One-vs-rest ridge classifier on standardised features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearProbe {
    pub classes: Vec<String>,
    mean: Vec<f64>,
    std: Vec<f64>,
    heads: Vec<RidgeModel>,
}

impl LinearProbe {
    pub fn fit(x: &[Vec<f64>], labels: &[String], alpha: f64) -> Result<Self> {
        let d = check_design(x, labels.len(), alpha)?;
        let mut classes: Vec<String> = labels.to_vec();
        classes.sort();
        classes.dedup();
        if classes.len() < 2 {
            return Err(Error::InvalidArgument("probe needs at least two classes".into()));
        }
        let mean = column_means(x, d);
        let n = x.len() as f64;
        let std: Vec<f64> = (0..d)
            .map(|j| {
                let v = x.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / n;
                if v > 0.0 { v.sqrt() } else { 1.0 }
            })
            .collect();
        let z: Vec<Vec<f64>> = x.iter().map(|r| standardise(r, &mean, &std)).collect();
        let normal = Normal::new(&z, d, alpha)?;
        let heads = classes
            .iter()
            .map(|c| {
                let y: Vec<f64> = labels.iter().map(|l| if l == c { 1.0 } else { 0.0 }).collect();
                normal.solve(&z, &y, alpha)
            })
            .collect();
        Ok(Self {
            classes,
            mean,
            std,
            heads,
        })
    }

    pub fn predict(&self, x: &[f64]) -> Result<&str> {
        let z = standardise(x, &self.mean, &self.std);
        let mut best = (f64::NEG_INFINITY, 0);
        for (i, h) in self.heads.iter().enumerate() {
            let s = h.predict(&z)?;
            if s > best.0 {
                best = (s, i);
            }
        }
        Ok(&self.classes[best.1])
    }

    pub fn accuracy(&self, x: &[Vec<f64>], labels: &[String]) -> Result<f64> {
        if x.len() != labels.len() || x.is_empty() {
            return Err(Error::Shape("probe evaluation needs matching, non-empty inputs".into()));
        }
        let mut hits = 0usize;
        for (r, l) in x.iter().zip(labels) {
            if self.predict(r)? == l {
                hits += 1;
            }
        }
        Ok(hits as f64 / labels.len() as f64)
    }
}

fn standardise(r: &[f64], mean: &[f64], std: &[f64]) -> Vec<f64> {
    r.iter().zip(mean).zip(std).map(|((v, m), s)| (v - m) / s).collect()
}
