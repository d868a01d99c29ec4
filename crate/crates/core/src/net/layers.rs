//! Dense, layer-norm and strided-convolution layers with hand-written
//! backward passes. A gradient is stored in a value of the same type as the
//! layer it belongs to (see `zeros_like`).

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

/// Role of a parameter tensor; weight decay only touches `Weight`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    Weight,
    Bias,
    NormScale,
    NormShift,
}

/// Named flat view over a parameter tensor.
pub struct ParamRef<'a, S> {
    pub name: String,
    pub kind: ParamKind,
    pub values: &'a [S],
}

pub struct ParamMut<'a, S> {
    pub name: String,
    pub kind: ParamKind,
    pub values: &'a mut [S],
}

pub(crate) fn normal_init<S: Scalar, R: Rng>(n: usize, std: f64, rng: &mut R) -> Vec<S> {
    let dist = Normal::new(0.0, std).expect("finite std");
    (0..n).map(|_| S::from_f64_lossy(dist.sample(rng))).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linear<S> {
    pub in_dim: usize,
    pub out_dim: usize,
    /// Row-major `out_dim x in_dim`.
    pub weight: Vec<S>,
    pub bias: Option<Vec<S>>,
}

impl<S: Scalar> Linear<S> {
    pub fn init<R: Rng>(in_dim: usize, out_dim: usize, bias: bool, rng: &mut R) -> Self {
        Self {
            in_dim,
            out_dim,
            weight: normal_init(in_dim * out_dim, (1.0 / in_dim as f64).sqrt(), rng),
            bias: bias.then(|| vec![S::zero(); out_dim]),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            in_dim: self.in_dim,
            out_dim: self.out_dim,
            weight: vec![S::zero(); self.weight.len()],
            bias: self.bias.as_ref().map(|b| vec![S::zero(); b.len()]),
        }
    }

    pub fn forward(&self, x: &[S]) -> Vec<S> {
        debug_assert_eq!(x.len(), self.in_dim);
        self.weight
            .chunks_exact(self.in_dim)
            .enumerate()
            .map(|(o, row)| {
                let dot = row.iter().zip(x).map(|(&w, &v)| w * v).sum::<S>();
                dot + self.bias.as_ref().map_or(S::zero(), |b| b[o])
            })
            .collect()
    }

    /// Accumulate parameter gradients into `grad`, return `dL/dx`.
    pub fn backward(&self, x: &[S], dy: &[S], grad: &mut Self) -> Vec<S> {
        let mut dx = vec![S::zero(); self.in_dim];
        for (o, &g) in dy.iter().enumerate() {
            if let Some(b) = grad.bias.as_mut() {
                b[o] += g;
            }
            if g == S::zero() {
                continue;
            }
            let row = &self.weight[o * self.in_dim..(o + 1) * self.in_dim];
            let grow = &mut grad.weight[o * self.in_dim..(o + 1) * self.in_dim];
            for i in 0..self.in_dim {
                grow[i] += g * x[i];
                dx[i] += g * row[i];
            }
        }
        dx
    }

    pub fn affine_param_count(&self) -> usize {
        self.weight.len() + self.bias.as_ref().map_or(0, Vec::len)
    }

    pub fn params<'a>(&'a self, prefix: &str, out: &mut Vec<ParamRef<'a, S>>) {
        out.push(ParamRef {
            name: format!("{prefix}.weight"),
            kind: ParamKind::Weight,
            values: &self.weight,
        });
        if let Some(b) = &self.bias {
            out.push(ParamRef {
                name: format!("{prefix}.bias"),
                kind: ParamKind::Bias,
                values: b,
            });
        }
    }

    pub fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamMut<'a, S>>) {
        out.push(ParamMut {
            name: format!("{prefix}.weight"),
            kind: ParamKind::Weight,
            values: &mut self.weight,
        });
        if let Some(b) = &mut self.bias {
            out.push(ParamMut {
                name: format!("{prefix}.bias"),
                kind: ParamKind::Bias,
                values: b,
            });
        }
    }
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm<S> {
    pub gamma: Vec<S>,
    pub beta: Vec<S>,
}

#[derive(Debug, Clone)]
pub struct LayerNormCache<S> {
    xhat: Vec<S>,
    inv_std: S,
}

impl<S: Scalar> LayerNorm<S> {
    pub fn new(dim: usize) -> Self {
        Self {
            gamma: vec![S::one(); dim],
            beta: vec![S::zero(); dim],
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            gamma: vec![S::zero(); self.gamma.len()],
            beta: vec![S::zero(); self.beta.len()],
        }
    }

    pub fn forward(&self, x: &[S]) -> (Vec<S>, LayerNormCache<S>) {
        let n = S::from_usize_lossy(x.len());
        let mean = x.iter().copied().sum::<S>() / n;
        let var = x.iter().map(|&v| (v - mean) * (v - mean)).sum::<S>() / n;
        let inv_std = S::one() / (var + S::lit(LAYER_NORM_EPS)).sqrt();
        let xhat: Vec<S> = x.iter().map(|&v| (v - mean) * inv_std).collect();
        let y = xhat
            .iter()
            .zip(self.gamma.iter().zip(&self.beta))
            .map(|(&h, (&g, &b))| h * g + b)
            .collect();
        (y, LayerNormCache { xhat, inv_std })
    }

    pub fn backward(&self, cache: &LayerNormCache<S>, dy: &[S], grad: &mut Self) -> Vec<S> {
        let n = S::from_usize_lossy(dy.len());
        let mut dxhat = Vec::with_capacity(dy.len());
        for i in 0..dy.len() {
            grad.gamma[i] += dy[i] * cache.xhat[i];
            grad.beta[i] += dy[i];
            dxhat.push(dy[i] * self.gamma[i]);
        }
        let mean_d = dxhat.iter().copied().sum::<S>() / n;
        let mean_dx = dxhat
            .iter()
            .zip(&cache.xhat)
            .map(|(&d, &h)| d * h)
            .sum::<S>()
            / n;
        dxhat
            .iter()
            .zip(&cache.xhat)
            .map(|(&d, &h)| cache.inv_std * (d - mean_d - h * mean_dx))
            .collect()
    }

    pub fn params<'a>(&'a self, prefix: &str, out: &mut Vec<ParamRef<'a, S>>) {
        out.push(ParamRef {
            name: format!("{prefix}.gamma"),
            kind: ParamKind::NormScale,
            values: &self.gamma,
        });
        out.push(ParamRef {
            name: format!("{prefix}.beta"),
            kind: ParamKind::NormShift,
            values: &self.beta,
        });
    }

    pub fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamMut<'a, S>>) {
        out.push(ParamMut {
            name: format!("{prefix}.gamma"),
            kind: ParamKind::NormScale,
            values: &mut self.gamma,
        });
        out.push(ParamMut {
            name: format!("{prefix}.beta"),
            kind: ParamKind::NormShift,
            values: &mut self.beta,
        });
    }
}

/// Square-kernel 2-D convolution over planar `[C][H][W]` buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d<S> {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    /// `[out][in][ky][kx]`.
    pub weight: Vec<S>,
    pub bias: Vec<S>,
}

impl<S: Scalar> Conv2d<S> {
    pub fn init<R: Rng>(in_ch: usize, out_ch: usize, kernel: usize, stride: usize, rng: &mut R) -> Self {
        let fan_in = in_ch * kernel * kernel;
        Self {
            in_ch,
            out_ch,
            kernel,
            stride,
            pad: kernel / 2,
            weight: normal_init(out_ch * fan_in, (2.0 / fan_in as f64).sqrt(), rng),
            bias: vec![S::zero(); out_ch],
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            weight: vec![S::zero(); self.weight.len()],
            bias: vec![S::zero(); self.bias.len()],
            ..*self
        }
    }

    pub fn out_dims(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + 2 * self.pad - self.kernel) / self.stride + 1,
            (w + 2 * self.pad - self.kernel) / self.stride + 1,
        )
    }

    /// Valid output index range `[lo, hi)` for kernel offset `k` along an
    /// axis of input length `n` and output length `out`.
    fn span(&self, k: usize, n: usize, out: usize) -> (usize, usize) {
        // input index = o*stride + k - pad must lie in [0, n)
        let lo = if k >= self.pad {
            0
        } else {
            (self.pad - k).div_ceil(self.stride)
        };
        let hi = if n + self.pad > k {
            ((n + self.pad - k - 1) / self.stride + 1).min(out)
        } else {
            0
        };
        (lo, hi.max(lo))
    }

    pub fn forward(&self, x: &[S], h: usize, w: usize) -> (Vec<S>, usize, usize) {
        let (oh, ow) = self.out_dims(h, w);
        let k = self.kernel;
        let mut out = vec![S::zero(); self.out_ch * oh * ow];
        for o in 0..self.out_ch {
            let plane = &mut out[o * oh * ow..(o + 1) * oh * ow];
            plane.iter_mut().for_each(|v| *v = self.bias[o]);
            for c in 0..self.in_ch {
                let xin = &x[c * h * w..(c + 1) * h * w];
                for ky in 0..k {
                    let (y0, y1) = self.span(ky, h, oh);
                    for kx in 0..k {
                        let wv = self.weight[((o * self.in_ch + c) * k + ky) * k + kx];
                        let (x0, x1) = self.span(kx, w, ow);
                        for oy in y0..y1 {
                            let iy = oy * self.stride + ky - self.pad;
                            let row = &xin[iy * w..(iy + 1) * w];
                            let orow = &mut plane[oy * ow..(oy + 1) * ow];
                            for ox in x0..x1 {
                                orow[ox] += wv * row[ox * self.stride + kx - self.pad];
                            }
                        }
                    }
                }
            }
        }
        (out, oh, ow)
    }

    /// Accumulate parameter gradients and return `dL/dx` (skipped when
    /// `need_input_grad` is false, returning an empty vector).
    pub fn backward(
        &self,
        x: &[S],
        h: usize,
        w: usize,
        dy: &[S],
        grad: &mut Self,
        need_input_grad: bool,
    ) -> Vec<S> {
        let (oh, ow) = self.out_dims(h, w);
        let k = self.kernel;
        let mut dx = if need_input_grad {
            vec![S::zero(); self.in_ch * h * w]
        } else {
            Vec::new()
        };
        for o in 0..self.out_ch {
            let gplane = &dy[o * oh * ow..(o + 1) * oh * ow];
            grad.bias[o] += gplane.iter().copied().sum::<S>();
            for c in 0..self.in_ch {
                let xin = &x[c * h * w..(c + 1) * h * w];
                for ky in 0..k {
                    let (y0, y1) = self.span(ky, h, oh);
                    for kx in 0..k {
                        let widx = ((o * self.in_ch + c) * k + ky) * k + kx;
                        let wv = self.weight[widx];
                        let (x0, x1) = self.span(kx, w, ow);
                        let mut gw = S::zero();
                        for oy in y0..y1 {
                            let iy = oy * self.stride + ky - self.pad;
                            let grow = &gplane[oy * ow..(oy + 1) * ow];
                            let row = &xin[iy * w..(iy + 1) * w];
                            for ox in x0..x1 {
                                gw += grow[ox] * row[ox * self.stride + kx - self.pad];
                            }
                            if need_input_grad {
                                let drow = &mut dx[c * h * w + iy * w..c * h * w + (iy + 1) * w];
                                for ox in x0..x1 {
                                    drow[ox * self.stride + kx - self.pad] += wv * grow[ox];
                                }
                            }
                        }
                        grad.weight[widx] += gw;
                    }
                }
            }
        }
        dx
    }

    pub fn params<'a>(&'a self, prefix: &str, out: &mut Vec<ParamRef<'a, S>>) {
        out.push(ParamRef {
            name: format!("{prefix}.weight"),
            kind: ParamKind::Weight,
            values: &self.weight,
        });
        out.push(ParamRef {
            name: format!("{prefix}.bias"),
            kind: ParamKind::Bias,
            values: &self.bias,
        });
    }

    pub fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamMut<'a, S>>) {
        out.push(ParamMut {
            name: format!("{prefix}.weight"),
            kind: ParamKind::Weight,
            values: &mut self.weight,
        });
        out.push(ParamMut {
            name: format!("{prefix}.bias"),
            kind: ParamKind::Bias,
            values: &mut self.bias,
        });
    }
}
