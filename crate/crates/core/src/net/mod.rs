//! Encoder and the two heads attached to it: the projection head feeding the
//! contrastive loss and the auxiliary scale regressor.

pub mod checkpoint;
pub mod layers;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::scalar::{gelu, gelu_grad, Scalar};
use crate::seed;
use layers::{Conv2d, LayerNorm, LayerNormCache, Linear, ParamMut, ParamRef};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};

/// Fixed encoder input normalization: `(v - MEAN) / STD` on `[0,1]` pixels.
pub const INPUT_MEAN: f64 = 0.5;
pub const INPUT_STD: f64 = 0.25;
/// Variance floor of per-crop standardization, in squared `[0,1]` units.
pub const INPUT_VAR_EPS: f64 = 1e-4;

/// How pixels are mapped to encoder inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum InputNorm {
    /// `(v - INPUT_MEAN) / INPUT_STD` for every crop.
    Fixed,
    /// Each channel of each crop standardized by its own mean and standard
    /// deviation, so brightness and contrast of the scene drop out and
    /// the encoder sees local structure only.
    #[default]
    PerCrop,
    /// Each channel of each crop centred on its own mean, then divided by
    /// `INPUT_STD`; brightness drops out, contrast is kept.
    CropMean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub backbone_id: String,
    pub d_enc: usize,
    /// Channels of the strided stages before the last; the last stage has `d_enc`.
    pub hidden_channels: Vec<usize>,
    pub kernel: usize,
    pub input_norm: InputNorm,
    /// Start from the encoder weights of `init_checkpoint` instead of random init.
    pub pretrained: bool,
    pub trainable: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            backbone_id: "strided-conv4".into(),
            d_enc: 128,
            hidden_channels: vec![16, 32, 64],
            kernel: 3,
            input_norm: InputNorm::PerCrop,
            pretrained: false,
            trainable: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HeadNorm {
    None,
    LayerNorm,
}

/// Where layer-norm sits inside a head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum NormPlacement {
    /// `W2 GELU(LN(W1 h))`
    #[default]
    PreActivation,
    /// `W2 LN(GELU(W1 h))`
    PostActivation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeadConfig {
    pub d_hidden: usize,
    pub d_proj: usize,
    pub normalization: HeadNorm,
    pub norm_placement: NormPlacement,
    /// Biases in every affine layer of both heads.
    pub bias: bool,
}

impl Default for HeadConfig {
    fn default() -> Self {
        Self {
            d_hidden: 512,
            d_proj: 128,
            normalization: HeadNorm::LayerNorm,
            norm_placement: NormPlacement::PreActivation,
            bias: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub head: HeadConfig,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let e = &self.encoder;
        if e.d_enc == 0 || e.kernel == 0 || e.hidden_channels.contains(&0) {
            return Err(Error::InvalidArgument(
                "encoder dims and kernel must be >= 1".into(),
            ));
        }
        if self.head.d_hidden == 0 || self.head.d_proj == 0 {
            return Err(Error::InvalidArgument("head dims must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Encoder<S> {
    pub stages: Vec<Conv2d<S>>,
}

#[derive(Debug, Clone)]
pub struct EncoderTrace<S> {
    /// Per stage: input buffer, its spatial dims, and pre-activation output.
    stages: Vec<(Vec<S>, usize, usize, Vec<S>)>,
    last_dims: (usize, usize),
}

impl<S: Scalar> Encoder<S> {
    fn init(cfg: &EncoderConfig, seed: u64) -> Self {
        let mut rng = seed::rng_for(seed, &["encoder"]);
        let mut chans = vec![3];
        chans.extend(&cfg.hidden_channels);
        chans.push(cfg.d_enc);
        let stages = chans
            .windows(2)
            .map(|p| Conv2d::init(p[0], p[1], cfg.kernel, 2, &mut rng))
            .collect();
        Self { stages }
    }

    fn zeros_like(&self) -> Self {
        Self {
            stages: self.stages.iter().map(Conv2d::zeros_like).collect(),
        }
    }

    fn forward(&self, input: Vec<S>, h: usize, w: usize) -> (Vec<S>, EncoderTrace<S>) {
        let mut trace = Vec::with_capacity(self.stages.len());
        let (mut x, mut ch, mut cw) = (input, h, w);
        for conv in &self.stages {
            let (pre, oh, ow) = conv.forward(&x, ch, cw);
            let act: Vec<S> = pre.iter().map(|&v| gelu(v)).collect();
            trace.push((std::mem::replace(&mut x, act), ch, cw, pre));
            ch = oh;
            cw = ow;
        }
        let plane = ch * cw;
        let inv = S::one() / S::from_usize_lossy(plane);
        let latent = x.chunks_exact(plane).map(|p| p.iter().copied().sum::<S>() * inv).collect();
        (
            latent,
            EncoderTrace {
                stages: trace,
                last_dims: (ch, cw),
            },
        )
    }

    fn backward(&self, trace: &EncoderTrace<S>, dlatent: &[S], grad: &mut Self, need_input_grad: bool) -> Vec<S> {
        let (lh, lw) = trace.last_dims;
        let plane = lh * lw;
        let inv = S::one() / S::from_usize_lossy(plane);
        let mut d: Vec<S> = dlatent
            .iter()
            .flat_map(|&g| std::iter::repeat_n(g * inv, plane))
            .collect();
        for (i, (conv, (x, h, w, pre))) in self.stages.iter().zip(&trace.stages).enumerate().rev() {
            for (dv, &p) in d.iter_mut().zip(pre) {
                *dv *= gelu_grad(p);
            }
            let need = i > 0 || need_input_grad;
            d = conv.backward(x, *h, *w, &d, &mut grad.stages[i], need);
        }
        d
    }
}

/// Two affine layers with GELU between and optional layer-norm.
#[derive(Debug, Clone, PartialEq)]
pub struct Head<S> {
    pub fc1: Linear<S>,
    pub norm: Option<LayerNorm<S>>,
    pub fc2: Linear<S>,
    pub placement: NormPlacement,
}

#[derive(Debug, Clone)]
pub struct HeadTrace<S> {
    x: Vec<S>,
    pre: Vec<S>,
    norm: Option<LayerNormCache<S>>,
    /// Input to the norm-then-GELU (pre-activation) or to fc2 (post-activation).
    mid: Vec<S>,
    fc2_in: Vec<S>,
}

impl<S: Scalar> Head<S> {
    fn init(d_in: usize, d_hidden: usize, d_out: usize, cfg: &HeadConfig, seed: u64, label: &str) -> Self {
        let mut rng = seed::rng_for(seed, &[label]);
        Self {
            fc1: Linear::init(d_in, d_hidden, cfg.bias, &mut rng),
            norm: (cfg.normalization == HeadNorm::LayerNorm).then(|| LayerNorm::new(d_hidden)),
            fc2: Linear::init(d_hidden, d_out, cfg.bias, &mut rng),
            placement: cfg.norm_placement,
        }
    }

    fn zeros_like(&self) -> Self {
        Self {
            fc1: self.fc1.zeros_like(),
            norm: self.norm.as_ref().map(LayerNorm::zeros_like),
            fc2: self.fc2.zeros_like(),
            placement: self.placement,
        }
    }

    fn forward(&self, x: &[S]) -> (Vec<S>, HeadTrace<S>) {
        let pre = self.fc1.forward(x);
        let (mid, norm, fc2_in) = match self.placement {
            NormPlacement::PreActivation => {
                let (normed, cache) = match &self.norm {
                    Some(ln) => {
                        let (y, c) = ln.forward(&pre);
                        (y, Some(c))
                    }
                    None => (pre.clone(), None),
                };
                let act = normed.iter().map(|&v| gelu(v)).collect();
                (normed, cache, act)
            }
            NormPlacement::PostActivation => {
                let act: Vec<S> = pre.iter().map(|&v| gelu(v)).collect();
                let (normed, cache) = match &self.norm {
                    Some(ln) => {
                        let (y, c) = ln.forward(&act);
                        (y, Some(c))
                    }
                    None => (act.clone(), None),
                };
                (act, cache, normed)
            }
        };
        let out = self.fc2.forward(&fc2_in);
        (
            out,
            HeadTrace {
                x: x.to_vec(),
                pre,
                norm,
                mid,
                fc2_in,
            },
        )
    }

    fn backward(&self, t: &HeadTrace<S>, dout: &[S], grad: &mut Self) -> Vec<S> {
        let d_fc2_in = self.fc2.backward(&t.fc2_in, dout, &mut grad.fc2);
        let d_pre = match self.placement {
            NormPlacement::PreActivation => {
                let d_norm: Vec<S> = d_fc2_in
                    .iter()
                    .zip(&t.mid)
                    .map(|(&g, &v)| g * gelu_grad(v))
                    .collect();
                match (&self.norm, &t.norm, grad.norm.as_mut()) {
                    (Some(ln), Some(c), Some(g)) => ln.backward(c, &d_norm, g),
                    _ => d_norm,
                }
            }
            NormPlacement::PostActivation => {
                let d_act = match (&self.norm, &t.norm, grad.norm.as_mut()) {
                    (Some(ln), Some(c), Some(g)) => ln.backward(c, &d_fc2_in, g),
                    _ => d_fc2_in,
                };
                d_act
                    .iter()
                    .zip(&t.pre)
                    .map(|(&g, &v)| g * gelu_grad(v))
                    .collect()
            }
        };
        self.fc1.backward(&t.x, &d_pre, &mut grad.fc1)
    }

    /// Affine weights and biases (norm parameters excluded).
    pub fn affine_param_count(&self) -> usize {
        self.fc1.affine_param_count() + self.fc2.affine_param_count()
    }

    fn params<'a>(&'a self, prefix: &str, out: &mut Vec<ParamRef<'a, S>>) {
        self.fc1.params(&format!("{prefix}.fc1"), out);
        if let Some(n) = &self.norm {
            n.params(&format!("{prefix}.norm"), out);
        }
        self.fc2.params(&format!("{prefix}.fc2"), out);
    }

    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamMut<'a, S>>) {
        self.fc1.params_mut(&format!("{prefix}.fc1"), out);
        if let Some(n) = &mut self.norm {
            n.params_mut(&format!("{prefix}.norm"), out);
        }
        self.fc2.params_mut(&format!("{prefix}.fc2"), out);
    }
}

/// Encoder with projection and auxiliary scale heads.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<S> {
    config: ModelConfig,
    pub encoder: Encoder<S>,
    pub projection: Head<S>,
    pub aux: Head<S>,
}

/// Everything the backward pass needs for one image.
#[derive(Debug, Clone)]
pub struct ItemTrace<S> {
    input: InputTrace<S>,
    encoder: EncoderTrace<S>,
    pub latent: Vec<S>,
    projection: HeadTrace<S>,
    aux: HeadTrace<S>,
    pub z: Vec<S>,
    pub scale: S,
}

/// What the input backward pass needs from the normalization step.
#[derive(Debug, Clone)]
enum InputTrace<S> {
    Fixed,
    CropMean,
    PerCrop { y: Vec<S>, inv_std: Vec<S> },
}

fn check_image<S: Scalar>(img: &Image<S>) -> Result<()> {
    if img.channels() != 3 || img.is_empty() {
        return Err(Error::Shape(format!(
            "encoder expects a non-empty 3-channel image, got {:?}",
            img.dims()
        )));
    }
    Ok(())
}

impl<S: Scalar> Model<S> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let e = &config.encoder;
        let h = &config.head;
        Ok(Self {
            encoder: Encoder::init(e, seed),
            projection: Head::init(e.d_enc, h.d_hidden, h.d_proj, h, seed, "projection"),
            aux: Head::init(e.d_enc, h.d_hidden, 1, h, seed, "aux"),
            config,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn d_enc(&self) -> usize {
        self.config.encoder.d_enc
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            config: self.config.clone(),
            encoder: self.encoder.zeros_like(),
            projection: self.projection.zeros_like(),
            aux: self.aux.zeros_like(),
        }
    }

    pub fn params(&self) -> Vec<ParamRef<'_, S>> {
        let mut out = Vec::new();
        for (i, st) in self.encoder.stages.iter().enumerate() {
            st.params(&format!("encoder.stage{i}"), &mut out);
        }
        self.projection.params("projection", &mut out);
        self.aux.params("aux", &mut out);
        out
    }

    pub fn params_mut(&mut self) -> Vec<ParamMut<'_, S>> {
        let mut out = Vec::new();
        for (i, st) in self.encoder.stages.iter_mut().enumerate() {
            st.params_mut(&format!("encoder.stage{i}"), &mut out);
        }
        self.projection.params_mut("projection", &mut out);
        self.aux.params_mut("aux", &mut out);
        out
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.values.len()).sum()
    }

    /// All parameters concatenated in [`Model::params`] order.
    pub fn flat_params(&self) -> Vec<S> {
        self.params().iter().flat_map(|p| p.values.iter().copied()).collect()
    }

    pub fn set_flat_params(&mut self, flat: &[S]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::Shape(format!(
                "expected {} parameters, got {}",
                self.param_count(),
                flat.len()
            )));
        }
        let mut off = 0;
        for p in self.params_mut() {
            let n = p.values.len();
            p.values.copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        Ok(())
    }

    /// Element-wise `self += other` over every parameter.
    pub fn accumulate(&mut self, other: &Self) {
        for (a, b) in self.params_mut().into_iter().zip(other.params()) {
            for (x, &y) in a.values.iter_mut().zip(b.values) {
                *x += y;
            }
        }
    }

    fn encoder_input(&self, img: &Image<S>) -> (Vec<S>, InputTrace<S>) {
        let mut x = img.to_planar();
        match self.config.encoder.input_norm {
            InputNorm::Fixed => {
                let mean = S::lit(INPUT_MEAN);
                let inv_std = S::lit(1.0 / INPUT_STD);
                x.iter_mut().for_each(|v| *v = (*v - mean) * inv_std);
                (x, InputTrace::Fixed)
            }
            InputNorm::CropMean => {
                let plane = img.height() * img.width();
                let n = S::from_usize_lossy(plane);
                let inv_std = S::lit(1.0 / INPUT_STD);
                for c in x.chunks_exact_mut(plane) {
                    let mean = c.iter().copied().sum::<S>() / n;
                    c.iter_mut().for_each(|v| *v = (*v - mean) * inv_std);
                }
                (x, InputTrace::CropMean)
            }
            InputNorm::PerCrop => {
                let plane = img.height() * img.width();
                let n = S::from_usize_lossy(plane);
                let inv_std = x
                    .chunks_exact_mut(plane)
                    .map(|c| {
                        let mean = c.iter().copied().sum::<S>() / n;
                        let var = c.iter().map(|&v| (v - mean) * (v - mean)).sum::<S>() / n;
                        let r = S::one() / (var + S::lit(INPUT_VAR_EPS)).sqrt();
                        c.iter_mut().for_each(|v| *v = (*v - mean) * r);
                        r
                    })
                    .collect();
                (x.clone(), InputTrace::PerCrop { y: x, inv_std })
            }
        }
    }

    /// Latent vector of one image (evaluation mode).
    pub fn encode_one(&self, img: &Image<S>) -> Result<Vec<S>> {
        check_image(img)?;
        let (x, _) = self.encoder_input(img);
        Ok(self.encoder.forward(x, img.height(), img.width()).0)
    }

    /// `n` images to `n x d_enc` latents.
    pub fn encode(&self, images: &[Image<S>]) -> Result<Vec<Vec<S>>> {
        images.par_iter().map(|img| self.encode_one(img)).collect()
    }

    fn check_latents(&self, h: &[Vec<S>]) -> Result<()> {
        if let Some(bad) = h.iter().find(|v| v.len() != self.d_enc()) {
            return Err(Error::Shape(format!(
                "latent of length {} where d_enc = {}",
                bad.len(),
                self.d_enc()
            )));
        }
        Ok(())
    }

    /// Projection head: `n x d_enc -> n x d_proj`.
    pub fn project(&self, h: &[Vec<S>]) -> Result<Vec<Vec<S>>> {
        self.check_latents(h)?;
        Ok(h.iter().map(|v| self.projection.forward(v).0).collect())
    }

    /// Auxiliary head: one unbounded scale estimate per latent.
    pub fn predict_scale(&self, h: &[Vec<S>]) -> Result<Vec<S>> {
        self.check_latents(h)?;
        Ok(h.iter().map(|v| self.aux.forward(v).0[0]).collect())
    }

    pub fn forward_item(&self, img: &Image<S>) -> Result<ItemTrace<S>> {
        check_image(img)?;
        let (x, input) = self.encoder_input(img);
        let (latent, encoder) = self.encoder.forward(x, img.height(), img.width());
        let (z, projection) = self.projection.forward(&latent);
        let (s, aux) = self.aux.forward(&latent);
        Ok(ItemTrace {
            input,
            encoder,
            latent,
            projection,
            aux,
            z,
            scale: s[0],
        })
    }

    /// Accumulate gradients for one item into `grad` given upstream
    /// gradients on its projection and scale outputs. Returns the gradient
    /// with respect to the `[0,1]` input pixels in planar layout when
    /// `need_input_grad` is set, otherwise an empty vector.
    pub fn backward_item(
        &self,
        trace: &ItemTrace<S>,
        dz: &[S],
        dscale: S,
        grad: &mut Self,
        train_encoder: bool,
        need_input_grad: bool,
    ) -> Vec<S> {
        let mut dh = self.projection.backward(&trace.projection, dz, &mut grad.projection);
        if dscale != S::zero() {
            let da = self.aux.backward(&trace.aux, &[dscale], &mut grad.aux);
            for (a, b) in dh.iter_mut().zip(da) {
                *a += b;
            }
        }
        if !(train_encoder || need_input_grad) {
            return Vec::new();
        }
        let mut scratch;
        let target = if train_encoder {
            &mut grad.encoder
        } else {
            scratch = self.encoder.zeros_like();
            &mut scratch
        };
        let dx = self.encoder.backward(&trace.encoder, &dh, target, need_input_grad);
        if !need_input_grad {
            return dx;
        }
        match &trace.input {
            InputTrace::Fixed => {
                let scale = S::lit(1.0 / INPUT_STD);
                dx.into_iter().map(|v| v * scale).collect()
            }
            InputTrace::CropMean => {
                let plane = dx.len() / 3;
                let n = S::from_usize_lossy(plane);
                let scale = S::lit(1.0 / INPUT_STD);
                let mut out = dx;
                for d in out.chunks_exact_mut(plane) {
                    let mean_d = d.iter().copied().sum::<S>() / n;
                    d.iter_mut().for_each(|v| *v = (*v - mean_d) * scale);
                }
                out
            }
            InputTrace::PerCrop { y, inv_std } => {
                let plane = y.len() / inv_std.len();
                let n = S::from_usize_lossy(plane);
                let mut out = dx;
                for ((d, y), &r) in out.chunks_exact_mut(plane).zip(y.chunks_exact(plane)).zip(inv_std) {
                    let mean_d = d.iter().copied().sum::<S>() / n;
                    let mean_dy = d.iter().zip(y).map(|(&a, &b)| a * b).sum::<S>() / n;
                    for (dv, &yv) in d.iter_mut().zip(y) {
                        *dv = r * (*dv - mean_d - yv * mean_dy);
                    }
                }
                out
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config(norm: HeadNorm) -> ModelConfig {
        ModelConfig {
            encoder: EncoderConfig {
                d_enc: 6,
                hidden_channels: vec![4, 5],
                ..EncoderConfig::default()
            },
            head: HeadConfig {
                d_hidden: 7,
                d_proj: 3,
                normalization: norm,
                ..HeadConfig::default()
            },
        }
    }

    #[test]
    fn shapes_and_determinism() {
        let m = Model::<f64>::new(tiny_config(HeadNorm::LayerNorm), 1).unwrap();
        let imgs: Vec<Image<f64>> = (0..4)
            .map(|s| crate::forge::scenes::synthetic_scene(s, 16, 16).cast())
            .collect();
        let h = m.encode(&imgs).unwrap();
        assert_eq!(h.len(), 4);
        assert!(h.iter().all(|v| v.len() == 6));
        assert_eq!(m.encode(&imgs[..1]).unwrap()[0], h[0]);
        let z = m.project(&h).unwrap();
        assert!(z.iter().all(|v| v.len() == 3));
        assert_eq!(m.predict_scale(&h).unwrap().len(), 4);
        assert!(m.project(&[vec![0.0; 5]]).is_err());
        assert!(m.encode(&[Image::new(4, 4, 1)]).is_err());
    }

    #[test]
    fn zero_latent_with_zero_bias_projects_to_zero() {
        let m = Model::<f64>::new(tiny_config(HeadNorm::None), 2).unwrap();
        let z = m.project(&[vec![0.0; 6]]).unwrap();
        assert!(z[0].iter().all(|&v| v == 0.0));
        assert_eq!(m.predict_scale(&[vec![0.0; 6]]).unwrap(), vec![0.0]);
    }

    #[test]
    fn identity_toy_head_evaluates_gelu() {
        let cfg = HeadConfig {
            d_hidden: 2,
            d_proj: 2,
            normalization: HeadNorm::None,
            norm_placement: NormPlacement::PreActivation,
            bias: false,
        };
        let mut rng = seed::rng(0);
        let mut head = Head::<f64> {
            fc1: Linear::init(2, 2, false, &mut rng),
            norm: None,
            fc2: Linear::init(2, 2, false, &mut rng),
            placement: cfg.norm_placement,
        };
        head.fc1.weight = vec![1.0, 0.0, 0.0, 1.0];
        head.fc2.weight = vec![1.0, 0.0, 0.0, 1.0];
        let (z, _) = head.forward(&[1.0, -1.0]);
        assert!((z[0] - 0.841_344_746_068_543).abs() < 1e-12);
        assert!((z[1] + 0.158_655_253_931_457).abs() < 1e-12);

        head = Head {
            fc1: Linear { in_dim: 1, out_dim: 1, weight: vec![2.0], bias: None },
            norm: None,
            fc2: Linear { in_dim: 1, out_dim: 1, weight: vec![3.0], bias: None },
            placement: NormPlacement::PreActivation,
        };
        let (s, _) = head.forward(&[1.0]);
        // 3 * GELU(2) = 6 * Phi(2)
        assert!((s[0] - 5.863_499_208_310_925).abs() < 1e-9, "{}", s[0]);
    }

    #[test]
    fn head_param_counts_match_layer_shapes() {
        let cfg = ModelConfig::default();
        let m = Model::<f32>::new(cfg.clone(), 0).unwrap();
        let (de, dh, dp) = (cfg.encoder.d_enc, cfg.head.d_hidden, cfg.head.d_proj);
        assert_eq!(m.projection.affine_param_count(), dh * de + dh + dp * dh + dp);
        assert_eq!(m.aux.affine_param_count(), dh * de + dh + dh + 1);
        assert_eq!(m.projection.fc1.weight.len(), dh * de);
        assert_eq!(m.projection.fc2.weight.len(), dp * dh);
        assert_eq!(m.aux.fc2.weight.len(), dh);
    }

    #[test]
    fn flat_params_round_trip() {
        let m = Model::<f64>::new(tiny_config(HeadNorm::LayerNorm), 3).unwrap();
        let mut n = Model::<f64>::new(tiny_config(HeadNorm::LayerNorm), 4).unwrap();
        assert_ne!(m, n);
        n.set_flat_params(&m.flat_params()).unwrap();
        assert_eq!(m, n);
    }
}
